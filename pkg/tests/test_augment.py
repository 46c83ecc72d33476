import numpy as np
import pytest

from fewshotsed.augment import (
    AugmentConfig,
    awgn,
    crop_resize,
    freq_shift,
    mix,
    power_gain,
    random_crop_resize,
    single_views,
    two_views,
)
from fewshotsed.dsp import MelPatch, minmax_normalize


def _patches(n=3, frames=34, seed=0):
    rng = np.random.default_rng(seed)
    return [
        MelPatch(minmax_normalize(rng.normal(size=(128, frames))), class_index=100 + i)
        for i in range(n)
    ]


class TestMix:
    def test_alpha_one_is_x1(self):
        x1, x2 = _patches(2)[0].values, _patches(2, seed=1)[0].values
        np.testing.assert_array_equal(mix(x1, x2, 1.0), x1)

    def test_alpha_zero_is_x2(self):
        x1, x2 = _patches(2)[0].values, _patches(2, seed=1)[0].values
        np.testing.assert_array_equal(mix(x1, x2, 0.0), x2)

    def test_arithmetic(self):
        x1 = np.array([[0.0, 2.0], [4.0, 6.0]], dtype=np.float32)
        x2 = np.array([[2.0, 0.0], [0.0, 2.0]], dtype=np.float32)
        np.testing.assert_allclose(mix(x1, x2, 0.5), [[1.0, 1.0], [2.0, 4.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mix(np.zeros((2, 3)), np.zeros((3, 2)), 0.5)


class TestFreqShift:
    def test_zero_is_identity(self):
        x = _patches(1)[0].values
        np.testing.assert_array_equal(freq_shift(x, 0), x)

    def test_fill_rule(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]], dtype=np.float32)
        np.testing.assert_array_equal(freq_shift(x, 2), [[1.0], [1.0], [1.0], [2.0]])

    def test_composition(self):
        # compose-and-compare oracle: ten single-band shifts equal one
        # ten-band shift on the surviving rows
        x = _patches(1)[0].values
        ten_times = x
        for _ in range(10):
            ten_times = freq_shift(ten_times, 1)
        once = freq_shift(x, 10)
        np.testing.assert_array_equal(ten_times[10:], once[10:])

    def test_out_of_range(self):
        x = _patches(1)[0].values
        with pytest.raises(ValueError):
            freq_shift(x, 129)
        with pytest.raises(ValueError):
            freq_shift(x, -1)


class TestCropResize:
    def test_full_fraction_identity(self):
        x = _patches(1)[0].values
        np.testing.assert_array_equal(crop_resize(x, 1.0, 0), x)
        np.testing.assert_array_equal(random_crop_resize(x, 1.0), x)

    def test_linear_ramp_stays_linear(self):
        # closed-form oracle: linear data is invariant under linear
        # interpolation between the cropped endpoints
        T = 34
        ramp = np.tile(np.arange(T, dtype=np.float32) * 0.5 + 1.0, (128, 1))
        for frac, start in ((0.6, 3), (0.75, 0), (0.9, 2)):
            out = crop_resize(ramp, frac, start)
            L = round(frac * T)
            expected = np.tile(
                (start + np.linspace(0.0, L - 1.0, T)).astype(np.float32) * 0.5 + 1.0,
                (128, 1),
            )
            np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_half_crop_shape(self):
        x = _patches(1)[0].values
        out = crop_resize(x, 0.5, 4)
        assert out.shape == x.shape == (128, 34)

    def test_too_short_crop(self):
        with pytest.raises(ValueError):
            crop_resize(np.zeros((4, 34), dtype=np.float32), 0.02, 0)


class TestPowerGain:
    def test_identity(self):
        x = _patches(1)[0].values
        np.testing.assert_array_equal(power_gain(x, 1.0), x)

    def test_scale(self):
        np.testing.assert_allclose(power_gain(np.ones((3, 3), np.float32), 0.75), 0.75)

    def test_argmax_invariant(self):
        x = _patches(1)[0].values
        for c in (0.75, 0.9, 0.99):
            assert np.argmax(power_gain(x, c)) == np.argmax(x)


class TestAwgn:
    def test_sigma_zero_identity(self):
        x = _patches(1)[0].values
        np.testing.assert_array_equal(awgn(x, 0.0), x)

    def test_mean_and_variance(self):
        rng = np.random.default_rng(11)
        x = np.zeros((1000, 1000), dtype=np.float32)
        sigma = 0.1
        noise = awgn(x, sigma, rng) - x
        assert abs(noise.mean()) <= 3 * sigma / 1000  # CLT bound on 1e6 cells
        assert abs(noise.var() - sigma**2) / sigma**2 < 0.05

    def test_fresh_draws_per_call(self):
        rng = np.random.default_rng(12)
        x = _patches(1)[0].values
        assert not np.array_equal(awgn(x, 0.05, rng), awgn(x, 0.05, rng))


class TestTwoViews:
    def test_identity_chain_bitwise(self):
        patches = _patches(3)
        pair = two_views(patches, AugmentConfig.identity())
        for i, p in enumerate(patches):
            np.testing.assert_array_equal(pair.view1[i], p.values)
            np.testing.assert_array_equal(pair.view2[i], p.values)

    def test_seeded_reproducibility(self):
        patches = _patches(4)
        cfg = AugmentConfig(rng_seed=42)
        a = two_views(patches, cfg)
        b = two_views(patches, cfg)
        np.testing.assert_array_equal(a.view1, b.view1)
        np.testing.assert_array_equal(a.view2, b.view2)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_batch_shape_and_sentinel_labels(self):
        patches = _patches(3)
        pair = two_views(patches, AugmentConfig(rng_seed=0))
        assert pair.view1.shape == pair.view2.shape == (3, 128, 34)
        np.testing.assert_array_equal(pair.labels, [100, 101, 102])

    def test_shape_preserved_by_every_transform(self):
        x = _patches(1)[0].values
        rng = np.random.default_rng(13)
        outputs = [
            mix(x, _patches(1, seed=9)[0].values, 0.7),
            freq_shift(x, 5),
            random_crop_resize(x, 0.6, rng),
            power_gain(x, 0.8),
            awgn(x, 0.1, rng),
        ]
        assert all(o.shape == (128, 34) for o in outputs)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            two_views([], AugmentConfig())

    def test_views_differ_under_randomness(self):
        patches = _patches(3)
        pair = two_views(patches, AugmentConfig(rng_seed=5))
        assert not np.array_equal(pair.view1, pair.view2)

    def test_single_views_shape(self):
        views = single_views(_patches(3), AugmentConfig(rng_seed=1))
        assert views.shape == (3, 128, 34)

    def test_dropping_transform_consumes_no_draws(self):
        # with noise disabled the remaining chain must match a config whose
        # noise range is degenerate
        patches = _patches(3)
        dropped = two_views(patches, AugmentConfig(rng_seed=3).without("noise"))
        degenerate = two_views(patches, AugmentConfig(rng_seed=3, noise_std_max=0.0))
        assert not np.array_equal(dropped.view1, degenerate.view1)  # draw streams differ
        assert dropped.view1.shape == degenerate.view1.shape


class TestAugmentConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(crop_min_frac=0.0)
        with pytest.raises(ValueError):
            AugmentConfig(crop_min_frac=0.9, crop_max_frac=0.8)
        with pytest.raises(ValueError):
            AugmentConfig(gain_min=0.0)
        with pytest.raises(ValueError):
            AugmentConfig(noise_std_max=-0.1)
        with pytest.raises(ValueError):
            AugmentConfig(disabled=("warp",))

    def test_without(self):
        cfg = AugmentConfig().without("mixing").without("noise").without("noise")
        assert cfg.disabled == ("mixing", "noise")
        assert not cfg.enabled("mixing") and cfg.enabled("gain")
