"""Stochastic spectrogram augmentations and the two-view batch composer.

Six transforms are applied sequentially in a fixed order: batch mixing,
frequency shift, time crop + resize, power gain, additive Gaussian noise.
The composer produces two views per patch; mixing is applied to the first
view only. All transforms are pure given an explicit numpy Generator, so
batch workers can run them concurrently on independent seeded streams.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dsp import MelPatch

TRANSFORMS = ("mixing", "freq_shift", "crop_resize", "gain", "noise")


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for the augmentation chain.

    ``disabled`` lists transforms skipped entirely (used by the drop-one
    ablation); a disabled transform consumes no random draws.
    """

    mix_beta_a: float = 5.0
    mix_beta_b: float = 2.0
    freq_shift_max: int = 10
    crop_min_frac: float = 0.6
    crop_max_frac: float = 1.0
    gain_min: float = 0.75
    gain_max: float = 1.0
    noise_std_max: float = 0.1
    rng_seed: int = 0
    disabled: tuple[str, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.crop_min_frac <= self.crop_max_frac <= 1.0):
            raise ValueError(
                f"invalid crop fractions [{self.crop_min_frac}, {self.crop_max_frac}]"
            )
        if not (0.0 < self.gain_min <= self.gain_max <= 1.0):
            raise ValueError(f"invalid gain bounds [{self.gain_min}, {self.gain_max}]")
        if self.noise_std_max < 0.0:
            raise ValueError(f"negative noise_std_max {self.noise_std_max}")
        if self.mix_beta_a <= 0.0 or self.mix_beta_b <= 0.0:
            raise ValueError("Beta parameters must be positive")
        if not (0 <= self.freq_shift_max):
            raise ValueError(f"negative freq_shift_max {self.freq_shift_max}")
        unknown = set(self.disabled) - set(TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms in disabled: {sorted(unknown)}")

    def without(self, transform: str) -> "AugmentConfig":
        """Copy of this config with one transform disabled."""
        if transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {transform!r}")
        return replace(self, disabled=tuple(dict.fromkeys(self.disabled + (transform,))))

    def enabled(self, transform: str) -> bool:
        return transform not in self.disabled

    @classmethod
    def identity(cls, rng_seed: int = 0) -> "AugmentConfig":
        """Degenerate parameters that make the whole chain the identity map."""
        return cls(
            freq_shift_max=0,
            crop_min_frac=1.0,
            crop_max_frac=1.0,
            gain_min=1.0,
            gain_max=1.0,
            noise_std_max=0.0,
            rng_seed=rng_seed,
            disabled=("mixing",),
        )


@dataclass(frozen=True)
class ViewPairBatch:
    """Two augmented views per original patch, with the original labels."""

    view1: np.ndarray  # [B, n_mels, T] float32
    view2: np.ndarray  # [B, n_mels, T] float32
    labels: np.ndarray  # [B] int64

    def __post_init__(self):
        if not (self.view1.shape == self.view2.shape and len(self.labels) == len(self.view1)):
            raise ValueError("view/label batch sizes disagree")


def mix(x1: np.ndarray, x2: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha*x1 + (1-alpha)*x2; the result keeps x1's label."""
    if x1.shape != x2.shape:
        raise ValueError(f"shape mismatch {x1.shape} vs {x2.shape}")
    a = np.float32(alpha)
    return a * x1 + (np.float32(1.0) - a) * x2


def freq_shift(x: np.ndarray, k: int) -> np.ndarray:
    """Shift all bands up by k; vacated low bands are filled with the input min."""
    n_bands = x.shape[0]
    if k < 0 or k > n_bands:
        raise ValueError(f"shift {k} out of range for {n_bands} bands")
    if k == 0:
        return x.copy()
    out = np.empty_like(x)
    out[k:] = x[: n_bands - k]
    out[:k] = x.min()
    return out


def crop_resize(x: np.ndarray, frac: float, start: int) -> np.ndarray:
    """Crop round(frac*T) frames at ``start``, then linearly resize back to T."""
    n_frames = x.shape[1]
    crop_len = int(round(frac * n_frames))
    if crop_len < 2:
        raise ValueError(f"crop of {crop_len} frames is shorter than 2")
    if start < 0 or start + crop_len > n_frames:
        raise ValueError(f"crop [{start}, {start + crop_len}) outside {n_frames} frames")
    if crop_len == n_frames:
        return x.copy()
    crop = x[:, start : start + crop_len]
    positions = np.linspace(0.0, crop_len - 1.0, n_frames)
    lo = np.floor(positions).astype(np.intp)
    hi = np.minimum(lo + 1, crop_len - 1)
    w = (positions - lo).astype(np.float32)
    return crop[:, lo] * (1.0 - w) + crop[:, hi] * w


def random_crop_resize(x: np.ndarray, frac: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """crop_resize at a uniformly random start position."""
    if rng is None:
        rng = np.random.default_rng()
    crop_len = int(round(frac * x.shape[1]))
    start = int(rng.integers(0, x.shape[1] - crop_len + 1))
    return crop_resize(x, frac, start)


def power_gain(x: np.ndarray, c: float) -> np.ndarray:
    """Elementwise attenuation by a coefficient c."""
    return x * np.float32(c)


def awgn(x: np.ndarray, sigma: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add i.i.d. Gaussian noise of standard deviation sigma, fresh per call."""
    if sigma == 0.0:
        return x.copy()
    if rng is None:
        rng = np.random.default_rng()
    noise = rng.standard_normal(x.shape, dtype=np.float32) * np.float32(sigma)
    return x + noise


def _chain(
    x: np.ndarray,
    batch_values: list[np.ndarray],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    with_mixing: bool,
) -> np.ndarray:
    out = x
    if with_mixing and cfg.enabled("mixing"):
        partner = int(rng.integers(0, len(batch_values)))  # self allowed
        alpha = float(rng.beta(cfg.mix_beta_a, cfg.mix_beta_b))
        out = mix(out, batch_values[partner], alpha)
    if cfg.enabled("freq_shift"):
        k = int(rng.integers(0, cfg.freq_shift_max + 1))
        out = freq_shift(out, k)
    if cfg.enabled("crop_resize"):
        frac = float(rng.uniform(cfg.crop_min_frac, cfg.crop_max_frac))
        out = random_crop_resize(out, frac, rng)
    if cfg.enabled("gain"):
        c = float(rng.uniform(cfg.gain_min, cfg.gain_max))
        out = power_gain(out, c)
    if cfg.enabled("noise"):
        sigma = float(rng.uniform(0.0, cfg.noise_std_max))
        out = awgn(out, sigma, rng)
    return np.ascontiguousarray(out, dtype=np.float32)


def single_views(
    batch: list[MelPatch], cfg: AugmentConfig, rng: np.random.Generator | None = None
) -> np.ndarray:
    """One augmented view per patch (full chain, mixing included)."""
    if not batch:
        raise ValueError("empty batch")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    values = [p.values for p in batch]
    return np.stack([_chain(v, values, cfg, rng, with_mixing=True) for v in values])


def two_views(
    batch: list[MelPatch], cfg: AugmentConfig, rng: np.random.Generator | None = None
) -> ViewPairBatch:
    """Compose the contrastive view pair for a batch of patches.

    For each patch, view 1 runs the full chain (mixing with a random batch
    partner first) and view 2 runs the same chain without mixing; all
    parameters are drawn independently per patch and per view. Labels are
    copied from the originals. When no Generator is passed, a fresh one is
    seeded from cfg.rng_seed, so repeated calls are bit-identical.
    """
    if not batch:
        raise ValueError("empty batch")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    values = [p.values for p in batch]
    view1 = []
    view2 = []
    for v in values:
        view1.append(_chain(v, values, cfg, rng, with_mixing=True))
        view2.append(_chain(v, values, cfg, rng, with_mixing=False))
    labels = np.asarray([p.class_index for p in batch], dtype=np.int64)
    return ViewPairBatch(view1=np.stack(view1), view2=np.stack(view2), labels=labels)
