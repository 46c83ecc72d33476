import numpy as np
import pytest
import torch

from fewshotsed.augment import AugmentConfig
from fewshotsed.network import Encoder
from fewshotsed.training import (
    Checkpoint,
    PretrainConfig,
    cosine_lr,
    load_checkpoint,
    make_batches,
    pretrain,
    save_checkpoint,
    sgd_param_groups,
    write_loss_trace,
)

from conftest import band_patch_set


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 50, 0.01) == pytest.approx(0.01)
        assert cosine_lr(25, 50, 0.01) == pytest.approx(0.005)
        assert cosine_lr(50, 50, 0.01) == pytest.approx(0.0, abs=1e-18)

    def test_monotone_decreasing(self):
        values = [cosine_lr(s, 50, 0.01) for s in range(51)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 0.01)
        with pytest.raises(ValueError):
            cosine_lr(51, 50, 0.01)


class TestMakeBatches:
    def test_sizes(self):
        rng = np.random.default_rng(0)
        batches = list(make_batches(list(range(300)), 128, rng))
        assert [len(b) for b in batches] == [128, 128, 44]

    def test_seed_determinism(self):
        items = list(range(57))
        a = [b for b in make_batches(items, 10, np.random.default_rng(5))]
        b = [b for b in make_batches(items, 10, np.random.default_rng(5))]
        assert a == b

    def test_multiset_equality(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 400))
            size = int(rng.integers(1, 150))
            items = list(rng.integers(0, 10, n))
            batches = list(make_batches(items, size, rng))
            assert sorted(x for b in batches for x in b) == sorted(items)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            list(make_batches([], 4, np.random.default_rng(0)))


class TestPretrainConfig:
    def test_objective_defaults(self):
        assert PretrainConfig(objective="scl").epochs == 50
        assert PretrainConfig(objective="scl").lr0 == 0.01
        assert PretrainConfig(objective="simclr").epochs == 100
        assert PretrainConfig(objective="simclr").lr0 == 0.01
        assert PretrainConfig(objective="ce").epochs == 50
        assert PretrainConfig(objective="ce").lr0 == 0.0001

    def test_explicit_overrides_survive(self):
        cfg = PretrainConfig(objective="simclr", epochs=7, lr0=0.5)
        assert cfg.epochs == 7 and cfg.lr0 == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            PretrainConfig(epochs=0)
        with pytest.raises(ValueError):
            PretrainConfig(batch_size=1)  # contrastive default objective
        with pytest.raises(ValueError):
            PretrainConfig(objective="triplet")
        with pytest.raises(ValueError):
            PretrainConfig(tau=0.0)


def test_sgd_param_groups_excludes_norms_and_biases():
    torch.manual_seed(0)
    encoder = Encoder()
    groups = sgd_param_groups([encoder], weight_decay=1e-4)
    assert groups[0]["weight_decay"] == 1e-4
    assert groups[1]["weight_decay"] == 0.0
    decay_ids = {id(p) for p in groups[0]["params"]}
    no_decay_ids = {id(p) for p in groups[1]["params"]}
    bn_ids = {
        id(p)
        for m in encoder.modules()
        if isinstance(m, torch.nn.BatchNorm2d)
        for p in m.parameters()
    }
    for name, p in encoder.named_parameters():
        if id(p) in bn_ids or name.endswith("bias"):
            assert id(p) in no_decay_ids, name
        else:
            assert id(p) in decay_ids, name
    assert decay_ids | no_decay_ids == {id(p) for p in encoder.parameters()}
    assert not decay_ids & no_decay_ids


class TestPretrainRuns:
    def test_loss_decreases_on_separable_fixture(self, synthetic_pretrained):
        trace = synthetic_pretrained.loss_trace
        assert len(trace) == 10
        assert trace[-1][1] < trace[0][1]

    def test_class_structure_emerges(self, synthetic_pretrained):
        patches = band_patch_set(32, seed=7)
        x = torch.from_numpy(np.stack([p.values for p in patches]))
        labels = np.array([p.class_index for p in patches])
        encoder = synthetic_pretrained.encoder
        encoder.eval()
        with torch.no_grad():
            features = torch.nn.functional.normalize(encoder(x), dim=1).numpy()
        sims = features @ features.T
        same_mask = np.equal.outer(labels, labels) & ~np.eye(len(labels), dtype=bool)
        margin = sims[same_mask].mean() - sims[~np.equal.outer(labels, labels)].mean()
        assert margin > 0.1

    def test_projector_present_for_contrastive(self, synthetic_pretrained):
        assert synthetic_pretrained.projector is not None
        assert synthetic_pretrained.ce_head is None

    def test_seeded_runs_identical(self):
        patches = band_patch_set(8, seed=3)
        config = PretrainConfig(
            objective="scl", batch_size=16, epochs=3, seed=11, strict_deterministic=True
        )
        a = pretrain(patches, config, AugmentConfig(rng_seed=11))
        b = pretrain(patches, config, AugmentConfig(rng_seed=11))
        assert a.loss_trace == b.loss_trace
        for pa, pb in zip(a.encoder.parameters(), b.encoder.parameters()):
            assert torch.equal(pa, pb)

    def test_ce_objective_builds_vocabulary_head(self):
        patches = band_patch_set(6, seed=4)
        config = PretrainConfig(objective="ce", batch_size=12, epochs=1, seed=0)
        result = pretrain(patches, config)
        assert result.ce_head is not None and result.projector is None
        assert result.ce_head.linear.out_features == 2

    def test_non_finite_loss_aborts_with_diagnostic(self):
        patches = band_patch_set(4, seed=5)
        config = PretrainConfig(objective="ce", batch_size=8, epochs=3, lr0=1e18, seed=0)
        with pytest.raises(RuntimeError, match="epoch"):
            pretrain(patches, config)

    def test_empty_patches_rejected(self):
        with pytest.raises(ValueError):
            pretrain([], PretrainConfig())


class TestCheckpoint:
    def test_round_trip_bitwise(self, synthetic_pretrained, tmp_path):
        path = tmp_path / "ckpt"
        save_checkpoint(synthetic_pretrained, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, Checkpoint)
        for (na, a), (nb, b) in zip(
            synthetic_pretrained.encoder.state_dict().items(),
            loaded.encoder.state_dict().items(),
        ):
            assert na == nb
            assert torch.equal(a, b)
        # contrastive checkpoints carry the projector, though adaptation
        # only consumes the encoder
        assert loaded.projector is not None
        for a, b in zip(
            synthetic_pretrained.projector.state_dict().values(),
            loaded.projector.state_dict().values(),
        ):
            assert torch.equal(a, b)
        assert loaded.pretrain_config == synthetic_pretrained.config

    def test_truncated_file_errors(self, synthetic_pretrained, tmp_path):
        path = tmp_path / "ckpt"
        save_checkpoint(synthetic_pretrained, path)
        path.write_bytes(path.read_bytes()[:200])
        with pytest.raises(OSError):
            load_checkpoint(path)

    def test_hash_mismatch_errors(self, synthetic_pretrained, tmp_path):
        path = tmp_path / "ckpt"
        save_checkpoint(synthetic_pretrained, path)
        payload = torch.load(path, map_location="cpu", weights_only=True)
        payload["pretrain_config"]["tau"] = 0.5
        torch.save(payload, path)
        with pytest.raises(ValueError, match="hash mismatch"):
            load_checkpoint(path)

    def test_version_mismatch_errors(self, synthetic_pretrained, tmp_path):
        path = tmp_path / "ckpt"
        save_checkpoint(synthetic_pretrained, path)
        payload = torch.load(path, map_location="cpu", weights_only=True)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


def test_write_loss_trace(tmp_path):
    path = tmp_path / "trace.csv"
    write_loss_trace([(0, 2.5, 0.01), (1, 1.25, 0.005)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,lr"
    assert lines[1] == "0,2.5,0.01"
    assert len(lines) == 3
