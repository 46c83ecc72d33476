import numpy as np
import pytest
import torch

from fewshotsed.augment import AugmentConfig
from fewshotsed.dsp import MelPatch, minmax_normalize
from fewshotsed.training import PretrainConfig, PretrainResult, pretrain


def band_patch(
    rng: np.random.Generator,
    band: tuple[int, int],
    class_index: int,
    frames: int = 34,
    noise: float = 0.05,
) -> MelPatch:
    """Synthetic normalized patch with energy concentrated in one band range."""
    values = rng.normal(0.0, noise, (128, frames))
    values[band[0] : band[1]] += 1.0
    return MelPatch(minmax_normalize(values.astype(np.float32)), class_index)


def band_patch_set(
    n_per_class: int, seed: int = 0, frames: int = 34
) -> list[MelPatch]:
    """Two separable synthetic classes: low-band (0) and high-band (1) energy."""
    rng = np.random.default_rng(seed)
    low = [band_patch(rng, (10, 40), 0, frames) for _ in range(n_per_class)]
    high = [band_patch(rng, (80, 110), 1, frames) for _ in range(n_per_class)]
    return low + high


@pytest.fixture(scope="session")
def synthetic_pretrained() -> PretrainResult:
    """One contrastive pretraining run on the 64-patch two-class fixture.

    Shared session-wide because a 10-epoch run takes minutes on CPU; tests
    must not mutate the returned modules (adaptation deep-copies them).
    """
    patches = band_patch_set(32, seed=7)
    config = PretrainConfig(objective="scl", batch_size=64, epochs=10, lr0=0.002, seed=7)
    return pretrain(patches, config, AugmentConfig(rng_seed=7))
