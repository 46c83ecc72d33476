"""Show each spectrogram transform and the two-view composition.

Every transform keeps the 128 x 34 patch shape. View 1 mixes in a random
batch partner before the shared chain (frequency shift, crop + resize,
gain, noise); view 2 skips the mixing. Saves a comparison figure.

    python demos/02_augmentation_views.py
"""

import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fewshotsed.augment import (
    AugmentConfig,
    awgn,
    crop_resize,
    freq_shift,
    mix,
    power_gain,
    two_views,
)
from fewshotsed.corpus import load_manifest, read_audio
from fewshotsed.dsp import chunk_patches, mel_spectrogram, resample
from fewshotsed.synth import make_demo_corpus

out_dir = Path(__file__).resolve().parent / "output"
out_dir.mkdir(exist_ok=True)
rng = np.random.default_rng(2)

corpus = make_demo_corpus(Path(tempfile.mkdtemp()) / "data", seed=2, n_train_events=6)
manifests = load_manifest(corpus.train_manifest)
patches = []
for class_index, manifest in enumerate(manifests):
    waveform, rate = read_audio(manifest.audio_path)
    mel = mel_spectrogram(resample(waveform, rate))
    patches.extend(chunk_patches(mel, class_index, file_id=manifest.file_id))
print(f"collected {len(patches)} patches from {len(manifests)} files")

x = patches[3].values
partner = patches[-1].values
stages = [
    ("input", x),
    ("mix(a=0.7)", mix(x, partner, 0.7)),
    ("freq_shift(k=6)", freq_shift(x, 6)),
    ("crop+resize(0.6)", crop_resize(x, 0.6, 4)),
    ("gain(0.75)", power_gain(x, 0.75)),
    ("noise(s=0.08)", awgn(x, 0.08, rng)),
]

fig, axes = plt.subplots(2, len(stages), figsize=(16, 5))
for ax, (name, values) in zip(axes[0], stages):
    ax.imshow(values, origin="lower", aspect="auto", cmap="magma")
    ax.set_title(name, fontsize=9)

pair = two_views(patches[:8], AugmentConfig(rng_seed=7))
print(f"two-view batch: view1 {pair.view1.shape}, view2 {pair.view2.shape}, "
      f"labels {pair.labels.tolist()}")
for ax, (name, values) in zip(
    axes[1],
    [("original", patches[3].values), ("view 1 (mixed)", pair.view1[3]),
     ("view 2", pair.view2[3]), ("original", patches[4].values),
     ("view 1 (mixed)", pair.view1[4]), ("view 2", pair.view2[4])],
):
    ax.imshow(values, origin="lower", aspect="auto", cmap="magma")
    ax.set_title(name, fontsize=9)
fig.tight_layout()
figure_path = out_dir / "02_augmentations.png"
fig.savefig(figure_path, dpi=110)
print(f"figure saved to {figure_path}")

identity = two_views(patches[:4], AugmentConfig.identity())
print("identity-parameter chain reproduces inputs bitwise:",
      all(np.array_equal(identity.view1[i], patches[i].values) for i in range(4)))
