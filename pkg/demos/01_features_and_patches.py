"""Walk through the feature pipeline: waveform -> log-mel -> training patches.

Generates a short two-species recording, computes the shared log-mel
representation (22.05 kHz, FFT 512, hop 128, 128 bands), cuts one annotated
event into 200 ms patches with 100 ms overlap, and saves a figure showing
each stage. Run from the repository root:

    python demos/01_features_and_patches.py
"""

import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fewshotsed.corpus import load_manifest, read_annotations, read_audio
from fewshotsed.dsp import (
    HOP,
    SAMPLE_RATE,
    chunk_patches,
    mel_spectrogram,
    resample,
    segment_melspec,
)
from fewshotsed.synth import make_demo_corpus

out_dir = Path(__file__).resolve().parent / "output"
out_dir.mkdir(exist_ok=True)

corpus = make_demo_corpus(Path(tempfile.mkdtemp()) / "data", seed=0, n_train_events=6)
manifest = load_manifest(corpus.train_manifest)[0]
print(f"demo file: {manifest.file_id} (dataset tag {manifest.dataset_tag})")

waveform, native_rate = read_audio(manifest.audio_path)
waveform = resample(waveform, native_rate)
print(f"waveform: {len(waveform)} samples at {SAMPLE_RATE} Hz "
      f"({len(waveform) / SAMPLE_RATE:.1f} s)")

mel = mel_spectrogram(waveform)
print(f"log-mel spectrogram: {mel.values.shape[0]} bands x {mel.n_frames} frames "
      f"(hop {HOP} samples = {HOP / SAMPLE_RATE * 1000:.1f} ms)")

events = read_annotations(manifest)
first = events[0]
print(f"first annotated event: [{first.onset:.2f}, {first.offset:.2f}] s, "
      f"class {first.class_name!r}, marker {first.marker}")

segment = segment_melspec(waveform, first.onset, first.offset)
patches = chunk_patches(segment, class_index=0, file_id=manifest.file_id)
print(f"event spans {segment.n_frames} frames -> {len(patches)} patch(es) of 128 x 34")
for p in patches:
    print(f"  patch at frame {p.start_frame}: min {p.values.min():.1f}, "
          f"max {p.values.max():.1f} (min-max normalized)")

fig, axes = plt.subplots(1, 2 + len(patches), figsize=(14, 4))
axes[0].plot(np.arange(len(waveform)) / SAMPLE_RATE, waveform, lw=0.2)
axes[0].set_title("waveform")
axes[0].set_xlabel("s")
axes[1].imshow(mel.values, origin="lower", aspect="auto", cmap="magma")
axes[1].set_title("log-mel")
axes[1].set_xlabel("frame")
for ax, p in zip(axes[2:], patches):
    ax.imshow(p.values, origin="lower", aspect="auto", cmap="magma")
    ax.set_title(f"patch @{p.start_frame}")
fig.tight_layout()
figure_path = out_dir / "01_features.png"
fig.savefig(figure_path, dpi=110)
print(f"figure saved to {figure_path}")
