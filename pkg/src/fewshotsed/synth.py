"""Synthetic demo corpus: two chirpy "species" in noise, with annotations.

Generates WAV files plus DCASE-style annotation CSVs and manifests, so the
whole pipeline (pretraining, adaptation, detection, scoring) can run without
any real bioacoustic data. Species A sweeps upward in a low band, species B
downward in a high band; per-event center frequencies and durations jitter
within the species band so classes have internal variety.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import chirp, get_window

from .dsp import SAMPLE_RATE

# "bands": species live in disjoint frequency bands (easy to tell apart
# even without labels). "directions": both species share one band and
# differ only in sweep direction, so class labels carry information that
# instance-level self-supervision does not recover.
SPECIES_LAYOUTS = {
    "bands": {
        "spA": (2100.0, 3300.0, "up"),
        "spB": (5700.0, 7500.0, "down"),
    },
    "directions": {
        "spA": (3400.0, 5600.0, "up"),
        "spB": (3400.0, 5600.0, "down"),
    },
}
EVENT_AMPLITUDE = 0.35
NOISE_STD = 0.03
DATASET_TAG = "SYN"


@dataclass(frozen=True)
class SynthCorpus:
    root: Path
    train_manifest: Path
    eval_manifest: Path
    classes: tuple[str, ...]


def _event_waveform(
    duration: float,
    species: str,
    rng: np.random.Generator,
    amplitude: float,
    bands: dict,
) -> np.ndarray:
    f_lo, f_hi, direction = bands[species]
    center = rng.uniform(f_lo + 300.0, f_hi - 300.0)
    half_sweep = rng.uniform(150.0, 350.0)
    f_start, f_end = center - half_sweep, center + half_sweep
    if direction == "down":
        f_start, f_end = f_end, f_start
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    tone = chirp(t, f0=f_start, f1=f_end, t1=duration, method="linear")
    return amplitude * tone * get_window("hann", n, fftbins=False)


def _render_file(
    length_s: float,
    events: list[tuple[float, float, str]],
    rng: np.random.Generator,
    amplitude: float,
    noise_std: float,
    bands: dict,
) -> np.ndarray:
    n = int(round(length_s * SAMPLE_RATE))
    x = rng.normal(0.0, noise_std, n)
    for onset, duration, species in events:
        lo = int(round(onset * SAMPLE_RATE))
        w = _event_waveform(duration, species, rng, amplitude, bands)
        hi = min(lo + len(w), n)
        x[lo:hi] += w[: hi - lo]
    return np.clip(x, -1.0, 1.0)


def _write_wav(path: Path, waveform: np.ndarray) -> None:
    wavfile.write(path, SAMPLE_RATE, (waveform * 32767.0).astype(np.int16))


def _write_annotation(path: Path, wav_name: str, class_name: str, events: list[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["Audiofilename", "Starttime", "Endtime", class_name])
        for onset, duration in events:
            writer.writerow([wav_name, f"{onset:.6f}", f"{onset + duration:.6f}", "POS"])


def _write_manifest(path: Path, rows: list[tuple[str, str, str]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file_id", "audio_path", "annotation_path", "dataset_tag"])
        for file_id, wav_name, csv_name in rows:
            writer.writerow([file_id, wav_name, csv_name, DATASET_TAG])


def make_demo_corpus(
    root: Path | str,
    seed: int = 0,
    n_train_files_per_class: int = 1,
    n_train_events: int = 12,
    n_eval_files: int = 2,
    n_query_events: int = 5,
    with_distractors: bool = False,
    amplitude: float = EVENT_AMPLITUDE,
    noise_std: float = NOISE_STD,
    species_layout: str = "bands",
) -> SynthCorpus:
    """Write a tiny two-species corpus under ``root`` and return its manifests.

    Each eval file opens with five support events of its target species,
    followed by ``n_query_events`` more after the support region (those are
    the detection targets). With ``with_distractors``, unannotated calls of
    the other species are inserted between the query events, so detectors
    must tell the species apart rather than just spot energy.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    bands = SPECIES_LAYOUTS[species_layout]
    classes = tuple(bands)

    train_rows = []
    for species in classes:
        for i in range(n_train_files_per_class):
            file_id = f"train_{species}_{i}.wav"
            events = []
            cursor = 0.6
            for _ in range(n_train_events):
                duration = rng.uniform(0.28, 0.36)
                events.append((cursor, duration))
                cursor += duration + rng.uniform(0.55, 0.85)
            waveform = _render_file(
                cursor + 0.4,
                [(o, d, species) for o, d in events],
                rng,
                amplitude,
                noise_std,
                bands,
            )
            _write_wav(root / file_id, waveform)
            csv_name = file_id.replace(".wav", ".csv")
            _write_annotation(root / csv_name, file_id, species, events)
            train_rows.append((file_id, file_id, csv_name))
    train_manifest = root / "train_manifest.csv"
    _write_manifest(train_manifest, train_rows)

    eval_rows = []
    for i in range(n_eval_files):
        species = classes[i % len(classes)]
        other = classes[(i + 1) % len(classes)]
        file_id = f"eval_{i}.wav"
        events = []
        cursor = 0.8
        for _ in range(5):  # support shots
            duration = rng.uniform(0.28, 0.36)
            events.append((cursor, duration))
            cursor += duration + rng.uniform(1.0, 1.3)
        cursor += 0.8
        distractors = []
        for _ in range(n_query_events):
            duration = rng.uniform(0.28, 0.36)
            events.append((cursor, duration))
            step = duration + rng.uniform(1.1, 1.5)
            if with_distractors:
                d_duration = rng.uniform(0.28, 0.36)
                distractors.append((cursor + duration + (step - duration) / 2 - d_duration / 2, d_duration))
            cursor += step
        all_events = [(o, d, species) for o, d in events] + [
            (o, d, other) for o, d in distractors
        ]
        waveform = _render_file(cursor + 0.6, all_events, rng, amplitude, noise_std, bands)
        _write_wav(root / file_id, waveform)
        csv_name = file_id.replace(".wav", ".csv")
        _write_annotation(root / csv_name, file_id, species, events)
        eval_rows.append((file_id, file_id, csv_name))
    eval_manifest = root / "eval_manifest.csv"
    _write_manifest(eval_manifest, eval_rows)

    return SynthCorpus(
        root=root,
        train_manifest=train_manifest,
        eval_manifest=eval_manifest,
        classes=classes,
    )
