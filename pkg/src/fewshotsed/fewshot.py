"""Per-file few-shot adaptation: episodes, classifier fitting, sliding-window
detection and prediction CSV output.

Each audio file is an independent problem. The first five positive events
define the support set and the detection window length; negatives are mined
from the un-annotated gaps before the end of the fifth shot. A binary
classifier (plus optionally the last encoder blocks) is fitted on those
patches, then slid over the remainder of the file; events are read off the
window-label transitions.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import crop_resize
from .corpus import AnnotatedEvent, first_five_shots
from .dsp import (
    SAMPLE_RATE,
    MelPatch,
    adaptive_window_length,
    chunk_frames,
    frame_to_seconds,
    mel_spectrogram,
    minmax_normalize,
    seconds_to_frame,
    segment_melspec,
)
from .network import ClassifierHead, DetectionModel, Encoder, REGIMES, parameter_groups, set_adaptation_mode
from .objectives import ce_loss

logger = logging.getLogger(__name__)

ADAPT_CROP_MIN_FRAC = 0.9
ADAPT_CROP_MAX_FRAC = 1.0
FULL_BATCH_LIMIT = 256
MINI_BATCH_SIZE = 64

_REGIME_LR = {"frozen": 0.01, "ft1": 0.001, "ft2": 0.001, "ftall": 0.001}
_REGIME_EPOCHS = {"frozen": 20, "ft1": 40, "ft2": 40, "ftall": 40}


@dataclass
class AdaptConfig:
    """Adaptation regime; learning rate and epochs are fixed by the regime
    (Adam, 0.01/20 epochs frozen, 0.001/40 epochs for fine-tuning)."""

    regime: str = "frozen"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")

    @property
    def lr(self) -> float:
        return _REGIME_LR[self.regime]

    @property
    def epochs(self) -> int:
        return _REGIME_EPOCHS[self.regime]


@dataclass
class Episode:
    """One per-file adaptation problem built from the five support shots."""

    file_id: str
    class_name: str
    positive_patches: list[MelPatch]
    negative_patches: list[MelPatch]
    window_frames: int
    query_start: float
    negative_gaps: list[tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class PredictedEvent:
    file_id: str
    onset: float
    offset: float

    def __post_init__(self):
        if self.offset <= self.onset:
            raise ValueError(f"empty predicted event [{self.onset}, {self.offset}]")


@dataclass
class AdaptResult:
    model: DetectionModel
    final_accuracy: float


def support_end(events: list[AnnotatedEvent], target_class: str) -> float:
    """End of the support region: the latest offset among the five shots."""
    return max(s.offset for s in first_five_shots(events, target_class))


def subtract_intervals(
    span: tuple[float, float], holes: list[tuple[float, float]]
) -> list[tuple[float, float]]:
    """Portions of span not covered by any hole, in increasing order."""
    gaps = []
    cursor = span[0]
    for lo, hi in sorted(holes):
        if hi <= cursor:
            continue
        if lo >= span[1]:
            break
        if lo > cursor:
            gaps.append((cursor, min(lo, span[1])))
        cursor = max(cursor, hi)
    if cursor < span[1]:
        gaps.append((cursor, span[1]))
    return gaps


def build_episode(
    waveform: np.ndarray,
    annotations: list[AnnotatedEvent],
    target_class: str,
    file_id: str = "",
) -> Episode:
    """Assemble support patches for one file (waveform already at 22.05 kHz).

    Positive patches come from the five shots, chunked at the episode window
    length with half-window hop (short shots padded). Negative patches come
    from the gaps within [0, query_start] left after removing every POS and
    UNK interval; gaps shorter than one window are skipped. If no gap yields
    a patch, the lowest-energy window before query_start is used instead.
    """
    shots = first_five_shots(annotations, target_class)
    window_frames = adaptive_window_length(shots)
    hop = max(1, window_frames // 2)
    query_start = max(s.offset for s in shots)

    positive_patches: list[MelPatch] = []
    for shot in shots:
        mel = segment_melspec(waveform, shot.onset, shot.offset)
        if mel is None:
            raise ValueError(f"shot [{shot.onset}, {shot.offset}] outside audio")
        for start, tile in chunk_frames(mel.values, window_frames, hop):
            positive_patches.append(MelPatch(minmax_normalize(tile), 1, file_id, start))

    holes = [
        (e.onset, e.offset) for e in annotations if e.marker in ("POS", "UNK")
    ]
    gaps = subtract_intervals((0.0, query_start), holes)
    negative_patches: list[MelPatch] = []
    used_gaps: list[tuple[float, float]] = []
    for lo, hi in gaps:
        mel = segment_melspec(waveform, lo, hi)
        if mel is None:
            continue
        # negatives are cut without overlap; gaps shorter than one window
        # contribute nothing
        tiles = chunk_frames(mel.values, window_frames, window_frames, pad_short=False)
        if tiles:
            used_gaps.append((lo, hi))
        for start, tile in tiles:
            negative_patches.append(MelPatch(minmax_normalize(tile), 0, file_id, start))

    if not negative_patches:
        negative_patches.append(
            _lowest_energy_patch(waveform, query_start, window_frames, file_id)
        )

    return Episode(
        file_id=file_id,
        class_name=target_class,
        positive_patches=positive_patches,
        negative_patches=negative_patches,
        window_frames=window_frames,
        query_start=query_start,
        negative_gaps=used_gaps,
    )


def _lowest_energy_patch(
    waveform: np.ndarray, query_start: float, window_frames: int, file_id: str
) -> MelPatch:
    """Fallback negative: the window-length region with least total log energy."""
    mel = segment_melspec(waveform, 0.0, query_start)
    if mel is None or mel.n_frames < window_frames:
        raise ValueError("file shorter than one detection window; cannot mine negatives")
    frame_energy = mel.values.sum(axis=0)
    window_energy = np.convolve(frame_energy, np.ones(window_frames), mode="valid")
    start = int(np.argmin(window_energy))
    tile = mel.values[:, start : start + window_frames]
    return MelPatch(minmax_normalize(tile), 0, file_id, start)


def adapt(
    encoder: Encoder,
    episode: Episode,
    config: AdaptConfig | None = None,
    seed: int = 0,
) -> AdaptResult:
    """Fit a binary classifier (and any unfrozen blocks) on the episode.

    The pretrained encoder is deep-copied, so concurrent episodes never share
    mutable parameters. Every patch is re-cropped (90-100% along time, then
    resized back) each epoch. Training runs full-batch Adam when the episode
    has at most 256 patches, otherwise shuffled mini-batches of 64.
    """
    if config is None:
        config = AdaptConfig()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    model = DetectionModel(copy.deepcopy(encoder), ClassifierHead(2))
    parameter_groups(model, config.regime)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.lr)

    patches = episode.positive_patches + episode.negative_patches
    targets_all = np.array(
        [1] * len(episode.positive_patches) + [0] * len(episode.negative_patches),
        dtype=np.int64,
    )
    frozen_encoder = config.regime == "frozen"

    for epoch in range(config.epochs):
        set_adaptation_mode(model, config.regime)
        cropped = np.stack([_adapt_crop(p.values, rng) for p in patches])
        if len(patches) <= FULL_BATCH_LIMIT:
            batches = [np.arange(len(patches))]
        else:
            order = rng.permutation(len(patches))
            batches = [
                order[i : i + MINI_BATCH_SIZE]
                for i in range(0, len(patches), MINI_BATCH_SIZE)
            ]
        for idx in batches:
            x = torch.from_numpy(cropped[idx])
            y = torch.from_numpy(targets_all[idx])
            optimizer.zero_grad()
            if frozen_encoder:
                with torch.no_grad():
                    features = model.encoder(x)
                logits = model.classifier(features)
            else:
                logits = model(x)
            loss = ce_loss(logits, y)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite adaptation loss at epoch {epoch} "
                    f"(file {episode.file_id!r}, regime {config.regime})"
                )
            loss.backward()
            optimizer.step()

    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.stack([p.values for p in patches]))
        predicted = model(x).argmax(dim=1).numpy()
    accuracy = float((predicted == targets_all).mean())
    return AdaptResult(model=model, final_accuracy=accuracy)


def _adapt_crop(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    frac = float(rng.uniform(ADAPT_CROP_MIN_FRAC, ADAPT_CROP_MAX_FRAC))
    crop_len = int(round(frac * values.shape[1]))
    if crop_len < 2:
        return values.copy()
    start = int(rng.integers(0, values.shape[1] - crop_len + 1))
    return crop_resize(values, frac, start)


def detect(
    waveform: np.ndarray,
    model: DetectionModel,
    episode: Episode,
    batch_size: int = 64,
) -> list[PredictedEvent]:
    """Classify half-overlapping query windows after the fifth shot and turn
    the label sequence into events.

    Window starts are frame-quantized (the first at or after query_start);
    trailing windows that run past the file end are padded with their own
    minimum. Returns an empty list when the file cannot fit one full window
    after query_start.
    """
    mel = mel_spectrogram(waveform)
    window = episode.window_frames
    hop = max(1, window // 2)
    first = seconds_to_frame(episode.query_start)
    if mel.n_frames - first < window:
        return []

    file_end = len(waveform) / SAMPLE_RATE
    # a window must begin strictly before the file ends (the final frame of
    # an exact-multiple file starts at the file end itself)
    starts = [
        s for s in range(first, mel.n_frames, hop) if frame_to_seconds(s) < file_end
    ]
    windows = []
    for s in starts:
        tile = mel.values[:, s : s + window]
        if tile.shape[1] < window:
            fill = np.full((tile.shape[0], window - tile.shape[1]), tile.min(), dtype=tile.dtype)
            tile = np.concatenate([tile, fill], axis=1)
        windows.append(minmax_normalize(tile))

    model.eval()
    labels = np.empty(len(windows), dtype=np.int64)
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            x = torch.from_numpy(np.stack(windows[i : i + batch_size]))
            labels[i : i + batch_size] = model(x).argmax(dim=1).numpy()

    start_times = [frame_to_seconds(s) for s in starts]
    return label_runs_to_events(labels.tolist(), start_times, file_end, episode.file_id)


def label_runs_to_events(
    labels: list[int],
    start_times: list[float],
    file_end: float,
    file_id: str = "",
) -> list[PredictedEvent]:
    """Maximal runs of positive window labels become events.

    An event's onset is the start time of the first positive window of the
    run; its offset is the start time of the first negative window after the
    run, or the file end for a trailing run.
    """
    if len(labels) != len(start_times):
        raise ValueError("labels and start_times disagree in length")
    events = []
    run_start = None
    for i, label in enumerate(labels):
        if label and run_start is None:
            run_start = i
        elif not label and run_start is not None:
            events.append(PredictedEvent(file_id, start_times[run_start], start_times[i]))
            run_start = None
    if run_start is not None:
        events.append(PredictedEvent(file_id, start_times[run_start], file_end))
    return events


def write_predictions(events: list[PredictedEvent], path: Path | str) -> None:
    """Prediction CSV: Audiofilename,Starttime,Endtime at 6 decimal places,
    sorted by (file, onset)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["Audiofilename", "Starttime", "Endtime"])
        for e in sorted(events, key=lambda e: (e.file_id, e.onset, e.offset)):
            writer.writerow([e.file_id, f"{e.onset:.6f}", f"{e.offset:.6f}"])


def read_predictions(path: Path | str) -> list[PredictedEvent]:
    events = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"Audiofilename", "Starttime", "Endtime"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"prediction CSV {path} missing columns: {sorted(missing)}")
        for row in reader:
            events.append(
                PredictedEvent(
                    row["Audiofilename"], float(row["Starttime"]), float(row["Endtime"])
                )
            )
    return events
