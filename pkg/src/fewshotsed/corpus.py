"""Corpus handling: annotation CSVs, file manifests, and WAV audio I/O.

Annotation files follow the DCASE few-shot task layout: a header row
``Audiofilename,Starttime,Endtime,<CLASS_1>,...,<CLASS_K>`` followed by one
row per annotated interval, where each class cell is POS, NEG, UNK or empty.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MARKERS = ("POS", "NEG", "UNK")
ANNOTATION_COLUMNS = ("Audiofilename", "Starttime", "Endtime")


class AnnotationError(ValueError):
    """Malformed annotation CSV (bad header, row, time or marker)."""


@dataclass(frozen=True)
class AnnotatedEvent:
    """One labeled time interval within an audio file."""

    file_id: str
    onset: float
    offset: float
    class_name: str
    marker: str

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if self.offset <= self.onset:
            raise ValueError(f"empty interval [{self.onset}, {self.offset}]")
        if self.marker not in MARKERS:
            raise ValueError(f"unknown marker {self.marker!r}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class FileManifest:
    """One audio/annotation pair belonging to a tagged dataset subset."""

    file_id: str
    audio_path: Path
    annotation_path: Path
    dataset_tag: str
    sample_rate: int


@dataclass(frozen=True)
class TrainingSegment:
    """A positively annotated interval mapped into the global class vocabulary."""

    file_id: str
    onset: float
    offset: float
    class_index: int


def parse_annotations(source: bytes | str, file_id: str) -> list[AnnotatedEvent]:
    """Parse an annotation CSV into events, one per non-empty (row, class) cell.

    Rows are validated strictly: every row must have exactly the header's
    field count, times must be numeric with ``Endtime > Starttime >= 0``, and
    class cells must be one of POS/NEG/UNK or empty. Row numbers in error
    messages count data rows from 1.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    reader = csv.reader(io.StringIO(source))
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationError(f"{file_id}: empty annotation CSV") from None
    header = [h.strip() for h in header]
    if tuple(header[:3]) != ANNOTATION_COLUMNS:
        raise AnnotationError(
            f"{file_id}: header must start with {','.join(ANNOTATION_COLUMNS)}, "
            f"got {','.join(header[:3])}"
        )
    class_names = header[3:]

    events: list[AnnotatedEvent] = []
    for row_num, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise AnnotationError(
                f"{file_id}: row {row_num} has {len(row)} fields, expected {len(header)}"
            )
        try:
            onset = float(row[1])
            offset = float(row[2])
        except ValueError:
            raise AnnotationError(
                f"{file_id}: non-numeric time at row {row_num}: {row[1]!r}, {row[2]!r}"
            ) from None
        if onset < 0:
            raise AnnotationError(f"{file_id}: negative onset at row {row_num}")
        if offset <= onset:
            raise AnnotationError(f"{file_id}: empty interval at row {row_num}")
        for class_name, cell in zip(class_names, row[3:]):
            marker = cell.strip()
            if not marker:
                continue
            if marker not in MARKERS:
                raise AnnotationError(
                    f"{file_id}: unknown marker {marker!r} at row {row_num}"
                )
            events.append(AnnotatedEvent(file_id, onset, offset, class_name, marker))
    return events


def serialize_annotations(events: list[AnnotatedEvent]) -> str:
    """Render events back to annotation-CSV text (inverse of parse_annotations).

    Rows are keyed by (file_id, onset, offset) in first-appearance order;
    class columns are sorted. Round-trips the (file, onset, offset, class,
    marker) tuple set losslessly.
    """
    class_names = sorted({e.class_name for e in events})
    rows: dict[tuple[str, float, float], dict[str, str]] = {}
    for e in events:
        rows.setdefault((e.file_id, e.onset, e.offset), {})[e.class_name] = e.marker
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(list(ANNOTATION_COLUMNS) + class_names)
    for (file_id, onset, offset), markers in rows.items():
        writer.writerow(
            [file_id, repr(onset), repr(offset)]
            + [markers.get(c, "") for c in class_names]
        )
    return out.getvalue()


def read_annotations(manifest: FileManifest) -> list[AnnotatedEvent]:
    return parse_annotations(manifest.annotation_path.read_bytes(), manifest.file_id)


def load_manifest(path: Path | str) -> list[FileManifest]:
    """Load a manifest CSV with header ``file_id,audio_path,annotation_path,dataset_tag``.

    Relative paths are resolved against the manifest's directory. Both paths
    must exist; the WAV header is read to record the native sample rate.
    """
    path = Path(path)
    base = path.parent
    manifests: list[FileManifest] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"file_id", "audio_path", "annotation_path", "dataset_tag"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"manifest {path} missing columns: {sorted(missing)}")
        for row in reader:
            audio_path = (base / row["audio_path"]).resolve()
            annotation_path = (base / row["annotation_path"]).resolve()
            if not audio_path.exists():
                raise FileNotFoundError(f"manifest audio path does not exist: {audio_path}")
            if not annotation_path.exists():
                raise FileNotFoundError(
                    f"manifest annotation path does not exist: {annotation_path}"
                )
            manifests.append(
                FileManifest(
                    file_id=row["file_id"],
                    audio_path=audio_path,
                    annotation_path=annotation_path,
                    dataset_tag=row["dataset_tag"],
                    sample_rate=wav_sample_rate(audio_path),
                )
            )
    return manifests


def write_manifest(manifests: list[FileManifest], path: Path | str) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file_id", "audio_path", "annotation_path", "dataset_tag"])
        for m in manifests:
            writer.writerow([m.file_id, str(m.audio_path), str(m.annotation_path), m.dataset_tag])


def build_class_vocabulary(
    manifests: list[FileManifest],
) -> dict[tuple[str, str], int]:
    """Assign consecutive indices to (dataset_tag, class_name) pairs, sorted.

    Class identity is the pair, so identical class names under different
    dataset tags get distinct indices.
    """
    keys = set()
    for m in manifests:
        for event in read_annotations(m):
            keys.add((m.dataset_tag, event.class_name))
    return {key: idx for idx, key in enumerate(sorted(keys))}


def extract_training_segments(
    manifests: list[FileManifest],
    vocabulary: dict[tuple[str, str], int],
) -> list[TrainingSegment]:
    """Collect every POS-marked event as a training segment.

    UNK and NEG events are discarded: UNK regions are unknown, not negative.
    """
    segments: list[TrainingSegment] = []
    for m in manifests:
        for event in read_annotations(m):
            if event.marker != "POS":
                continue
            key = (m.dataset_tag, event.class_name)
            if key not in vocabulary:
                raise KeyError(f"class {key} not in vocabulary")
            segments.append(
                TrainingSegment(event.file_id, event.onset, event.offset, vocabulary[key])
            )
    return segments


def first_five_shots(
    events: list[AnnotatedEvent], target_class: str
) -> list[AnnotatedEvent]:
    """The five earliest-onset POS events of the target class, in onset order."""
    positives = [e for e in events if e.marker == "POS" and e.class_name == target_class]
    positives.sort(key=lambda e: e.onset)
    if len(positives) < 5:
        raise ValueError(
            f"insufficient shots: {len(positives)} POS events of class "
            f"{target_class!r}, need 5"
        )
    return positives[:5]


def read_audio(path: Path | str) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as a mono float32 waveform in [-1, 1].

    Integer formats are scaled by 2**(bits-1); multi-channel audio is
    downmixed by channel mean. Returns (waveform, native sample rate).
    """
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise OSError(f"unreadable WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data / np.float32(32768.0)
    elif data.dtype == np.int32:
        # 24-bit PCM arrives as int32 with the low byte zeroed, so the same
        # 2**31 scaling applies.
        x = data / np.float32(2147483648.0)
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / np.float32(128.0)
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float32)
    else:
        raise OSError(f"unsupported WAV sample format {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return np.ascontiguousarray(x, dtype=np.float32), int(sr)


def wav_sample_rate(path: Path | str) -> int:
    """Read the sample rate from a WAV header without loading samples."""
    with open(path, "rb") as f:
        riff = f.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise OSError(f"not a RIFF/WAVE file: {path}")
        while True:
            chunk_header = f.read(8)
            if len(chunk_header) < 8:
                raise OSError(f"WAV file has no fmt chunk: {path}")
            chunk_id, size = struct.unpack("<4sI", chunk_header)
            if chunk_id == b"fmt ":
                body = f.read(size)
                if len(body) < 8:
                    raise OSError(f"truncated fmt chunk: {path}")
                return struct.unpack("<I", body[4:8])[0]
            f.seek(size + (size & 1), 1)
