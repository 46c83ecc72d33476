"""Waveform-to-feature pipeline: resampling, log-mel spectrograms, patching.

All features share one parameterization: 22.05 kHz audio, 512-point FFT,
hop 128 samples, 128 mel bands. Training patches are 200 ms tiles (34
frames) cut with 100 ms (17 frame) hop; every patch is min-max normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window, resample_poly

from .corpus import AnnotatedEvent

SAMPLE_RATE = 22050
N_FFT = 512
HOP = 128
N_MELS = 128
PATCH_FRAMES = 34  # round(0.200 s * SAMPLE_RATE / HOP)
PATCH_HOP = 17  # round(0.100 s * SAMPLE_RATE / HOP)
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MelSpec:
    """Log-power mel spectrogram: values[n_mels, n_frames] in dB-like units."""

    values: np.ndarray
    sample_rate: int = SAMPLE_RATE
    frame_hop: int = HOP
    n_fft: int = N_FFT

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MelPatch:
    """A fixed-size normalized mel tile with its class label and provenance."""

    values: np.ndarray  # [n_mels, patch_frames], min 0 / max 1 unless constant
    class_index: int
    file_id: str = ""
    start_frame: int = 0


def resample(
    waveform: np.ndarray, from_rate: int, to_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Band-limited polyphase resampling; identity when rates match."""
    if from_rate <= 0:
        raise ValueError(f"invalid sample rate {from_rate}")
    if from_rate == to_rate:
        return np.asarray(waveform, dtype=np.float32)
    g = math.gcd(int(from_rate), int(to_rate))
    out = resample_poly(np.asarray(waveform, dtype=np.float64), to_rate // g, from_rate // g)
    return out.astype(np.float32)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(
    sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS
) -> np.ndarray:
    """Triangular mel filterbank [n_mels, n_fft//2 + 1], HTK scale, 0..sr/2.

    Filters are unit-peak triangles (no area normalization), sampled at the
    FFT bin frequencies. Cached and returned read-only so concurrent callers
    share one matrix.
    """
    fft_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((n_mels, fft_freqs.size))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filter_center_hz(band: int, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> float:
    """Center frequency (Hz) of one mel band; handy for synthesizing test tones."""
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2)
    return float(mel_to_hz(mel_points[band + 1]))


def mel_spectrogram(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> MelSpec:
    """Centered STFT (Hann window, reflect padding) -> power -> mel -> log.

    Produces floor(len(waveform)/hop) + 1 frames. The log scale is
    10*log10(max(power, 1e-10)), so silence maps to exactly -100.
    """
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if x.size < 1:
        raise ValueError("empty waveform")
    pad = N_FFT // 2
    if x.size == 1:
        padded = np.pad(x, pad, mode="edge")
    else:
        padded = np.pad(x, pad, mode="reflect")
    n_frames = x.size // HOP + 1
    window = get_window("hann", N_FFT, fftbins=True)
    frames = sliding_window_view(padded, N_FFT)[:: HOP][:n_frames]
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    mel_power = power @ mel_filterbank(sample_rate, N_FFT, N_MELS).T
    log_mel = 10.0 * np.log10(np.maximum(mel_power, LOG_FLOOR))
    return MelSpec(values=np.ascontiguousarray(log_mel.T, dtype=np.float32))


def segment_melspec(waveform: np.ndarray, onset: float, offset: float) -> MelSpec | None:
    """Mel spectrogram of one annotated interval, or None if it lies outside
    the audio."""
    lo = int(round(onset * SAMPLE_RATE))
    hi = min(int(round(offset * SAMPLE_RATE)), len(waveform))
    if hi <= lo:
        return None
    return mel_spectrogram(waveform[lo:hi])


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] by (x - min) / (max - min); constant input maps to zeros."""
    v = np.asarray(values, dtype=np.float32)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values in patch")
    lo = v.min()
    hi = v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def chunk_frames(
    values: np.ndarray, patch_frames: int, hop_frames: int, pad_short: bool = True
) -> list[tuple[int, np.ndarray]]:
    """Cut (start, tile) pairs of width patch_frames at a fixed hop.

    A trailing incomplete tile is discarded. Input shorter than one tile is
    right-padded with its minimum value to a single tile when pad_short is
    set, otherwise yields nothing.
    """
    n = values.shape[1]
    if n == 0:
        raise ValueError("empty spectrogram")
    if n < patch_frames:
        if not pad_short:
            return []
        fill = np.full(
            (values.shape[0], patch_frames - n), values.min(), dtype=values.dtype
        )
        return [(0, np.concatenate([values, fill], axis=1))]
    return [
        (s, values[:, s : s + patch_frames])
        for s in range(0, n - patch_frames + 1, hop_frames)
    ]


def chunk_patches(melspec: MelSpec, class_index: int, file_id: str = "") -> list[MelPatch]:
    """Cut a segment spectrogram into normalized 34-frame training patches."""
    return [
        MelPatch(minmax_normalize(tile), class_index, file_id, start)
        for start, tile in chunk_frames(melspec.values, PATCH_FRAMES, PATCH_HOP)
    ]


def adaptive_window_length(shots: list[AnnotatedEvent]) -> int:
    """Detection window in frames from the mean duration of the support shots."""
    if not shots:
        raise ValueError("no shots")
    mean_duration = sum(s.duration for s in shots) / len(shots)
    return max(1, round(mean_duration * SAMPLE_RATE / HOP))


def frame_to_seconds(frame: int) -> float:
    return frame * HOP / SAMPLE_RATE


def seconds_to_frame(t: float) -> int:
    """First frame whose start time is >= t (small float slack tolerated)."""
    return math.ceil(t * SAMPLE_RATE / HOP - 1e-9)


def save_melspec(melspec: MelSpec, path) -> None:
    """Debug dump as .npy (self-describing header carries dims and dtype)."""
    np.save(path, melspec.values)


def load_melspec(path) -> MelSpec:
    return MelSpec(values=np.load(path))
