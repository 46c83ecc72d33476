"""Few-shot bioacoustic sound event detection.

A convolutional spectrogram encoder is pretrained from scratch with
supervised contrastive learning over an augmentation pipeline, adapted per
recording from five annotated example events, and slid over the remainder
of the file to emit time-stamped detections scored with an event-based
F-measure.
"""

from .augment import AugmentConfig, ViewPairBatch, awgn, freq_shift, mix, power_gain, random_crop_resize, two_views
from .corpus import (
    AnnotatedEvent,
    FileManifest,
    TrainingSegment,
    build_class_vocabulary,
    extract_training_segments,
    first_five_shots,
    load_manifest,
    parse_annotations,
    read_audio,
)
from .dsp import (
    MelPatch,
    MelSpec,
    adaptive_window_length,
    chunk_patches,
    mel_spectrogram,
    minmax_normalize,
    resample,
)
from .evaluation import MatchResult, ScoreReport, aggregate, fscore, iou, match_events
from .fewshot import (
    AdaptConfig,
    Episode,
    PredictedEvent,
    adapt,
    build_episode,
    detect,
    label_runs_to_events,
    write_predictions,
)
from .network import ClassifierHead, DetectionModel, Encoder, Projector, parameter_groups
from .objectives import ce_loss, scl_loss, simclr_loss
from .training import (
    PretrainConfig,
    cosine_lr,
    load_checkpoint,
    make_batches,
    pretrain,
    save_checkpoint,
)
from .synth import make_demo_corpus

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AnnotatedEvent",
    "AugmentConfig",
    "ClassifierHead",
    "DetectionModel",
    "Encoder",
    "Episode",
    "FileManifest",
    "MatchResult",
    "MelPatch",
    "MelSpec",
    "PredictedEvent",
    "PretrainConfig",
    "Projector",
    "ScoreReport",
    "TrainingSegment",
    "ViewPairBatch",
    "adapt",
    "adaptive_window_length",
    "aggregate",
    "awgn",
    "build_class_vocabulary",
    "build_episode",
    "ce_loss",
    "chunk_patches",
    "cosine_lr",
    "detect",
    "extract_training_segments",
    "first_five_shots",
    "freq_shift",
    "fscore",
    "iou",
    "label_runs_to_events",
    "load_checkpoint",
    "load_manifest",
    "make_batches",
    "make_demo_corpus",
    "match_events",
    "mel_spectrogram",
    "minmax_normalize",
    "mix",
    "parameter_groups",
    "parse_annotations",
    "power_gain",
    "pretrain",
    "random_crop_resize",
    "read_audio",
    "resample",
    "save_checkpoint",
    "scl_loss",
    "simclr_loss",
    "two_views",
    "write_predictions",
]
