"""Command-line entry points: pretrain, detect, evaluate, ablate.

Runs are driven by a ``key = value`` config file (see render_config for the
full key set); a handful of flags override config values. Exit codes: 0 on
success, 1 for usage or config errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import TRANSFORMS, AugmentConfig
from .corpus import (
    FileManifest,
    build_class_vocabulary,
    extract_training_segments,
    load_manifest,
    read_annotations,
    read_audio,
)
from .dsp import chunk_patches, frame_to_seconds, resample, segment_melspec
from .evaluation import (
    DEFAULT_MIN_IOU,
    MatchResult,
    ScoreReport,
    aggregate,
    format_score_table,
    match_events,
    write_score_csv,
)
from .fewshot import (
    AdaptConfig,
    PredictedEvent,
    adapt,
    build_episode,
    detect,
    read_predictions,
    support_end,
    write_predictions,
)
from .network import REGIMES
from .training import (
    CHECKPOINT_FILENAME,
    CONFIG_FILENAME,
    PretrainConfig,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    write_loss_trace,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad command line (exit code 1)."""


class ConfigError(Exception):
    """Bad or missing configuration (exit code 1)."""


@dataclass
class RunConfig:
    """Validated, command-independent view of one run's settings.

    lr0/epochs stay None unless explicitly configured, so per-objective
    defaults still apply when the ablation harness switches objectives.
    """

    train_manifest: Path | None = None
    eval_manifest: Path | None = None
    out_dir: Path = Path("runs")
    run_name: str = "run"
    seed: int = 0
    jobs: int = 1
    min_iou: float = DEFAULT_MIN_IOU
    strict_deterministic: bool = False
    objective: str = "scl"
    tau: float = 0.06
    batch_size: int = 128
    lr0: float | None = None
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int | None = None
    mix_beta_a: float = 5.0
    mix_beta_b: float = 2.0
    freq_shift_max: int = 10
    crop_min_frac: float = 0.6
    crop_max_frac: float = 1.0
    gain_min: float = 0.75
    gain_max: float = 1.0
    noise_std_max: float = 0.1
    disabled_augmentations: tuple[str, ...] = ()
    regime: str = "frozen"
    ablate_pretrain_runs: int = 5
    ablate_eval_runs: int = 5

    def __post_init__(self):
        # Construct the per-module configs eagerly so every field is
        # validated against module invariants before any work starts.
        self.pretrain_config()
        self.augment_config()
        self.adapt_config()
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not 0.0 < self.min_iou <= 1.0:
            raise ConfigError(f"min_iou must be in (0, 1], got {self.min_iou}")
        if self.ablate_pretrain_runs < 1 or self.ablate_eval_runs < 1:
            raise ConfigError("ablation run counts must be >= 1")

    def pretrain_config(self, objective: str | None = None) -> PretrainConfig:
        try:
            return PretrainConfig(
                objective=objective or self.objective,
                tau=self.tau,
                batch_size=self.batch_size,
                lr0=self.lr0,
                momentum=self.momentum,
                weight_decay=self.weight_decay,
                epochs=self.epochs,
                seed=self.seed,
                strict_deterministic=self.strict_deterministic,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def augment_config(self) -> AugmentConfig:
        try:
            return AugmentConfig(
                mix_beta_a=self.mix_beta_a,
                mix_beta_b=self.mix_beta_b,
                freq_shift_max=self.freq_shift_max,
                crop_min_frac=self.crop_min_frac,
                crop_max_frac=self.crop_max_frac,
                gain_min=self.gain_min,
                gain_max=self.gain_max,
                noise_std_max=self.noise_std_max,
                rng_seed=self.seed,
                disabled=self.disabled_augmentations,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def adapt_config(self) -> AdaptConfig:
        try:
            return AdaptConfig(regime=self.regime)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


def _parse_transforms(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = set(names) - set(TRANSFORMS)
    if unknown:
        raise ConfigError(f"unknown augmentations {sorted(unknown)}; expected {TRANSFORMS}")
    return names


_CONFIG_SCHEMA = {
    "train_manifest": "path",
    "eval_manifest": "path",
    "out_dir": "path",
    "run_name": str,
    "seed": int,
    "jobs": int,
    "min_iou": float,
    "strict_deterministic": _parse_bool,
    "objective": str,
    "tau": float,
    "batch_size": int,
    "lr0": float,
    "momentum": float,
    "weight_decay": float,
    "epochs": int,
    "mix_beta_a": float,
    "mix_beta_b": float,
    "freq_shift_max": int,
    "crop_min_frac": float,
    "crop_max_frac": float,
    "gain_min": float,
    "gain_max": float,
    "noise_std_max": float,
    "disabled_augmentations": _parse_transforms,
    "regime": str,
    "ablate_pretrain_runs": int,
    "ablate_eval_runs": int,
}


def parse_config(path: Path | str) -> RunConfig:
    """Read a key=value config file; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    values = {}
    base = path.parent
    for line_num, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_num}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{line_num}: unknown config key {key!r}")
        caster = _CONFIG_SCHEMA[key]
        try:
            if caster == "path":
                values[key] = (base / value).resolve()
            else:
                values[key] = caster(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_num}: bad value for {key}: {exc}") from exc
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def render_config(config: RunConfig) -> str:
    """Canonical key=value text; parse_config of the result reproduces config."""
    lines = []
    for key in _CONFIG_SCHEMA:
        value = getattr(config, key)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _episode_seed(base_seed: int, file_id: str, class_name: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{file_id}:{class_name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _load_waveform(manifest: FileManifest) -> np.ndarray:
    waveform, sr = read_audio(manifest.audio_path)
    return resample(waveform, sr)


def load_training_patches(manifests: list[FileManifest]):
    """Corpus -> normalized training patches plus the class vocabulary."""
    vocabulary = build_class_vocabulary(manifests)
    segments = extract_training_segments(manifests, vocabulary)
    by_file: dict[str, list] = {}
    for segment in segments:
        by_file.setdefault(segment.file_id, []).append(segment)
    patches = []
    for manifest in manifests:
        file_segments = by_file.get(manifest.file_id)
        if not file_segments:
            continue
        waveform = _load_waveform(manifest)
        for segment in file_segments:
            mel = segment_melspec(waveform, segment.onset, segment.offset)
            if mel is None:
                logger.warning(
                    "segment [%s, %s] outside audio %s; skipped",
                    segment.onset,
                    segment.offset,
                    manifest.file_id,
                )
                continue
            patches.extend(chunk_patches(mel, segment.class_index, manifest.file_id))
    if not patches:
        raise RuntimeError("no training patches extracted from manifest")
    return patches, vocabulary


def cmd_pretrain(config: RunConfig) -> Path:
    """Run corpus -> features -> pretraining; write checkpoint, config, loss CSV."""
    if config.train_manifest is None:
        raise ConfigError("pretraining requires train_manifest in the config")
    manifests = load_manifest(config.train_manifest)
    patches, vocabulary = load_training_patches(manifests)
    logger.info("pretraining on %d patches, %d classes", len(patches), len(vocabulary))
    result = pretrain(
        patches,
        config.pretrain_config(),
        config.augment_config(),
        n_classes=len(vocabulary),
    )
    run_dir = config.out_dir / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = run_dir / CHECKPOINT_FILENAME
    save_checkpoint(result, checkpoint_path)
    (run_dir / CONFIG_FILENAME).write_text(render_config(config))
    write_loss_trace(result.loss_trace, run_dir / "loss_trace.csv")
    logger.info("checkpoint written to %s", checkpoint_path)
    return checkpoint_path


def _detection_targets(manifests: list[FileManifest]):
    """(manifest, events, class) triples for every class with >= 5 POS events."""
    targets = []
    for manifest in manifests:
        events = read_annotations(manifest)
        counts: dict[str, int] = {}
        for e in events:
            if e.marker == "POS":
                counts[e.class_name] = counts.get(e.class_name, 0) + 1
        for class_name in sorted(c for c, n in counts.items() if n >= 5):
            targets.append((manifest, events, class_name))
    return targets


def _run_episode(manifest, events, class_name, encoder, adapt_config, seed):
    waveform = _load_waveform(manifest)
    episode = build_episode(waveform, events, class_name, manifest.file_id)
    fitted = adapt(encoder, episode, adapt_config, seed)
    predictions = detect(waveform, fitted.model, episode)
    record = {
        "file_id": manifest.file_id,
        "class_name": class_name,
        "window_seconds": frame_to_seconds(episode.window_frames),
        "query_start": episode.query_start,
        "n_positive_patches": len(episode.positive_patches),
        "n_negative_patches": len(episode.negative_patches),
        "final_train_accuracy": fitted.final_accuracy,
        "n_predicted_events": len(predictions),
        "seed": seed,
    }
    return predictions, record


def cmd_detect(config: RunConfig, checkpoint_path: Path | str, regime: str | None = None) -> Path:
    """Adapt and detect on every eval file; write pooled predictions + logs.

    Per-episode failures are logged and skipped; the command fails only when
    no episode succeeds.
    """
    if config.eval_manifest is None:
        raise ConfigError("detection requires eval_manifest in the config")
    adapt_config = AdaptConfig(regime=regime or config.regime)
    checkpoint = load_checkpoint(checkpoint_path)
    manifests = load_manifest(config.eval_manifest)
    targets = _detection_targets(manifests)
    if not targets:
        raise RuntimeError("no detectable (file, class) pairs: need >= 5 POS shots each")

    if config.strict_deterministic:
        torch.set_num_threads(1)

    def run(target):
        manifest, events, class_name = target
        seed = _episode_seed(config.seed, manifest.file_id, class_name)
        return _run_episode(manifest, events, class_name, checkpoint.encoder, adapt_config, seed)

    jobs = 1 if config.strict_deterministic else config.jobs
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run, t) for t in targets]
        outcomes = [lambda f=f: f.result() for f in futures]
    else:
        outcomes = [lambda t=t: run(t) for t in targets]

    all_events: list[PredictedEvent] = []
    records = []
    failures = []
    for target, outcome in zip(targets, outcomes):
        manifest, _, class_name = target
        try:
            predictions, record = outcome()
        except Exception as exc:
            logger.error("episode %s/%s failed: %s", manifest.file_id, class_name, exc)
            failures.append(f"{manifest.file_id}/{class_name}: {exc}")
            continue
        all_events.extend(predictions)
        records.append(record)
    if not records:
        raise RuntimeError(
            "all episodes failed: " + "; ".join(failures[:5])
            + ("..." if len(failures) > 5 else "")
        )
    if failures:
        logger.warning("%d of %d episodes failed and were skipped", len(failures), len(targets))

    config.out_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = config.out_dir / "predictions.csv"
    write_predictions(all_events, predictions_path)
    with open(config.out_dir / "episodes.jsonl", "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    logger.info("wrote %d events to %s", len(all_events), predictions_path)
    return predictions_path


def cmd_evaluate(
    predictions_path: Path | str,
    manifest_path: Path | str,
    min_iou: float = DEFAULT_MIN_IOU,
    out_dir: Path | str | None = None,
) -> ScoreReport:
    """Score a prediction CSV against manifest ground truth.

    Ground truth for each (file, class) is restricted to POS events starting
    at or after the end of that class's fifth shot, mirroring the query
    region the detector saw.
    """
    manifests = load_manifest(manifest_path)
    known_files = {m.file_id for m in manifests}
    predictions = read_predictions(predictions_path)
    unknown = sorted({p.file_id for p in predictions} - known_files)
    if unknown:
        raise ValueError(f"predictions reference files missing from manifest: {unknown}")

    preds_by_file: dict[str, list] = {m.file_id: [] for m in manifests}
    for p in predictions:
        preds_by_file[p.file_id].append((p.onset, p.offset))

    per_file: dict[str, MatchResult] = {}
    tags = {}
    for manifest in manifests:
        events = read_annotations(manifest)
        counts: dict[str, int] = {}
        for e in events:
            if e.marker == "POS":
                counts[e.class_name] = counts.get(e.class_name, 0) + 1
        gts = []
        for class_name in sorted(c for c, n in counts.items() if n >= 5):
            query_start = support_end(events, class_name)
            gts.extend(
                (e.onset, e.offset)
                for e in events
                if e.marker == "POS"
                and e.class_name == class_name
                and e.onset >= query_start
            )
        per_file[manifest.file_id] = match_events(
            preds_by_file[manifest.file_id], gts, min_iou=min_iou
        )
        tags[manifest.file_id] = manifest.dataset_tag

    report = aggregate(per_file, tags)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_score_csv(report, out_dir / "scores.csv")
        (out_dir / "scores.txt").write_text(format_score_table(report) + "\n")
    return report


ABLATION_CELLS = (
    ("objective", "scl", "SCL"),
    ("objective", "ce", "CE"),
    ("objective", "simclr", "SimCLR"),
    ("drop", "mixing", "- Spectrogram mixing"),
    ("drop", "freq_shift", "- Frequency shift"),
    ("drop", "crop_resize", "- Time stretch"),
    ("drop", "gain", "- Power gain"),
    ("drop", "noise", "- Additive noise"),
)


@dataclass
class AblationRow:
    family: str
    label: str
    mean_f1: float
    min_f1: float
    max_f1: float
    scores: list[float] = field(default_factory=list)


def cmd_ablate(config: RunConfig) -> list[AblationRow]:
    """Objective comparison plus drop-one augmentation grid.

    Each cell runs ablate_pretrain_runs pretrainings x ablate_eval_runs
    seeded evaluations; drop-one cells use the contrastive objective with a
    single transform removed. Writes ablation.csv under out_dir.
    """
    if config.train_manifest is None or config.eval_manifest is None:
        raise ConfigError("ablation requires train_manifest and eval_manifest")
    manifests = load_manifest(config.train_manifest)
    patches, vocabulary = load_training_patches(manifests)
    eval_manifests = load_manifest(config.eval_manifest)
    targets = _detection_targets(eval_manifests)
    if not targets:
        raise RuntimeError("no detectable (file, class) pairs in eval manifest")
    adapt_config = config.adapt_config()

    rows = []
    for family, name, label in ABLATION_CELLS:
        objective = name if family == "objective" else "scl"
        augment_config = config.augment_config()
        if family == "drop":
            augment_config = augment_config.without(name)
        scores = []
        for r in range(config.ablate_pretrain_runs):
            pretrain_config = config.pretrain_config(objective=objective)
            pretrain_config.seed = config.seed + r
            result = pretrain(patches, pretrain_config, augment_config, n_classes=len(vocabulary))
            for e in range(config.ablate_eval_runs):
                eval_seed = config.seed + 1009 * (e + 1) + r
                scores.append(
                    _ablation_score(result.encoder, targets, adapt_config, eval_seed, config.min_iou)
                )
            logger.info("%s run %d: scores so far %s", label, r, [f"{s:.1f}" for s in scores])
        rows.append(
            AblationRow(
                family=family,
                label=label,
                mean_f1=float(np.mean(scores)),
                min_f1=float(np.min(scores)),
                max_f1=float(np.max(scores)),
                scores=scores,
            )
        )

    config.out_dir.mkdir(parents=True, exist_ok=True)
    with open(config.out_dir / "ablation.csv", "w") as f:
        f.write("family,label,mean_f1,min_f1,max_f1,n_runs\n")
        for row in rows:
            f.write(
                f"{row.family},{row.label},{row.mean_f1:.2f},"
                f"{row.min_f1:.2f},{row.max_f1:.2f},{len(row.scores)}\n"
            )
    return rows


def _ablation_score(encoder, targets, adapt_config, seed, min_iou) -> float:
    """Overall F1 of one detection pass over the eval targets."""
    per_file: dict[str, MatchResult] = {}
    tags = {}
    for manifest, events, class_name in targets:
        episode_seed = _episode_seed(seed, manifest.file_id, class_name)
        predictions, _ = _run_episode(
            manifest, events, class_name, encoder, adapt_config, episode_seed
        )
        query_start = support_end(events, class_name)
        gts = [
            (e.onset, e.offset)
            for e in events
            if e.marker == "POS" and e.class_name == class_name and e.onset >= query_start
        ]
        result = match_events([(p.onset, p.offset) for p in predictions], gts, min_iou=min_iou)
        key = manifest.file_id
        per_file[key] = per_file[key] + result if key in per_file else result
        tags[key] = manifest.dataset_tag
    return aggregate(per_file, tags).overall[2]


def format_ablation_table(rows: list[AblationRow]) -> str:
    lines = ["Pretraining objectives", "----------------------"]
    lines.append(f"{'Method':<24}{'Mean':>8}  [Min, Max]")
    for row in rows:
        if row.family == "objective":
            lines.append(
                f"{row.label:<24}{row.mean_f1:>8.2f}  [{row.min_f1:.2f}, {row.max_f1:.2f}]"
            )
    lines += ["", "Augmentation removed", "--------------------"]
    lines.append(f"{'DA removed':<24}{'Mean':>8}  [Min, Max]")
    for row in rows:
        if row.family == "drop":
            lines.append(
                f"{row.label:<24}{row.mean_f1:>8.2f}  [{row.min_f1:.2f}, {row.max_f1:.2f}]"
            )
    return "\n".join(lines)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="fewshotsed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="override the output directory")

    p = sub.add_parser("pretrain", help="pretrain an encoder on the training manifest")
    p.add_argument("--config", type=Path, required=True)
    add_common(p)

    p = sub.add_parser("detect", help="adapt per file and emit a prediction CSV")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--jobs", type=int, help="max concurrent episodes")
    add_common(p)

    p = sub.add_parser("evaluate", help="score a prediction CSV against ground truth")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--min-iou", type=float, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("ablate", help="objective and drop-one augmentation grid")
    p.add_argument("--config", type=Path, required=True)
    add_common(p)
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if getattr(args, "jobs", None) is not None:
        updates["jobs"] = args.jobs
    if getattr(args, "regime", None) is not None:
        updates["regime"] = args.regime
    return replace(config, **updates) if updates else config


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "evaluate":
            report = cmd_evaluate(
                args.predictions,
                args.manifest,
                min_iou=args.min_iou if args.min_iou is not None else DEFAULT_MIN_IOU,
                out_dir=args.out,
            )
            print(format_score_table(report))
            return 0
        config = _apply_overrides(parse_config(args.config), args)
        if args.command == "pretrain":
            checkpoint = cmd_pretrain(config)
            print(f"checkpoint: {checkpoint}")
        elif args.command == "detect":
            predictions = cmd_detect(config, args.checkpoint, args.regime)
            print(f"predictions: {predictions}")
        elif args.command == "ablate":
            rows = cmd_ablate(config)
            print(format_ablation_table(rows))
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
