"""Full development-set reproduction (long-running; needs the DCASE audio).

Points the pipeline at a locally downloaded DCASE bioacoustic few-shot
development set, pretrains with the full recipe (batch 128, 50 epochs, SGD
lr 0.01 cosine-decayed, temperature 0.06), then runs Frozen adaptation and
scoring over the validation subsets (HB / ME / PB) for several seeds.

This is a reproduction script, not a CI gate: one seed takes many hours on
CPU and the published validation F1 for the frozen system varies widely
across runs (mean about 56, spread roughly 49-67), so expect the per-seed
scores to land in that band rather than on a point.

Expected data layout (audio next to its annotation csv, any nesting):

    <root>/Training_Set/**/ *.wav + *.csv
    <root>/Validation_Set/<SUBSET>/**/ *.wav + *.csv

Usage:

    python demos/06_dcase_reproduction.py --dcase-root /data/dcase_fewshot \
        --out runs/dcase --seeds 5 [--epochs 50] [--regime frozen]
"""

import argparse
import csv
import sys
from pathlib import Path

from fewshotsed.cli import RunConfig, cmd_detect, cmd_evaluate, cmd_pretrain
from fewshotsed.evaluation import format_score_table
from fewshotsed.network import REGIMES

EXPECTED_RANGE = (49.37, 67.47)


def build_manifest(root: Path, out_path: Path, tag_from_subdir: bool) -> int:
    """Write a manifest for every .wav with a sibling .csv under root."""
    rows = []
    for wav in sorted(root.rglob("*.wav")):
        annotation = wav.with_suffix(".csv")
        if not annotation.exists():
            print(f"  skipping {wav.name}: no annotation csv", file=sys.stderr)
            continue
        tag = wav.relative_to(root).parts[0] if tag_from_subdir else "TRAIN"
        rows.append((wav.name, wav, annotation, tag))
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file_id", "audio_path", "annotation_path", "dataset_tag"])
        for file_id, wav, annotation, tag in rows:
            writer.writerow([file_id, str(wav), str(annotation), tag])
    return len(rows)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dcase-root", type=Path, required=True)
    parser.add_argument("--out", type=Path, default=Path("runs/dcase"))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--regime", choices=REGIMES, default="frozen")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    train_root = args.dcase_root / "Training_Set"
    val_root = args.dcase_root / "Validation_Set"
    if not train_root.is_dir() or not val_root.is_dir():
        print(f"no Training_Set/Validation_Set under {args.dcase_root}", file=sys.stderr)
        return 1
    args.out.mkdir(parents=True, exist_ok=True)
    train_manifest = args.out / "train_manifest.csv"
    eval_manifest = args.out / "eval_manifest.csv"
    n_train = build_manifest(train_root, train_manifest, tag_from_subdir=False)
    n_eval = build_manifest(val_root, eval_manifest, tag_from_subdir=True)
    print(f"manifests: {n_train} training files, {n_eval} validation files")

    scores = []
    for seed in range(args.seeds):
        run_dir = args.out / f"seed{seed}"
        config = RunConfig(
            train_manifest=train_manifest,
            eval_manifest=eval_manifest,
            out_dir=run_dir,
            run_name="pretrain",
            seed=seed,
            epochs=args.epochs,
            regime=args.regime,
            jobs=args.jobs,
        )
        print(f"\n=== seed {seed}: pretraining ({args.epochs} epochs, batch 128) ===")
        checkpoint = cmd_pretrain(config)
        print(f"=== seed {seed}: adaptation + detection ({args.regime}) ===")
        predictions = cmd_detect(config, checkpoint, args.regime)
        report = cmd_evaluate(predictions, eval_manifest, out_dir=run_dir)
        print(format_score_table(report, title=f"seed {seed}"))
        scores.append(report.overall[2])

    mean = sum(scores) / len(scores)
    lo, hi = EXPECTED_RANGE
    print(f"\nper-seed overall F1: {[round(s, 2) for s in scores]}")
    print(f"mean F1 {mean:.2f}; published frozen-system spread ~[{lo}, {hi}]")
    print("inside expected band" if lo <= mean <= hi else "outside expected band")
    return 0


if __name__ == "__main__":
    sys.exit(main())
