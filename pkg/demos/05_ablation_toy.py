"""Toy-scale ablation grid: pretraining objectives and drop-one augmentations.

Runs the same grid the `fewshotsed ablate` command uses (SCL / CE / SimCLR,
then the contrastive objective with one augmentation removed at a time) at
1 x 1 runs per cell so it finishes in a few minutes on CPU. At research
scale the harness is meant for 5 pretrainings x 5 evaluations per cell.

    python demos/05_ablation_toy.py
"""

import tempfile
from pathlib import Path

from fewshotsed.cli import RunConfig, cmd_ablate, format_ablation_table
from fewshotsed.synth import make_demo_corpus

tmp = Path(tempfile.mkdtemp())
corpus = make_demo_corpus(
    tmp / "data", seed=1, n_train_events=6, n_eval_files=1, n_query_events=3
)

config = RunConfig(
    train_manifest=corpus.train_manifest,
    eval_manifest=corpus.eval_manifest,
    out_dir=tmp / "ablation",
    seed=0,
    batch_size=32,
    epochs=2,  # toy budget; CE/SimCLR defaults would be 50/100 epochs
    ablate_pretrain_runs=1,
    ablate_eval_runs=1,
)
rows = cmd_ablate(config)
print()
print(format_ablation_table(rows))
print(f"\nper-cell scores written to {tmp / 'ablation' / 'ablation.csv'}")
