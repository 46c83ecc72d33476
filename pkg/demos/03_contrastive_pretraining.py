"""Pretrain the encoder with the supervised contrastive objective.

Uses a small synthetic corpus and a short epoch budget so it finishes in a
couple of minutes on CPU; the printed loss trace and the class-similarity
margin show the embedding space organizing by class. The real recipe
(batch 128, 50 epochs, lr 0.01 cosine-decayed, temperature 0.06) is the
default configuration of PretrainConfig.

    python demos/03_contrastive_pretraining.py
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from fewshotsed.augment import AugmentConfig
from fewshotsed.cli import load_training_patches
from fewshotsed.corpus import load_manifest
from fewshotsed.synth import make_demo_corpus
from fewshotsed.training import PretrainConfig, pretrain, save_checkpoint

out_dir = Path(__file__).resolve().parent / "output"
out_dir.mkdir(exist_ok=True)

corpus = make_demo_corpus(Path(tempfile.mkdtemp()) / "data", seed=0, n_train_events=12)
patches, vocabulary = load_training_patches(load_manifest(corpus.train_manifest))
print(f"training patches: {len(patches)}, class vocabulary: {vocabulary}")

config = PretrainConfig(objective="scl", batch_size=64, epochs=8, seed=0)
print(f"objective={config.objective} tau={config.tau} lr0={config.lr0} "
      f"epochs={config.epochs} (toy budget)")
result = pretrain(patches, config, AugmentConfig(rng_seed=0))

print("epoch  mean_loss     lr")
for epoch, mean_loss, lr in result.loss_trace:
    print(f"{epoch:>5}  {mean_loss:>9.3f}  {lr:.5f}")

encoder = result.encoder
encoder.eval()
x = torch.from_numpy(np.stack([p.values for p in patches]))
labels = np.array([p.class_index for p in patches])
with torch.no_grad():
    z = torch.nn.functional.normalize(encoder(x), dim=1).numpy()
similarity = z @ z.T
same = np.equal.outer(labels, labels) & ~np.eye(len(labels), dtype=bool)
print(f"mean cosine similarity within class:  {similarity[same].mean():.3f}")
print(f"mean cosine similarity between class: {similarity[~np.equal.outer(labels, labels)].mean():.3f}")

checkpoint_path = out_dir / "demo_ckpt"
save_checkpoint(result, checkpoint_path)
print(f"checkpoint saved to {checkpoint_path}")
