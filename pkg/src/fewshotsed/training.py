"""From-scratch encoder pretraining with contrastive or cross-entropy objectives.

SGD with momentum, weight decay (excluding norms and biases) and per-epoch
cosine learning-rate decay. Contrastive objectives expand every batch into
two augmented views; the cross-entropy baseline trains a vocabulary-sized
linear head on single augmented views.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, single_views, two_views
from .dsp import MelPatch
from .network import ClassifierHead, Encoder, Projector
from .objectives import ce_loss, scl_loss, simclr_loss

logger = logging.getLogger(__name__)

OBJECTIVES = ("scl", "simclr", "ce")
CHECKPOINT_VERSION = 1
CHECKPOINT_FILENAME = "ckpt_final"
CONFIG_FILENAME = "config"

_DEFAULT_LR = {"scl": 0.01, "simclr": 0.01, "ce": 0.0001}
_DEFAULT_EPOCHS = {"scl": 50, "simclr": 100, "ce": 50}


@dataclass
class PretrainConfig:
    """Optimization settings; lr0/epochs default per objective when left None."""

    objective: str = "scl"
    tau: float = 0.06
    batch_size: int = 128
    lr0: float | None = None
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int | None = None
    seed: int = 0
    strict_deterministic: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected {OBJECTIVES}")
        if self.lr0 is None:
            self.lr0 = _DEFAULT_LR[self.objective]
        if self.epochs is None:
            self.epochs = _DEFAULT_EPOCHS[self.objective]
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2 and self.objective in ("scl", "simclr"):
            raise ValueError("contrastive objectives need batch_size >= 2")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass
class PretrainResult:
    encoder: Encoder
    projector: Projector | None
    ce_head: ClassifierHead | None
    config: PretrainConfig
    augment_config: AugmentConfig
    loss_trace: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, mean_loss, lr)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at step == total_steps."""
    if total_steps == 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def make_batches(patches: list, batch_size: int, rng: np.random.Generator):
    """One epoch of shuffled batches; the final short batch is kept."""
    if not patches:
        raise ValueError("no patches")
    order = rng.permutation(len(patches))
    for i in range(0, len(patches), batch_size):
        yield [patches[j] for j in order[i : i + batch_size]]


def sgd_param_groups(modules: list[torch.nn.Module], weight_decay: float) -> list[dict]:
    """Two SGD groups: weights with decay; biases and norm parameters without."""
    decay, no_decay = [], []
    for module in modules:
        for m in module.modules():
            if isinstance(m, (torch.nn.BatchNorm1d, torch.nn.BatchNorm2d, torch.nn.LayerNorm)):
                no_decay.extend(p for p in m.parameters(recurse=False))
            else:
                for name, p in m.named_parameters(recurse=False):
                    (no_decay if name.endswith("bias") else decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def pretrain(
    patches: list[MelPatch],
    config: PretrainConfig,
    augment_config: AugmentConfig | None = None,
    n_classes: int | None = None,
) -> PretrainResult:
    """Train encoder (+ projector or CE head) on training patches.

    Batching and augmentation run on RNG streams spawned from config.seed,
    so a fixed seed reproduces the full loss trace (bit-for-bit in
    strict_deterministic mode, which pins torch to one thread).
    """
    if not patches:
        raise ValueError("no training patches")
    if augment_config is None:
        augment_config = AugmentConfig()

    restore_threads = None
    if config.strict_deterministic:
        restore_threads = torch.get_num_threads()
        torch.set_num_threads(1)
    try:
        return _pretrain_loop(patches, config, augment_config, n_classes)
    finally:
        if restore_threads is not None:
            torch.set_num_threads(restore_threads)


def _pretrain_loop(patches, config, augment_config, n_classes):
    torch.manual_seed(config.seed)
    batch_rng, augment_rng = np.random.default_rng(config.seed).spawn(2)

    encoder = Encoder()
    projector = None
    ce_head = None
    if config.objective == "ce":
        if n_classes is None:
            n_classes = max(p.class_index for p in patches) + 1
        ce_head = ClassifierHead(n_classes)
        head: torch.nn.Module = ce_head
    else:
        projector = Projector()
        head = projector
    encoder.train()
    head.train()

    optimizer = torch.optim.SGD(
        sgd_param_groups([encoder, head], config.weight_decay),
        lr=config.lr0,
        momentum=config.momentum,
    )

    trace: list[tuple[int, float, float]] = []
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        for group in optimizer.param_groups:
            group["lr"] = lr
        epoch_losses = []
        for batch_index, batch in enumerate(make_batches(patches, config.batch_size, batch_rng)):
            optimizer.zero_grad()
            if config.objective == "ce":
                views = single_views(batch, augment_config, augment_rng)
                logits = ce_head(encoder(torch.from_numpy(views)))
                targets = torch.as_tensor([p.class_index for p in batch])
                loss = ce_loss(logits, targets)
            else:
                pair = two_views(batch, augment_config, augment_rng)
                x = torch.from_numpy(np.concatenate([pair.view1, pair.view2]))
                z = projector(encoder(x))
                if config.objective == "scl":
                    labels = torch.from_numpy(np.concatenate([pair.labels, pair.labels]))
                    loss = scl_loss(z, labels, config.tau)
                else:
                    loss = simclr_loss(z, config.tau)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}, lr {lr:g}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        mean_loss = float(np.mean(epoch_losses))
        trace.append((epoch, mean_loss, lr))
        logger.info("epoch %d: mean loss %.6f, lr %.6f", epoch, mean_loss, lr)

    encoder.eval()
    head.eval()
    return PretrainResult(
        encoder=encoder,
        projector=projector,
        ce_head=ce_head,
        config=config,
        augment_config=augment_config,
        loss_trace=trace,
    )


def write_loss_trace(trace: list[tuple[int, float, float]], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, mean_loss, lr in trace:
            writer.writerow([epoch, repr(mean_loss), repr(lr)])


def config_fingerprint(config: PretrainConfig, augment_config: AugmentConfig) -> str:
    payload = {"pretrain": asdict(config), "augment": asdict(augment_config)}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_checkpoint(result: PretrainResult, path: Path | str) -> None:
    """Write a self-describing checkpoint that round-trips bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "objective": result.config.objective,
        "encoder_state": result.encoder.state_dict(),
        "projector_state": result.projector.state_dict() if result.projector else None,
        "ce_head_state": result.ce_head.state_dict() if result.ce_head else None,
        "ce_head_classes": (
            result.ce_head.linear.out_features if result.ce_head else None
        ),
        "pretrain_config": asdict(result.config),
        "augment_config": asdict(result.augment_config),
        "config_hash": config_fingerprint(result.config, result.augment_config),
        "encoder_spec": {
            "blocks": 3,
            "convs_per_block": 3,
            "channels": [64, 128, 256],
            "feature_dim": 2048,
        },
        "projector_spec": {"hidden_dim": 2048, "output_dim": 512, "unit_norm": True},
    }
    torch.save(payload, str(path))


@dataclass
class Checkpoint:
    encoder: Encoder
    projector: Projector | None
    ce_head: ClassifierHead | None
    pretrain_config: PretrainConfig
    augment_config: AugmentConfig


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Load and validate a checkpoint; the projector is restored but unused
    by downstream adaptation, which works on encoder features only."""
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version mismatch: {version} != {CHECKPOINT_VERSION}")

    augment_config = AugmentConfig(
        **{**payload["augment_config"], "disabled": tuple(payload["augment_config"]["disabled"])}
    )
    pretrain_config = PretrainConfig(**payload["pretrain_config"])
    if payload["config_hash"] != config_fingerprint(pretrain_config, augment_config):
        raise ValueError("checkpoint config hash mismatch")

    encoder = Encoder()
    encoder.load_state_dict(payload["encoder_state"])
    encoder.eval()
    projector = None
    if payload["projector_state"] is not None:
        projector = Projector()
        projector.load_state_dict(payload["projector_state"])
        projector.eval()
    ce_head = None
    if payload["ce_head_state"] is not None:
        ce_head = ClassifierHead(payload["ce_head_classes"])
        ce_head.load_state_dict(payload["ce_head_state"])
        ce_head.eval()
    return Checkpoint(
        encoder=encoder,
        projector=projector,
        ce_head=ce_head,
        pretrain_config=pretrain_config,
        augment_config=augment_config,
    )
