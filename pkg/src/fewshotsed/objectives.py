"""Training objectives: supervised contrastive, SimCLR-style, cross-entropy.

The contrastive losses expect a stacked two-view batch: rows 0..B-1 are the
first views, rows B..2B-1 the second views, with labels tiled to match.
Embeddings must be (approximately) unit-norm rows.
"""

from __future__ import annotations

import logging

import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-3


def scl_loss(
    z: torch.Tensor,
    labels: torch.Tensor,
    tau: float,
    check_norm: bool = True,
    reduction: str = "sum",
) -> torch.Tensor:
    """Supervised contrastive loss over a two-view batch.

    For each anchor i, positives P(i) are all other rows sharing its label
    and candidates S(i) are all other rows:

        L = sum_i (-1/|P(i)|) sum_{p in P(i)}
                log[ exp(z_i.z_p / tau) / sum_{s in S(i)} exp(z_i.z_s / tau) ]

    The default reduction is the plain sum over anchors; pass
    ``reduction="mean"`` to divide by the row count instead. Anchors with no
    positive partner contribute zero and are reported via a warning (they
    occur in trailing short batches with singleton classes). Per-anchor
    logits are max-shifted before exponentiation, which is required for
    stability at small temperatures.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"need a [rows >= 2, dim] embedding matrix, got {tuple(z.shape)}")
    labels = torch.as_tensor(labels, device=z.device).reshape(-1)
    if labels.shape[0] != z.shape[0]:
        raise ValueError("labels and embeddings disagree on batch size")
    if check_norm:
        norms = z.detach().norm(dim=1)
        if not torch.all((norms - 1.0).abs() <= NORM_TOLERANCE):
            raise ValueError("embedding rows are not unit-norm (within 1e-3)")

    n = z.shape[0]
    sim = (z @ z.T) / tau
    self_mask = torch.eye(n, dtype=torch.bool, device=z.device)
    row_max = sim.masked_fill(self_mask, float("-inf")).max(dim=1).values.detach()
    logits = sim - row_max[:, None]
    exp_logits = torch.exp(logits).masked_fill(self_mask, 0.0)
    log_prob = logits - torch.log(exp_logits.sum(dim=1, keepdim=True))

    positive_mask = (labels[:, None] == labels[None, :]) & ~self_mask
    positive_counts = positive_mask.sum(dim=1)
    n_orphans = int((positive_counts == 0).sum())
    if n_orphans:
        logger.warning("%d anchors have no positive partner; they contribute 0", n_orphans)
    per_anchor = -(log_prob * positive_mask).sum(dim=1) / positive_counts.clamp(min=1)
    loss = per_anchor[positive_counts > 0].sum()
    if reduction == "mean":
        loss = loss / n
    return loss


def simclr_loss(
    z: torch.Tensor, tau: float, check_norm: bool = True, reduction: str = "sum"
) -> torch.Tensor:
    """Contrastive loss with the view counterpart as the only positive.

    Same formula as scl_loss, but P(i) shrinks to {the other view of i's
    original sample}. Implemented by relabeling each original sample with a
    unique id; rows must be stacked [view1 block; view2 block].
    """
    if z.shape[0] % 2 != 0:
        raise ValueError(f"two-view batch must have an even row count, got {z.shape[0]}")
    half = z.shape[0] // 2
    pair_labels = torch.arange(half, device=z.device).repeat(2)
    return scl_loss(z, pair_labels, tau, check_norm=check_norm, reduction=reduction)


def ce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy: -log softmax(logits)[target], averaged over the batch."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"need [batch, classes >= 2] logits, got {tuple(logits.shape)}")
    targets = torch.as_tensor(targets, device=logits.device).reshape(-1)
    if targets.numel() and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError(
            f"target out of range [0, {logits.shape[1]}): "
            f"{int(targets.min())}..{int(targets.max())}"
        )
    return F.cross_entropy(logits, targets.long())
