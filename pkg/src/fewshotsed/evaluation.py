"""Event-based scoring: IoU matching, precision/recall/F1, per-dataset reports.

Predicted and ground-truth events are matched one-to-one when their temporal
IoU reaches the threshold (default 0.3). The default matcher is optimal
(maximum cardinality, ties broken by total IoU); a greedy descending-IoU
matcher is available for comparison. Scores are micro-averaged: counts are
pooled per dataset tag and overall.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

DEFAULT_MIN_IOU = 0.3

Interval = tuple[float, float]


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    matched_pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class ScoreReport:
    per_file: dict[str, tuple[float, float, float]]
    per_dataset: dict[str, tuple[float, float, float]]
    overall: tuple[float, float, float]


def iou(a: Interval, b: Interval) -> float:
    """Temporal intersection-over-union of two intervals."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    if inter == 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def match_events(
    preds: list[Interval],
    gts: list[Interval],
    min_iou: float = DEFAULT_MIN_IOU,
    method: str = "optimal",
) -> MatchResult:
    """One-to-one matching of predictions to ground truth at an IoU threshold.

    "optimal" maximizes match count (then total IoU) via the assignment
    problem; "greedy" pairs in descending IoU order. matched_pairs holds
    (pred_index, gt_index, iou) triples.
    """
    if method not in ("optimal", "greedy"):
        raise ValueError(f"unknown matching method {method!r}")
    if not preds or not gts:
        return MatchResult(tp=0, fp=len(preds), fn=len(gts))

    scores = np.array([[iou(p, g) for g in gts] for p in preds])
    eligible = scores >= min_iou

    pairs: list[tuple[int, int, float]] = []
    if method == "greedy":
        order = np.dstack(np.unravel_index(np.argsort(-scores, axis=None), scores.shape))[0]
        used_p, used_g = set(), set()
        for pi, gi in order:
            if not eligible[pi, gi]:
                break
            if pi in used_p or gi in used_g:
                continue
            used_p.add(pi)
            used_g.add(gi)
            pairs.append((int(pi), int(gi), float(scores[pi, gi])))
    else:
        # A large constant per eligible pair makes the assignment maximize
        # cardinality first and total IoU second.
        big = len(preds) + len(gts) + 1.0
        weights = np.where(eligible, big + scores, 0.0)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        for pi, gi in zip(rows, cols):
            if eligible[pi, gi]:
                pairs.append((int(pi), int(gi), float(scores[pi, gi])))

    pairs.sort()
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(preds) - tp, fn=len(gts) - tp, matched_pairs=pairs)


def fscore(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, F1) in percent, with 0 for empty denominators."""
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def aggregate(
    per_file: dict[str, MatchResult], tags: dict[str, str]
) -> ScoreReport:
    """Micro-average counts per dataset tag and overall; keep per-file scores."""
    file_scores = {}
    tag_counts: dict[str, MatchResult] = {}
    total = MatchResult(0, 0, 0)
    for file_id, result in per_file.items():
        if file_id not in tags:
            raise KeyError(f"no dataset tag for scored file {file_id!r}")
        file_scores[file_id] = fscore(result.tp, result.fp, result.fn)
        tag = tags[file_id]
        tag_counts[tag] = tag_counts.get(tag, MatchResult(0, 0, 0)) + result
        total = total + result
    per_dataset = {
        tag: fscore(r.tp, r.fp, r.fn) for tag, r in sorted(tag_counts.items())
    }
    return ScoreReport(
        per_file=file_scores,
        per_dataset=per_dataset,
        overall=fscore(total.tp, total.fp, total.fn),
    )


def write_score_csv(report: ScoreReport, path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scope", "tag_or_file", "precision", "recall", "f1"])
        pr, re, f1 = report.overall
        writer.writerow(["overall", "", f"{pr:.2f}", f"{re:.2f}", f"{f1:.2f}"])
        for tag, (pr, re, f1) in report.per_dataset.items():
            writer.writerow(["dataset", tag, f"{pr:.2f}", f"{re:.2f}", f"{f1:.2f}"])
        for file_id, (pr, re, f1) in sorted(report.per_file.items()):
            writer.writerow(["file", file_id, f"{pr:.2f}", f"{re:.2f}", f"{f1:.2f}"])


def format_score_table(report: ScoreReport, title: str = "Detection scores") -> str:
    """Human-readable table: overall row plus one Pr/Re/F1 triple per dataset."""
    lines = [title, "-" * len(title)]
    header = f"{'scope':<12}{'Precision':>11}{'Recall':>9}{'F1-score':>10}"
    lines.append(header)
    pr, re, f1 = report.overall
    lines.append(f"{'overall':<12}{pr:>11.2f}{re:>9.2f}{f1:>10.2f}")
    for tag, (pr, re, f1) in report.per_dataset.items():
        lines.append(f"{tag:<12}{pr:>11.2f}{re:>9.2f}{f1:>10.2f}")
    return "\n".join(lines)
