"""Evaluation metrics: FPR at fixed TPR in both polarities, AUROC with
midrank tie handling, top-1 accuracy and Spearman rank correlation.

Everything at this boundary is a percentage in [0, 100], matching how the
benchmark tables are read; targets passed in are fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .decision import calibrate_threshold
from .errors import DegenerateData, DimensionMismatch

__all__ = [
    "MetricRow",
    "MetricSummary",
    "auroc",
    "fpr_at_tpr",
    "accuracy",
    "spearman_rho",
    "summarize",
]

METRIC_FIELDS = ("fpr95_id", "fpr99_id", "fpr95_ood", "fpr99_ood", "auroc_pct", "acc")


@dataclass(frozen=True)
class MetricRow:
    """One evaluated cell: both FPR polarities, AUROC (ID-positive; the
    OoD-positive AUROC is its complement) and optional ID accuracy."""

    fpr95_id: float
    fpr99_id: float
    fpr95_ood: float
    fpr99_ood: float
    auroc_pct: float
    n_id: int
    n_ood: int
    acc: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("n_id", "n_ood", "acc"):
                continue
            v = getattr(self, f.name)
            if not 0.0 <= v <= 100.0:
                raise DegenerateData(f"{f.name} must be in [0, 100], got {v}")
        if self.acc is not None and not 0.0 <= self.acc <= 100.0:
            raise DegenerateData(f"acc must be in [0, 100], got {self.acc}")


def _two_sides(pos_scores, neg_scores):
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise DegenerateData("both score sides must be non-empty")
    return pos, neg


def auroc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUROC as a percentage, ties counted at half weight."""
    pos, neg = _two_sides(pos_scores, neg_scores)
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size) * 100.0)


def fpr_at_tpr(pos_scores, neg_scores, target_tpr: float) -> float:
    """Fraction of negatives clearing the threshold calibrated to keep
    ``target_tpr`` of the positives, as a percentage.

    For the OoD-positive polarity call this on negated scores with the
    sides swapped.
    """
    pos, neg = _two_sides(pos_scores, neg_scores)
    lam = calibrate_threshold(pos, target_tpr).lam
    return float((neg >= lam).sum() / neg.size * 100.0)


def accuracy(logits, labels) -> float:
    """Top-1 accuracy as a percentage; argmax ties go to the lower index."""
    lg = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if lg.ndim != 2:
        raise DimensionMismatch(f"logits must be (N, C), got shape {lg.shape}")
    if y.shape != (lg.shape[0],):
        raise DimensionMismatch(
            f"labels must be ({lg.shape[0]},), got shape {y.shape}"
        )
    if lg.shape[0] == 0:
        raise DegenerateData("accuracy of an empty batch is undefined")
    return float((lg.argmax(axis=1) == y).mean() * 100.0)


def spearman_rho(x, y) -> float:
    """Pearson correlation of midranks."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise DimensionMismatch(f"length mismatch: {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise DegenerateData("rank correlation needs at least two pairs")
    rx = rankdata(xv, method="average")
    ry = rankdata(yv, method="average")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise DegenerateData("rank correlation is undefined for constant input")
    return float(np.corrcoef(rx, ry)[0, 1])


@dataclass(frozen=True)
class MetricSummary:
    """Per-metric mean and sample std (ddof=1) over runs; a single run is
    flagged and reported with std 0."""

    means: dict
    stds: dict
    n: int
    single_run: bool


def summarize(runs: Sequence[MetricRow]) -> MetricSummary:
    if len(runs) == 0:
        raise DegenerateData("cannot summarize zero runs")
    means: dict = {}
    stds: dict = {}
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in runs]
        if any(v is None for v in values):
            means[name] = None
            stds[name] = None
            continue
        arr = np.asarray(values, dtype=np.float64)
        means[name] = float(arr.mean())
        stds[name] = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    return MetricSummary(
        means=means, stds=stds, n=len(runs), single_run=len(runs) == 1
    )
