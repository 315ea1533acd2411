"""Threshold calibration and the ID/OoD decision rule.

Convention: a sample is called ID when its score is >= the threshold. With
">=" the calibrated threshold can be an observed score and the TPR
guarantee is exact on finite samples; a strict ">" at an order statistic
would undercount by one. The metrics module shares the same comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateData

__all__ = ["ID", "OOD", "Threshold", "calibrate_threshold", "classify"]

ID = "ID"
OOD = "OoD"


@dataclass(frozen=True)
class Threshold:
    """A calibrated decision threshold.

    ``target_tpr`` is a fraction in (0, 1]; ``positive_class`` records which
    side the calibration scores came from (OoD-positive thresholds are
    calibrated on negated scores by the caller).
    """

    lam: float
    target_tpr: float
    positive_class: str = ID
    method: str = ""

    def __post_init__(self):
        if not 0.0 < self.target_tpr <= 1.0:
            raise ConfigError(
                f"target_tpr must be in (0, 1], got {self.target_tpr}"
            )
        if self.positive_class not in (ID, OOD):
            raise ConfigError(
                f"positive_class must be {ID!r} or {OOD!r}, got {self.positive_class!r}"
            )

    def to_record(self) -> dict:
        return {
            "lam": float(self.lam),
            "target_tpr": float(self.target_tpr),
            "positive_class": self.positive_class,
            "method": self.method,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Threshold":
        return cls(
            lam=float(record["lam"]),
            target_tpr=float(record["target_tpr"]),
            positive_class=record.get("positive_class", ID),
            method=record.get("method", ""),
        )


def calibrate_threshold(
    id_scores, target_tpr: float, method: str = "", positive_class: str = ID
) -> Threshold:
    """Largest lambda keeping at least ``target_tpr`` of the calibration
    scores at or above it: the ceil(target * N)-th largest score."""
    scores = np.asarray(id_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DegenerateData("cannot calibrate a threshold on an empty score list")
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigError(f"target_tpr must be in (0, 1], got {target_tpr}")
    n = scores.size
    # guard the ceil against float slop (0.95 * 20 lands a hair above 19)
    m = int(np.ceil(target_tpr * n - 1e-9))
    m = min(max(m, 1), n)
    lam = float(np.sort(scores)[::-1][m - 1])
    return Threshold(
        lam=lam, target_tpr=target_tpr, positive_class=positive_class, method=method
    )


def classify(scores, threshold: Threshold):
    """True where the score clears the threshold (the positive-class call);
    scalar in, scalar out."""
    arr = np.asarray(scores, dtype=np.float64)
    verdict = arr >= threshold.lam
    if np.isscalar(scores) or arr.ndim == 0:
        return bool(verdict)
    return verdict
