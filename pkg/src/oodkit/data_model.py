"""Core value types: feature dumps, classifier heads, probability and score
vectors, plus the numerically safe softmax / log-sum-exp primitives every
score function is built on.

All matrices are float64 in memory regardless of their on-disk width, and
every type is treated as immutable after construction (arrays are exposed
as read-only views).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, OodkitError

__all__ = [
    "FeatureSet",
    "LinearHead",
    "ProbVector",
    "ScoreVector",
    "AugmentedDump",
    "Violation",
    "validate_feature_set",
    "softmax",
    "batch_softmax",
    "log_sum_exp",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.flags.writeable = False
    return view


def _as_float2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FeatureSet:
    """A batch of penultimate-layer feature vectors with optional labels,
    logits and sample identifiers.

    features : (N, d) float
    labels   : (N,) int class indices, optional
    logits   : (N, C) float pre-softmax values, optional
    ids      : length-N sample identifiers, optional (never serialized)
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    ids: Optional[tuple] = None

    def __post_init__(self):
        feats = _as_float2d(self.features, "features")
        object.__setattr__(self, "features", _readonly(feats))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.ndim != 1:
                raise ValueError(f"labels must be 1-D, got shape {lab.shape}")
            object.__setattr__(self, "labels", _readonly(lab))
        if self.logits is not None:
            lg = _as_float2d(self.logits, "logits")
            object.__setattr__(self, "logits", _readonly(lg))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> Optional[int]:
        """Class count from logits if present, else from labels, else None."""
        if self.logits is not None:
            return self.logits.shape[1]
        if self.labels is not None and self.labels.size:
            return int(self.labels.max()) + 1
        return None


@dataclass(frozen=True)
class LinearHead:
    """Final linear classifier layer: logits(z) = W z + b."""

    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        w = _as_float2d(self.weights, "weights")
        b = np.asarray(self.bias, dtype=np.float64)
        if b.ndim != 1:
            raise ValueError(f"bias must be 1-D, got shape {b.shape}")
        if w.shape[0] != b.shape[0]:
            raise ValueError(
                f"weight rows ({w.shape[0]}) must equal bias length ({b.shape[0]})"
            )
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "bias", _readonly(b))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        """Recompute logits for an (N, d) feature matrix."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[-1] != self.feature_dim:
            raise ValueError(
                f"feature_dim mismatch: head expects d={self.feature_dim}, "
                f"got {feats.shape[-1]}"
            )
        return feats @ self.weights.T + self.bias


@dataclass(frozen=True)
class ProbVector:
    """A single probability vector over C classes; must sum to 1 within 1e-9."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1:
            raise ValueError(f"probs must be 1-D, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _readonly(p))


#: The single score-orientation convention used everywhere in the toolkit.
HIGHER_IS_ID = "higher_is_id"


@dataclass(frozen=True)
class ScoreVector:
    """Per-sample scores for one method; orientation is always higher = more ID."""

    method: str
    scores: np.ndarray
    orientation: str = HIGHER_IS_ID

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError(f"scores must be 1-D, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            bad = int(np.flatnonzero(~np.isfinite(s))[0])
            raise OodkitError(
                f"non-finite score for method {self.method!r} at sample {bad}"
            )
        if self.orientation != HIGHER_IS_ID:
            raise ValueError(f"unsupported orientation {self.orientation!r}")
        object.__setattr__(self, "scores", _readonly(s))

    def __len__(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class AugmentedDump:
    """Extractor-supplied channels that cannot be recomputed post hoc.

    dropout_prob_stacks : (N, T, C) per-pass softmax outputs, optional
    odin_logits         : (N, C) logits of input-perturbed samples, optional
    meta                : source checkpoint id, pass count, perturbation size
    """

    dropout_prob_stacks: Optional[np.ndarray] = None
    odin_logits: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dropout_prob_stacks is not None:
            st = np.asarray(self.dropout_prob_stacks, dtype=np.float64)
            if st.ndim != 3:
                raise ValueError(
                    f"dropout_prob_stacks must be (N, T, C), got shape {st.shape}"
                )
            if st.shape[1] < 1:
                raise ValueError("dropout stack needs at least one pass (T >= 1)")
            object.__setattr__(self, "dropout_prob_stacks", _readonly(st))
        if self.odin_logits is not None:
            lg = _as_float2d(self.odin_logits, "odin_logits")
            object.__setattr__(self, "odin_logits", _readonly(lg))
        object.__setattr__(self, "meta", dict(self.meta))


@dataclass(frozen=True)
class Violation:
    """One validation finding; field names a location, message says what broke."""

    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def validate_feature_set(
    fs: FeatureSet,
    head: Optional[LinearHead] = None,
    aug: Optional[AugmentedDump] = None,
) -> list[Violation]:
    """Check dimensional and finiteness invariants; returns violations as data.

    An empty list means the set is consistent. Never raises and never
    mutates its inputs.
    """
    out: list[Violation] = []
    feats = fs.features
    n, d = feats.shape
    if d < 1:
        out.append(Violation("features", f"feature dim must be >= 1, got {d}"))
    if not np.all(np.isfinite(feats)):
        i, j = np.argwhere(~np.isfinite(feats))[0]
        out.append(Violation("features", f"non-finite at ({i}, {j})"))

    c = fs.logits.shape[1] if fs.logits is not None else None
    if head is not None:
        if head.feature_dim != d:
            out.append(
                Violation(
                    "features",
                    f"feature_dim mismatch: head d={head.feature_dim}, dump d={d}",
                )
            )
        if c is not None and head.num_classes != c:
            out.append(
                Violation(
                    "logits",
                    f"class count mismatch: head C={head.num_classes}, logits C={c}",
                )
            )
        if c is None:
            c = head.num_classes

    if fs.labels is not None:
        if fs.labels.shape[0] != n:
            out.append(
                Violation("labels", f"length {fs.labels.shape[0]} != N={n}")
            )
        elif fs.labels.size:
            if fs.labels.min() < 0:
                out.append(Violation("labels", "negative class index"))
            if c is not None and fs.labels.max() >= c:
                out.append(
                    Violation(
                        "labels",
                        f"label {int(fs.labels.max())} out of range for C={c}",
                    )
                )

    if fs.logits is not None:
        if fs.logits.shape[0] != n:
            out.append(Violation("logits", f"row count {fs.logits.shape[0]} != N={n}"))
        if not np.all(np.isfinite(fs.logits)):
            i, j = np.argwhere(~np.isfinite(fs.logits))[0]
            out.append(Violation("logits", f"non-finite at ({i}, {j})"))

    if fs.ids is not None and len(fs.ids) != n:
        out.append(Violation("ids", f"length {len(fs.ids)} != N={n}"))

    if aug is not None:
        if aug.dropout_prob_stacks is not None:
            st = aug.dropout_prob_stacks
            if st.shape[0] != n:
                out.append(
                    Violation("dropout_prob_stacks", f"N {st.shape[0]} != {n}")
                )
            if c is not None and st.shape[2] != c:
                out.append(
                    Violation("dropout_prob_stacks", f"C {st.shape[2]} != {c}")
                )
            sums = st.sum(axis=2)
            if st.size and np.max(np.abs(sums - 1.0)) > 1e-6:
                i, t = np.argwhere(np.abs(sums - 1.0) > 1e-6)[0]
                out.append(
                    Violation(
                        "dropout_prob_stacks",
                        f"pass {t} of sample {i} sums to {sums[i, t]!r}, not 1",
                    )
                )
        if aug.odin_logits is not None:
            ol = aug.odin_logits
            if ol.shape[0] != n:
                out.append(Violation("odin_logits", f"N {ol.shape[0]} != {n}"))
            if c is not None and ol.shape[1] != c:
                out.append(Violation("odin_logits", f"C {ol.shape[1]} != {c}"))
            if not np.all(np.isfinite(ol)):
                out.append(Violation("odin_logits", "non-finite entry"))

    return out


def softmax(logits: Sequence[float] | np.ndarray, temperature: float = 1.0) -> ProbVector:
    """Temperature softmax of a single logit vector, computed with max-shift.

    p_c = exp(f_c / T) / sum_j exp(f_j / T). Rejects T <= 0.
    """
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    f = np.asarray(logits, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {f.shape}")
    return ProbVector(_softmax_rows(f[None, :], temperature)[0])


def batch_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise temperature softmax of an (N, C) logit matrix."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    f = np.asarray(logits, dtype=np.float64)
    return _softmax_rows(f, temperature)


def _softmax_rows(f: np.ndarray, temperature: float) -> np.ndarray:
    shifted = (f - f.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted log-sum-exp along an axis; stable for logits up to ~1e300."""
    f = np.asarray(logits, dtype=np.float64)
    m = f.max(axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.exp(f - m).sum(axis=axis))
    return out
