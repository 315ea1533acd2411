"""The 22 post-hoc OoD score functions.

Every scorer maps a batch of samples to one real score per sample with a
single orientation: higher means more in-distribution. Functions here are
vectorized over the batch; ``compute_score`` resolves fitted artifacts,
validates hyperparameters and wraps the result in a ScoreVector.

All scorers are elementwise over samples except ``score_rankfeat``, whose
definition couples the batch through a shared rank-1 subtraction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import xlogy

from .data_model import (
    AugmentedDump,
    FeatureSet,
    LinearHead,
    ScoreVector,
    batch_softmax,
    log_sum_exp,
)
from .errors import (
    ConfigError,
    DegenerateData,
    DimensionMismatch,
    MissingArtifact,
    MissingChannel,
)
from .stats_fit import FittedStats, keep_count, residual_norms, weibull_cdf

__all__ = [
    "METHOD_IDS",
    "FAMILY",
    "DISPLAY_NAME",
    "MethodConfig",
    "compute_score",
    "score_msp",
    "score_mls",
    "score_energy",
    "score_tempscale",
    "score_gen",
    "score_mcdropout",
    "score_odin",
    "score_klmatch",
    "score_mahalanobis",
    "score_rmds",
    "score_knn",
    "score_fdbd",
    "score_vim",
    "score_residual",
    "score_react",
    "score_ash",
    "score_she",
    "score_rankfeat",
    "score_gradnorm",
    "score_relation",
    "score_openmax",
    "score_dice",
]

METHOD_IDS = (
    "msp",
    "mls",
    "energy",
    "tempscale",
    "gen",
    "mcdropout",
    "odin",
    "klmatch",
    "mahalanobis",
    "rmds",
    "knn",
    "fdbd",
    "vim",
    "residual",
    "react",
    "ash",
    "she",
    "rankfeat",
    "gradnorm",
    "relation",
    "openmax",
    "dice",
)

FAMILY = {
    "mahalanobis": "distance",
    "rmds": "distance",
    "knn": "distance",
    "fdbd": "distance",
    "msp": "classification",
    "mls": "classification",
    "tempscale": "classification",
    "gen": "classification",
    "mcdropout": "classification",
    "odin": "classification",
    "klmatch": "classification",
    "vim": "classification",
    "residual": "classification",
    "react": "classification",
    "ash": "classification",
    "she": "classification",
    "rankfeat": "classification",
    "gradnorm": "classification",
    "relation": "classification",
    "openmax": "classification",
    "energy": "density",
    "dice": "density",
}

DISPLAY_NAME = {
    "msp": "MSP",
    "mls": "MLS",
    "energy": "Energy",
    "tempscale": "TempScale",
    "gen": "GEN",
    "mcdropout": "MCDropout",
    "odin": "ODIN",
    "klmatch": "KL Matching",
    "mahalanobis": "Mahalanobis",
    "rmds": "RMDS",
    "knn": "KNN",
    "fdbd": "fDBD",
    "vim": "ViM",
    "residual": "Residual",
    "react": "ReAct",
    "ash": "ASH",
    "she": "SHE",
    "rankfeat": "RankFeat",
    "gradnorm": "GradNorm",
    "relation": "Relation",
    "openmax": "OpenMax",
    "dice": "DICE",
}


# ---------------------------------------------------------------------------
# hyperparameter validation
# ---------------------------------------------------------------------------


def _positive(name):
    def check(v):
        v = float(v)
        if not v > 0:
            raise ConfigError(f"{name} must be > 0, got {v}")
        return v

    return check


def _open01(name):
    def check(v):
        v = float(v)
        if not 0.0 < v < 1.0:
            raise ConfigError(f"{name} must be in (0, 1), got {v}")
        return v

    return check


def _count(name):
    def check(v):
        iv = int(v)
        if iv != v or iv < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v}")
        return iv

    return check


def _percent(name):
    def check(v):
        v = float(v)
        if not 0.0 <= v <= 100.0:
            raise ConfigError(f"{name} must be in [0, 100], got {v}")
        return v

    return check


def _boolean(name):
    def check(v):
        if not isinstance(v, (bool, np.bool_)):
            raise ConfigError(f"{name} must be a boolean, got {v!r}")
        return bool(v)

    return check


def _choice(name, options):
    def check(v):
        if v not in options:
            raise ConfigError(f"{name} must be one of {sorted(options)}, got {v!r}")
        return v

    return check


# per-method accepted keys: {key: (validator, default)}; None defaults are
# resolved against FittedStats at dispatch time
_PARAM_SPECS = {
    "msp": {},
    "mls": {},
    "energy": {"T": (_positive("T"), 1.0)},
    "tempscale": {},
    "gen": {
        "gamma": (_open01("gamma"), 0.1),
        "M": (_count("M"), 100),
        "sum_all": (_boolean("sum_all"), False),
    },
    "mcdropout": {},
    "odin": {"T": (_positive("T"), 1000.0)},
    "klmatch": {},
    "mahalanobis": {},
    "rmds": {},
    "knn": {"K": (_count("K"), 50)},
    "fdbd": {
        "distance_as_normalizer": (_boolean("distance_as_normalizer"), True),
        "negate": (_boolean("negate"), False),
    },
    "vim": {"dim": (_count("dim"), None)},
    "residual": {"dim": (_count("dim"), None)},
    "react": {
        "T": (_positive("T"), 1.0),
        "scorer": (_choice("scorer", {"msp", "energy"}), "msp"),
    },
    "ash": {"percentile": (_percent("percentile"), None)},
    "she": {"beta": (_positive("beta"), None)},
    "rankfeat": {},
    "gradnorm": {},
    "relation": {"pow": (_positive("pow"), 8.0)},
    "openmax": {"alpha_top": (_count("alpha_top"), None)},
    "dice": {},
}


def _validate_params(method: str, params: Optional[Mapping]) -> dict:
    if method not in _PARAM_SPECS:
        raise ConfigError(f"unknown method id {method!r}")
    spec = _PARAM_SPECS[method]
    out = {k: default for k, (_check, default) in spec.items()}
    for key, value in (params or {}).items():
        if key not in spec:
            allowed = ", ".join(sorted(spec)) or "none"
            raise ConfigError(
                f"method {method!r} does not accept hyperparameter {key!r} "
                f"(accepted: {allowed})"
            )
        if value is None:  # explicit None keeps the default
            continue
        out[key] = spec[key][0](value)
    return out


@dataclass(frozen=True)
class MethodConfig:
    """A method id plus its validated hyperparameters."""

    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", _validate_params(self.method, self.params))

    def replace(self, **updates) -> "MethodConfig":
        merged = dict(self.params)
        merged.update(updates)
        return MethodConfig(self.method, merged)


# ---------------------------------------------------------------------------
# logit-only scorers
# ---------------------------------------------------------------------------


def score_msp(logits: np.ndarray) -> np.ndarray:
    """Maximum softmax probability."""
    return batch_softmax(logits).max(axis=1)


def score_mls(logits: np.ndarray) -> np.ndarray:
    """Maximum raw logit."""
    return np.asarray(logits, dtype=np.float64).max(axis=1)


def score_energy(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """T * log-sum-exp of logits / T."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    return temperature * log_sum_exp(z, axis=1)


def score_tempscale(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Maximum softmax probability at the calibrated temperature."""
    return batch_softmax(logits, temperature).max(axis=1)


def score_gen(
    logits: np.ndarray, gamma: float, m: int, sum_all: bool = False
) -> np.ndarray:
    """Negative generalized-entropy sum over the top-M softmax probabilities.

    ``sum_all`` switches to summing over every class instead of the top M.
    """
    probs = batch_softmax(logits)
    c = probs.shape[1]
    take = c if sum_all else min(m, c)
    top = -np.sort(-probs, axis=1)[:, :take]
    return -np.sum(top**gamma * (1.0 - top) ** gamma, axis=1)


def score_mcdropout(prob_stack: np.ndarray) -> np.ndarray:
    """Negative entropy of the mean predictive distribution over the
    dropout samples; natural log, 0*log 0 = 0."""
    stack = np.asarray(prob_stack, dtype=np.float64)
    if stack.ndim != 3:
        raise DimensionMismatch(f"prob stack must be (N, T, C), got {stack.shape}")
    mean = stack.mean(axis=1)
    return xlogy(mean, mean).sum(axis=1)


def score_odin(odin_logits: np.ndarray, temperature: float = 1000.0) -> np.ndarray:
    """Maximum temperature-scaled softmax over input-perturbed logits.

    The perturbation itself happens in the extractor; this side only sees
    the resulting logits.
    """
    return batch_softmax(odin_logits, temperature).max(axis=1)


def score_klmatch(logits: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Negative minimum KL divergence from the softmax output to any class
    prototype distribution; prototype entries floored at 1e-12."""
    probs = batch_softmax(logits)
    protos = np.asarray(prototypes, dtype=np.float64)
    if protos.ndim != 2 or protos.shape[1] != probs.shape[1]:
        raise DimensionMismatch(
            f"prototypes must be (C, {probs.shape[1]}), got {protos.shape}"
        )
    log_protos = np.log(np.maximum(protos, 1e-12))
    plogp = xlogy(probs, probs).sum(axis=1)
    divergences = plogp[:, None] - probs @ log_protos.T
    return -divergences.min(axis=1)


def score_gradnorm(features: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """L1 distance of the softmax output from uniform, times the feature
    L1 norm."""
    probs = batch_softmax(logits)
    c = probs.shape[1]
    l1 = np.abs(probs - 1.0 / c).sum(axis=1)
    return l1 * np.abs(np.asarray(features, dtype=np.float64)).sum(axis=1)


# ---------------------------------------------------------------------------
# distance scorers
# ---------------------------------------------------------------------------


def score_mahalanobis(
    features: np.ndarray, class_means: np.ndarray, cov_inv: np.ndarray
) -> np.ndarray:
    """Largest negative squared Mahalanobis distance to any class mean."""
    z = np.asarray(features, dtype=np.float64)
    best = np.full(z.shape[0], -np.inf)
    for mu in class_means:
        delta = z - mu
        quad = np.einsum("nd,de,ne->n", delta, cov_inv, delta)
        np.maximum(best, -quad, out=best)
    return best


def score_rmds(
    features: np.ndarray,
    class_means: np.ndarray,
    per_class_cov_inv: np.ndarray,
    background_mean: np.ndarray,
    background_cov_inv: np.ndarray,
) -> np.ndarray:
    """Mahalanobis distances relative to a background Gaussian over all
    training data: score = -min_c (d_c - d_background)."""
    z = np.asarray(features, dtype=np.float64)
    delta0 = z - background_mean
    bg = np.einsum("nd,de,ne->n", delta0, background_cov_inv, delta0)
    worst = np.full(z.shape[0], np.inf)
    for mu, inv in zip(class_means, per_class_cov_inv):
        delta = z - mu
        quad = np.einsum("nd,de,ne->n", delta, inv, delta)
        np.minimum(worst, quad - bg, out=worst)
    return -worst


def _normalize_rows(features: np.ndarray, what: str) -> np.ndarray:
    z = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateData(f"zero-norm {what} at sample {int(zero[0])}")
    return z / norms[:, None]


def _query_blocks(n: int, m: int):
    # cap scratch memory at ~32 MB of float64 per block
    block = max(1, int(4_000_000 // max(1, m)))
    for start in range(0, n, block):
        yield start, min(n, start + block)


def score_knn(features: np.ndarray, index: np.ndarray, k: int) -> np.ndarray:
    """Negative distance to the k-th nearest normalized training feature."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if k > index.shape[0]:
        raise ConfigError(f"K={k} exceeds index size {index.shape[0]}")
    if index.shape[1] != np.asarray(features).shape[1]:
        raise DimensionMismatch(
            f"index dim {index.shape[1]} != feature dim {np.asarray(features).shape[1]}"
        )
    zhat = _normalize_rows(features, "feature")
    out = np.empty(zhat.shape[0])
    for lo, hi in _query_blocks(zhat.shape[0], index.shape[0]):
        sims = zhat[lo:hi] @ index.T
        sq = np.maximum(2.0 - 2.0 * sims, 0.0)
        # the cosine identity loses ~1e-8 of precision near zero distance, so
        # it only selects the k-th neighbour; the distance itself is
        # recomputed exactly from the difference vector
        kth = np.argpartition(sq, k - 1, axis=1)[:, k - 1]
        diff = zhat[lo:hi] - index[kth]
        out[lo:hi] = -np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def score_fdbd(
    features: np.ndarray,
    logits: np.ndarray,
    head: LinearHead,
    train_mean: np.ndarray,
    distance_as_normalizer: bool = True,
    negate: bool = False,
) -> np.ndarray:
    """Mean rescaled decision-boundary distance from the predicted class to
    every other class, optionally divided by the distance to the training
    mean. Positive orientation by default; ``negate`` flips the sign."""
    z = np.asarray(features, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    c = head.num_classes
    if c < 2:
        raise DegenerateData("boundary distances need at least 2 classes")
    preds = logits.argmax(axis=1)
    recomputed = head.logits(z)
    mean_dist = np.empty(z.shape[0])
    for y in np.unique(preds):
        rows = preds == y
        wdiff = head.weights[y] - head.weights  # (C, d)
        norms = np.linalg.norm(wdiff, axis=1)
        degenerate = np.flatnonzero((norms == 0) & (np.arange(c) != y))
        if degenerate.size:
            raise DegenerateData(
                f"degenerate class pair ({int(y)}, {int(degenerate[0])})"
            )
        gaps = np.abs(recomputed[rows, y][:, None] - recomputed[rows])  # (n, C)
        with np.errstate(divide="ignore", invalid="ignore"):
            dists = gaps / norms
        dists[:, y] = 0.0
        mean_dist[rows] = dists.sum(axis=1) / (c - 1)
    if distance_as_normalizer:
        denom = np.linalg.norm(z - train_mean, axis=1)
        zero = np.flatnonzero(denom == 0)
        if zero.size:
            raise DegenerateData(
                f"zero distance to training mean at sample {int(zero[0])}"
            )
        mean_dist = mean_dist / denom
    return -mean_dist if negate else mean_dist


# ---------------------------------------------------------------------------
# subspace scorers
# ---------------------------------------------------------------------------


def score_vim(
    features: np.ndarray,
    logits: np.ndarray,
    train_mean: np.ndarray,
    basis: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Logit log-sum-exp minus alpha times the principal-subspace residual
    norm (the virtual OoD logit)."""
    resid = residual_norms(features, train_mean, basis)
    return -alpha * resid + log_sum_exp(np.asarray(logits, dtype=np.float64), axis=1)


def score_residual(
    features: np.ndarray, train_mean: np.ndarray, basis: np.ndarray
) -> np.ndarray:
    """Negative norm of the feature component outside the principal subspace."""
    return -residual_norms(features, train_mean, basis)


# ---------------------------------------------------------------------------
# head-rewriting scorers
# ---------------------------------------------------------------------------


def score_react(
    features: np.ndarray,
    head: LinearHead,
    threshold: float,
    temperature: float = 1.0,
    scorer: str = "msp",
) -> np.ndarray:
    """Clamp activations at the fitted threshold, push through the head and
    apply MSP (default) or the energy score on top."""
    clamped = np.minimum(np.asarray(features, dtype=np.float64), threshold)
    logits = head.logits(clamped)
    if scorer == "msp":
        return batch_softmax(logits, temperature).max(axis=1)
    if scorer == "energy":
        return score_energy(logits, temperature)
    raise ConfigError(f"scorer must be 'msp' or 'energy', got {scorer!r}")


def score_ash(
    features: np.ndarray, head: LinearHead, percentile: float
) -> np.ndarray:
    """Prune the bottom ``percentile`` percent of each feature vector, scale
    survivors to preserve the activation sum and take the energy of the
    resulting logits (the scaling ASH variant)."""
    z = np.asarray(features, dtype=np.float64)
    n, d = z.shape
    k = keep_count(d, percentile)
    if k == 0:
        raise DegenerateData("zero activation mass: pruning removed every entry")
    # ties broken toward the lower index by the stable sort
    order = np.argsort(-z, axis=1, kind="stable")[:, :k]
    mask = np.zeros_like(z, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    total = z.sum(axis=1)
    survivor = np.where(mask, z, 0.0).sum(axis=1)
    dead = np.flatnonzero(survivor == 0)
    if dead.size:
        raise DegenerateData(f"zero activation mass at sample {int(dead[0])}")
    pruned = np.where(mask, z, 0.0) * (total / survivor)[:, None]
    return log_sum_exp(head.logits(pruned), axis=1)


def score_she(features: np.ndarray, patterns: np.ndarray, beta: float) -> np.ndarray:
    """Log-sum-exp energy over stored class patterns:
    (1/beta) * ln sum_j exp(beta * z . S_j)."""
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    inner = np.asarray(features, dtype=np.float64) @ np.asarray(patterns).T
    return log_sum_exp(beta * inner, axis=1) / beta


def score_rankfeat(
    features: np.ndarray, head: LinearHead, iters: int = 100, tol: float = 1e-10
) -> np.ndarray:
    """Max logit after removing the batch's top singular component.

    The dominant triplet comes from power iteration with a fixed seed, so
    scores are batch-dependent but deterministic for a given batch order.
    """
    z = np.ascontiguousarray(features, dtype=np.float64)
    n, d = z.shape
    if n == 1:
        warnings.warn(
            "single-row batch is rank-1: scores collapse to the max bias",
            RuntimeWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    converged = False
    for _ in range(iters):
        u = z @ v
        w = z.T @ u
        norm_w = np.linalg.norm(w)
        if norm_w == 0:
            converged = True
            break
        v_new = w / norm_w
        if np.dot(v_new, v) < 0:
            v_new = -v_new
        done = np.linalg.norm(v_new - v) < tol
        v = v_new
        if done:
            converged = True
            break
    if not converged:
        # a slow spectral gap (sigma2 close to sigma1) exhausts the
        # iteration budget; finish the triplet with a dense eigensolve of
        # the Gram matrix so the deflation stays exact
        _, vecs = np.linalg.eigh(z.T @ z)
        v = vecs[:, -1]
    u = z @ v
    sigma = np.linalg.norm(u)
    if sigma > 0:
        deflated = z - np.outer(u, v)
    else:
        deflated = z
    return head.logits(deflated).max(axis=1)


def score_dice(features: np.ndarray, head: LinearHead, mask: np.ndarray) -> np.ndarray:
    """Energy of the logits produced by the sparsified head (M * W) z + b."""
    mask = np.asarray(mask)
    if mask.shape != head.weights.shape:
        raise DimensionMismatch(
            f"mask shape {mask.shape} != head weights {head.weights.shape}"
        )
    masked = mask.astype(np.float64) * head.weights
    logits = np.asarray(features, dtype=np.float64) @ masked.T + head.bias
    return log_sum_exp(logits, axis=1)


# ---------------------------------------------------------------------------
# support-set and prototype scorers
# ---------------------------------------------------------------------------


def score_relation(
    features: np.ndarray, support: np.ndarray, power: float
) -> np.ndarray:
    """Sum of the clipped-cosine-power kernel between the normalized query
    and every stored support feature."""
    zhat = _normalize_rows(features, "feature")
    if support.shape[1] != zhat.shape[1]:
        raise DimensionMismatch(
            f"support dim {support.shape[1]} != feature dim {zhat.shape[1]}"
        )
    out = np.empty(zhat.shape[0])
    for lo, hi in _query_blocks(zhat.shape[0], support.shape[0]):
        cos = zhat[lo:hi] @ support.T
        out[lo:hi] = (np.maximum(cos, 0.0) ** power).sum(axis=1)
    return out


def score_openmax(
    logits: np.ndarray,
    mavs: np.ndarray,
    weibull_shape: np.ndarray,
    weibull_scale: np.ndarray,
    weibull_valid: np.ndarray,
    alpha_top: int,
) -> np.ndarray:
    """Max softmax over Weibull-recalibrated activations.

    The top alpha_top activations are shrunk according to the tail CDF at
    their distance from the class's mean activation vector; the shaved mass
    forms an unknown-class activation. The reported score is the max softmax
    over the known classes (renormalized over known classes, so with no
    recalibration it reduces exactly to MSP). Classes whose tail fit was
    degenerate are never recalibrated.
    """
    v = np.asarray(logits, dtype=np.float64)
    n, c = v.shape
    if mavs.shape != (c, c):
        raise DimensionMismatch(f"MAV matrix must be ({c}, {c}), got {mavs.shape}")
    alpha = min(int(alpha_top), c)
    order = np.argsort(-v, axis=1, kind="stable")[:, :alpha]  # (n, alpha)

    cdf = np.zeros((n, c))
    for cls in range(c):
        if not weibull_valid[cls]:
            continue
        dist = np.linalg.norm(v - mavs[cls], axis=1)
        cdf[:, cls] = weibull_cdf(dist, weibull_shape[cls], weibull_scale[cls])

    rank_coef = (alpha - np.arange(1, alpha + 1) + 1.0) / alpha  # (alpha,)
    w = np.ones((n, c))
    shrink = 1.0 - rank_coef[None, :] * np.take_along_axis(cdf, order, axis=1)
    np.put_along_axis(w, order, shrink, axis=1)
    vhat = v * w
    # unknown activation = mass shaved off the top classes; recorded for
    # completeness even though the known-class softmax does not use it
    _unknown = (v - vhat).sum(axis=1)
    return batch_softmax(vhat).max(axis=1)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _need_logits(data: FeatureSet, method: str) -> np.ndarray:
    if data.logits is None:
        raise MissingChannel(f"{method} requires the logits channel")
    return data.logits


def _need_head(head: Optional[LinearHead], method: str) -> LinearHead:
    if head is None:
        raise MissingArtifact(f"{method} requires a linear head")
    return head


def _need_stats(stats: Optional[FittedStats], method: str) -> FittedStats:
    if stats is None:
        raise MissingArtifact(f"{method} requires fitted statistics")
    return stats


def _need_field(stats: Optional[FittedStats], name: str, method: str):
    s = _need_stats(stats, method)
    v = getattr(s, name)
    if v is None:
        raise MissingArtifact(f"{method} requires fitted {name}")
    return v


def _resolve_basis(stats: FittedStats, dim, method: str) -> np.ndarray:
    basis = _need_field(stats, "principal_basis", method)
    if dim is None:
        dim = stats.subspace_dim
    if dim is None:
        raise MissingArtifact(f"{method} requires a fitted subspace dim")
    if dim > basis.shape[1]:
        raise ConfigError(
            f"dim {dim} exceeds fitted basis width {basis.shape[1]}"
        )
    return basis[:, :dim]


def compute_score(
    method: str,
    data: FeatureSet,
    stats: Optional[FittedStats] = None,
    head: Optional[LinearHead] = None,
    aug: Optional[AugmentedDump] = None,
    params: Optional[Mapping] = None,
) -> ScoreVector:
    """Score a batch with one method, resolving artifacts and defaults.

    Raises MissingChannel / MissingArtifact when the dump or stats lack a
    required piece, ConfigError for invalid hyperparameters, and
    DimensionMismatch when artifacts disagree with the data.
    """
    if isinstance(method, MethodConfig):
        params = method.params
        method = method.method
        p = dict(params)
    else:
        p = _validate_params(method, params)
    if stats is not None:
        stats.check_compatible(data)
    if head is not None and head.feature_dim != data.dim:
        raise DimensionMismatch(
            f"head expects d={head.feature_dim}, data has d={data.dim}"
        )

    if method == "msp":
        scores = score_msp(_need_logits(data, method))
    elif method == "mls":
        scores = score_mls(_need_logits(data, method))
    elif method == "energy":
        scores = score_energy(_need_logits(data, method), p["T"])
    elif method == "tempscale":
        t_star = _need_field(stats, "temperature", method)
        scores = score_tempscale(_need_logits(data, method), t_star)
    elif method == "gen":
        scores = score_gen(_need_logits(data, method), p["gamma"], p["M"], p["sum_all"])
    elif method == "mcdropout":
        if aug is None or aug.dropout_prob_stacks is None:
            raise MissingChannel("mcdropout requires the dropout probability stack")
        scores = score_mcdropout(aug.dropout_prob_stacks)
    elif method == "odin":
        if aug is None or aug.odin_logits is None:
            raise MissingChannel("odin requires the perturbed-logits channel")
        scores = score_odin(aug.odin_logits, p["T"])
    elif method == "klmatch":
        protos = _need_field(stats, "prototypes", method)
        scores = score_klmatch(_need_logits(data, method), protos)
    elif method == "mahalanobis":
        means = _need_field(stats, "class_means", method)
        cov_inv = _need_field(stats, "shared_cov_inv", method)
        scores = score_mahalanobis(data.features, means, cov_inv)
    elif method == "rmds":
        scores = score_rmds(
            data.features,
            _need_field(stats, "class_means", method),
            _need_field(stats, "per_class_cov_inv", method),
            _need_field(stats, "background_mean", method),
            _need_field(stats, "background_cov_inv", method),
        )
    elif method == "knn":
        index = _need_field(stats, "knn_features", method)
        scores = score_knn(data.features, index, p["K"])
    elif method == "fdbd":
        scores = score_fdbd(
            data.features,
            _need_logits(data, method),
            _need_head(head, method),
            _need_field(stats, "train_mean", method),
            p["distance_as_normalizer"],
            p["negate"],
        )
    elif method == "vim":
        s = _need_stats(stats, method)
        basis = _resolve_basis(s, p["dim"], method)
        dim = basis.shape[1]
        if dim not in s.vim_alpha:
            raise MissingArtifact(f"vim alpha not fitted for dim {dim}")
        logits = (
            data.logits
            if data.logits is not None
            else _need_head(head, method).logits(data.features)
        )
        scores = score_vim(
            data.features,
            logits,
            _need_field(stats, "train_mean", method),
            basis,
            s.vim_alpha[dim],
        )
    elif method == "residual":
        s = _need_stats(stats, method)
        basis = _resolve_basis(s, p["dim"], method)
        scores = score_residual(
            data.features, _need_field(stats, "train_mean", method), basis
        )
    elif method == "react":
        threshold = _need_field(stats, "react_threshold", method)
        scores = score_react(
            data.features, _need_head(head, method), threshold, p["T"], p["scorer"]
        )
    elif method == "ash":
        percentile = p["percentile"]
        if percentile is None:
            percentile = (
                stats.ash_percentile
                if stats is not None and stats.ash_percentile is not None
                else 95.0
            )
        scores = score_ash(data.features, _need_head(head, method), percentile)
    elif method == "she":
        patterns = _need_field(stats, "she_patterns", method)
        beta = p["beta"]
        if beta is None:
            beta = stats.she_beta if stats.she_beta is not None else 1.0
        scores = score_she(data.features, patterns, beta)
    elif method == "rankfeat":
        scores = score_rankfeat(data.features, _need_head(head, method))
    elif method == "gradnorm":
        scores = score_gradnorm(data.features, _need_logits(data, method))
    elif method == "relation":
        support = _need_stats(stats, method).relation_support
        if support is None:
            raise MissingArtifact("relation requires the fitted support set")
        scores = score_relation(data.features, support, p["pow"])
    elif method == "openmax":
        s = _need_stats(stats, method)
        alpha_top = p["alpha_top"]
        if alpha_top is None:
            alpha_top = s.openmax_alpha_top if s.openmax_alpha_top is not None else 10
        scores = score_openmax(
            _need_logits(data, method),
            _need_field(stats, "openmax_mav", method),
            _need_field(stats, "weibull_shape", method),
            _need_field(stats, "weibull_scale", method),
            _need_field(stats, "weibull_valid", method),
            alpha_top,
        )
    elif method == "dice":
        mask = _need_field(stats, "dice_mask", method)
        scores = score_dice(data.features, _need_head(head, method), mask)
    else:  # pragma: no cover - _validate_params already rejected it
        raise ConfigError(f"unknown method id {method!r}")

    return ScoreVector(method=method, scores=np.asarray(scores, dtype=np.float64))
