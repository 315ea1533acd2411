"""Training-side statistics: everything the score functions need that must be
estimated from ID training (or validation) dumps.

Fits are deterministic given (data, config, seed); refitting reproduces
bit-identical artifacts. Covariances always receive a trace-scaled ridge so
singular cases (few samples per class, N < d) stay invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional

import numpy as np
import scipy.linalg

from .data_model import FeatureSet, LinearHead, batch_softmax, log_sum_exp
from .errors import ConfigError, DegenerateData, DimensionMismatch, FitFailure

__all__ = [
    "FitConfig",
    "FittedStats",
    "fit_class_means",
    "fit_shared_cov_inv",
    "fit_per_class_cov_inv",
    "fit_background_gaussian",
    "fit_principal_subspace",
    "fit_vim_alpha",
    "fit_knn_index",
    "fit_prototypes",
    "fit_temperature",
    "fit_react_threshold",
    "fit_dice_mask",
    "fit_she_patterns",
    "fit_openmax_tails",
    "fit_stats",
    "weibull_mle",
    "weibull_cdf",
    "residual_norms",
    "keep_count",
]

SHRINKAGE_EPS = 1e-6


@dataclass(frozen=True)
class FitConfig:
    """Knobs for ``fit_stats``. Defaults follow common practice for the
    methods whose settings are not swept."""

    seed: int = 0
    shrinkage_eps: float = SHRINKAGE_EPS
    knn_cap: int = 50_000
    react_percentile: float = 99.0
    ash_percentile: float = 95.0
    dice_sparsity: float = 90.0
    she_beta: float = 1.0
    openmax_tail: int = 20
    openmax_alpha_top: int = 10
    subspace_dim: Optional[int] = None  # None: d // 8, at least 1
    extra_subspace_dims: tuple[int, ...] = ()  # additional dims to prepare for sweeps
    temperature_bounds: tuple[float, float] = (0.01, 100.0)


@dataclass(frozen=True)
class FittedStats:
    """Immutable bundle of fitted artifacts, keyed loosely by method family.

    Any field may be None when the corresponding methods were not requested;
    score functions raise ``MissingArtifact`` on absent pieces.
    """

    feature_dim: int
    num_classes: Optional[int] = None

    class_means: Optional[np.ndarray] = None  # (C, d)
    shared_cov_inv: Optional[np.ndarray] = None  # (d, d)
    per_class_cov_inv: Optional[np.ndarray] = None  # (C, d, d)
    background_mean: Optional[np.ndarray] = None  # (d,)
    background_cov_inv: Optional[np.ndarray] = None  # (d, d)

    train_mean: Optional[np.ndarray] = None  # (d,)
    principal_basis: Optional[np.ndarray] = None  # (d, D_max)
    principal_eigenvalues: Optional[np.ndarray] = None  # (D_max,), non-increasing
    subspace_dim: Optional[int] = None  # default D for vim / residual
    vim_alpha: dict = field(default_factory=dict)  # {D: alpha}

    knn_features: Optional[np.ndarray] = None  # (M, d), rows unit-norm
    knn_cap: Optional[int] = None
    knn_seed: Optional[int] = None

    prototypes: Optional[np.ndarray] = None  # (C, C) mean softmax per predicted class
    prototype_missing: tuple[int, ...] = ()

    temperature: Optional[float] = None
    react_threshold: Optional[float] = None
    react_percentile: Optional[float] = None
    ash_percentile: Optional[float] = None

    dice_mask: Optional[np.ndarray] = None  # (C, d) uint8
    dice_sparsity: Optional[float] = None
    dice_degenerate: bool = False

    she_patterns: Optional[np.ndarray] = None  # (C, d)
    she_fallback_classes: tuple[int, ...] = ()
    she_beta: Optional[float] = None

    openmax_mav: Optional[np.ndarray] = None  # (C, C) mean logit vectors
    weibull_shape: Optional[np.ndarray] = None  # (C,)
    weibull_scale: Optional[np.ndarray] = None  # (C,)
    weibull_valid: Optional[np.ndarray] = None  # (C,) bool; False: never recalibrate
    openmax_shrunk_classes: tuple[int, ...] = ()
    openmax_tail: Optional[int] = None
    openmax_alpha_top: Optional[int] = None

    thresholds: dict = field(default_factory=dict)  # method -> threshold record

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                view = v.view()
                view.flags.writeable = False
                object.__setattr__(self, f.name, view)

    @property
    def relation_support(self) -> Optional[np.ndarray]:
        """Support set for the relation kernel: the capped normalized
        training features shared with the k-NN index."""
        return self.knn_features

    def check_compatible(self, other) -> None:
        """Raise DimensionMismatch unless ``other`` (a FeatureSet, LinearHead
        or integer dimension) lives in the same feature space."""
        if isinstance(other, FeatureSet):
            d = other.dim
        elif isinstance(other, LinearHead):
            d = other.feature_dim
        else:
            d = int(other)
        if d != self.feature_dim:
            raise DimensionMismatch(
                f"dimension mismatch: stats fitted with d={self.feature_dim}, "
                f"input has d={d}"
            )

    # -- serialization support (used by interchange.save_stats/load_stats) --

    def to_payload(self) -> tuple[dict, dict]:
        """Split into (plain-JSON meta, named float/int arrays)."""
        meta: dict = {}
        arrays: dict = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, np.ndarray):
                arrays[f.name] = v
            elif isinstance(v, tuple):
                meta[f.name] = list(v)
            elif isinstance(v, dict):
                meta[f.name] = {str(k): vv for k, vv in v.items()}
            elif isinstance(v, (bool, int, float, str)):
                meta[f.name] = v
            else:
                raise TypeError(f"unserializable stats field {f.name}: {type(v)}")
        return meta, arrays

    @classmethod
    def from_payload(cls, meta: dict, arrays: dict) -> "FittedStats":
        kwargs: dict = {}
        tuple_fields = {
            "prototype_missing",
            "she_fallback_classes",
            "openmax_shrunk_classes",
            "extra_subspace_dims",
        }
        for f in fields(cls):
            if f.name in arrays:
                kwargs[f.name] = arrays[f.name]
            elif f.name in meta:
                v = meta[f.name]
                if f.name == "vim_alpha":
                    v = {int(k): float(vv) for k, vv in v.items()}
                elif f.name in tuple_fields:
                    v = tuple(v)
                kwargs[f.name] = v
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# shared numerics
# ---------------------------------------------------------------------------


def regularized_inverse(cov: np.ndarray, eps: float = SHRINKAGE_EPS) -> np.ndarray:
    """Ridge-regularize then invert a covariance symmetrically.

    The ridge is eps * (tr(cov)/d); a zero-trace covariance falls back to a
    plain eps * I ridge so the all-identical-samples case stays invertible.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if not np.all(np.isfinite(cov)):
        raise FitFailure("non-finite covariance")
    d = cov.shape[0]
    scale = float(np.trace(cov)) / d
    if scale <= 0.0:
        scale = 1.0
    reg = cov + (eps * scale) * np.eye(d)
    try:
        cho = scipy.linalg.cho_factor(reg, lower=True)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - ridge makes this rare
        raise FitFailure(f"covariance not positive definite after ridge: {exc}")
    inv = scipy.linalg.cho_solve(cho, np.eye(d))
    # one residual-correction sweep sharpens inv for ill-conditioned inputs
    inv = inv + inv @ (np.eye(d) - reg @ inv)
    return (inv + inv.T) / 2.0


def residual_norms(
    features: np.ndarray, mean: np.ndarray, basis: np.ndarray
) -> np.ndarray:
    """Norm of the component of (z - mean) outside the span of ``basis``.

    ``basis`` is (d, D) with orthonormal columns; D = 0 gives plain
    centered norms.
    """
    centered = np.asarray(features, dtype=np.float64) - mean
    if basis.shape[1] == 0:
        return np.linalg.norm(centered, axis=-1)
    coefs = centered @ basis
    resid = centered - coefs @ basis.T
    return np.linalg.norm(resid, axis=-1)


def keep_count(d: int, percent: float) -> int:
    """Entries kept when pruning the bottom ``percent``% of d values:
    d - rint(d * percent / 100)."""
    if not 0.0 <= percent <= 100.0:
        raise ConfigError(f"percent must be in [0, 100], got {percent}")
    return d - int(np.rint(d * percent / 100.0))


def _require_labels(fs: FeatureSet, what: str) -> np.ndarray:
    if fs.labels is None:
        raise FitFailure(f"{what} requires labels")
    return fs.labels


def _require_logits(fs: FeatureSet, what: str) -> np.ndarray:
    if fs.logits is None:
        raise FitFailure(f"{what} requires logits")
    return fs.logits


# ---------------------------------------------------------------------------
# per-artifact fits
# ---------------------------------------------------------------------------


def fit_class_means(train: FeatureSet, num_classes: Optional[int] = None) -> np.ndarray:
    """Per-class feature means; every class in [0, C) must be populated."""
    labels = _require_labels(train, "fit_class_means")
    c = num_classes if num_classes is not None else train.num_classes
    if c is None or c < 1:
        raise FitFailure("cannot infer class count for fit_class_means")
    means = np.empty((c, train.dim), dtype=np.float64)
    for cls in range(c):
        mask = labels == cls
        if not mask.any():
            raise FitFailure(f"class {cls} has no samples")
        means[cls] = train.features[mask].mean(axis=0)
    return means


def fit_shared_cov_inv(
    train: FeatureSet, means: np.ndarray, eps: float = SHRINKAGE_EPS
) -> np.ndarray:
    """Inverse of the label-pooled within-class covariance (ridge-shrunk)."""
    labels = _require_labels(train, "fit_shared_cov_inv")
    centered = train.features - means[labels]
    cov = centered.T @ centered / centered.shape[0]
    return regularized_inverse(cov, eps)


def fit_per_class_cov_inv(
    train: FeatureSet, means: np.ndarray, eps: float = SHRINKAGE_EPS
) -> np.ndarray:
    """Per-class covariance inverses, each shrunk independently."""
    labels = _require_labels(train, "fit_per_class_cov_inv")
    c, d = means.shape
    out = np.empty((c, d, d), dtype=np.float64)
    for cls in range(c):
        chunk = train.features[labels == cls] - means[cls]
        if chunk.shape[0] == 0:
            raise FitFailure(f"class {cls} has no samples")
        cov = chunk.T @ chunk / chunk.shape[0]
        out[cls] = regularized_inverse(cov, eps)
    return out


def fit_background_gaussian(
    train: FeatureSet, eps: float = SHRINKAGE_EPS
) -> tuple[np.ndarray, np.ndarray]:
    """Single Gaussian over all training features, labels ignored."""
    if train.n == 0:
        raise FitFailure("empty training set")
    mu = train.features.mean(axis=0)
    centered = train.features - mu
    cov = centered.T @ centered / centered.shape[0]
    return mu, regularized_inverse(cov, eps)


def fit_principal_subspace(
    train: FeatureSet, dim: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center of the training features plus the top-``dim`` eigenvectors of
    their covariance.

    Returns (train_mean, basis (d, dim), eigenvalues (dim,) non-increasing).
    Each eigenvector is sign-fixed so its first nonzero component is positive.
    """
    if train.n == 0:
        raise FitFailure("empty training set")
    d = train.dim
    if not 0 <= dim <= d:
        raise ConfigError(f"subspace dim must be in [0, {d}], got {dim}")
    mu = train.features.mean(axis=0)
    if dim == 0:
        return mu, np.zeros((d, 0)), np.zeros(0)
    centered = train.features - mu
    cov = centered.T @ centered / centered.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order][:dim]
    basis = eigvecs[:, order][:, :dim].copy()
    for j in range(dim):
        col = basis[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            basis[:, j] = -col
    return mu, basis, eigvals


def fit_vim_alpha(
    train: FeatureSet,
    head: LinearHead,
    train_mean: np.ndarray,
    basis: np.ndarray,
) -> float:
    """Ratio matching the logit scale to the residual scale:
    sum of per-sample max logits over sum of subspace residual norms."""
    if train.n == 0:
        raise FitFailure("empty training set")
    if basis.shape[1] >= train.dim:
        raise DegenerateData("degenerate residual: subspace spans the full space")
    resid = residual_norms(train.features, train_mean, basis)
    denom = float(resid.sum())
    centered_scale = float(
        np.linalg.norm(train.features - train_mean, axis=-1).mean()
    )
    if denom <= train.n * 1e-9 * (1.0 + centered_scale):
        raise DegenerateData("degenerate residual: training data lies in the subspace")
    alpha = float(head.logits(train.features).max(axis=1).sum()) / denom
    if alpha <= 0:
        raise DegenerateData(f"vim alpha must be positive, got {alpha}")
    return alpha


def fit_knn_index(
    train: FeatureSet, cap: int = 50_000, seed: int = 0
) -> np.ndarray:
    """L2-normalized training features, uniformly subsampled to ``cap``
    rows (seeded) when the training set is larger."""
    norms = np.linalg.norm(train.features, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise FitFailure(f"zero-norm feature at sample {int(zero[0])}")
    normalized = train.features / norms[:, None]
    if train.n > cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(train.n, size=cap, replace=False))
        normalized = normalized[idx]
    return normalized


def fit_prototypes(val: FeatureSet) -> tuple[np.ndarray, tuple[int, ...]]:
    """Mean softmax vector over validation samples grouped by predicted
    class. Classes never predicted get the uniform vector and are flagged."""
    logits = _require_logits(val, "fit_prototypes")
    if val.n == 0:
        raise FitFailure("empty validation set")
    c = logits.shape[1]
    preds = logits.argmax(axis=1)
    probs = batch_softmax(logits)
    protos = np.empty((c, c), dtype=np.float64)
    missing = []
    for cls in range(c):
        mask = preds == cls
        if mask.any():
            protos[cls] = probs[mask].mean(axis=0)
        else:
            protos[cls] = 1.0 / c
            missing.append(cls)
    return protos, tuple(missing)


def _mean_nll(logits: np.ndarray, labels: np.ndarray, log_t: float) -> float:
    z = logits / math.exp(log_t)
    lse = log_sum_exp(z, axis=1)
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


def fit_temperature(
    val: FeatureSet,
    bounds: tuple[float, float] = (0.01, 100.0),
    tol: float = 1e-4,
) -> float:
    """Temperature minimizing validation NLL, golden-section searched in
    log T. Guaranteed no worse than T = 1."""
    logits = _require_logits(val, "fit_temperature")
    labels = _require_labels(val, "fit_temperature")
    if val.n == 0:
        raise FitFailure("empty validation set")
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1 = _mean_nll(logits, labels, x1)
    f2 = _mean_nll(logits, labels, x2)
    while (b - a) > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = _mean_nll(logits, labels, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = _mean_nll(logits, labels, x2)
    log_t = (a + b) / 2.0
    if lo <= 0.0 <= hi and _mean_nll(logits, labels, log_t) > _mean_nll(
        logits, labels, 0.0
    ):
        return 1.0
    return math.exp(log_t)


def fit_react_threshold(train: FeatureSet, percentile: float) -> float:
    """Percentile (linear interpolation) of the pooled distribution of all
    activation values across all training features."""
    if not 0.0 <= percentile <= 100.0:
        raise ConfigError(f"percentile must be in [0, 100], got {percentile}")
    if train.n == 0:
        raise FitFailure("empty training set")
    return float(np.percentile(train.features.ravel(), percentile))


def fit_dice_mask(
    train: FeatureSet, head: LinearHead, sparsity: float
) -> tuple[np.ndarray, bool]:
    """Per-class binary mask keeping the highest mean logit contributions
    W[c, j] * mean(z[:, j]); ties keep the lower index. Returns the mask and
    whether it degenerated to all-zero."""
    if train.n == 0:
        raise FitFailure("empty training set")
    head_d = head.feature_dim
    if head_d != train.dim:
        raise DimensionMismatch(
            f"feature_dim mismatch: head d={head_d}, dump d={train.dim}"
        )
    mean_feat = train.features.mean(axis=0)
    contrib = head.weights * mean_feat[None, :]
    c, d = contrib.shape
    k = keep_count(d, sparsity)
    mask = np.zeros((c, d), dtype=np.uint8)
    if k > 0:
        order = np.argsort(-contrib, axis=1, kind="stable")
        rows = np.repeat(np.arange(c), k)
        mask[rows, order[:, :k].ravel()] = 1
    return mask, k == 0


def fit_she_patterns(
    train: FeatureSet, head: LinearHead
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Mean feature of samples both labeled and predicted as each class;
    classes without correct predictions fall back to the class mean."""
    labels = _require_labels(train, "fit_she_patterns")
    c = head.num_classes
    preds = head.logits(train.features).argmax(axis=1)
    patterns = np.empty((c, train.dim), dtype=np.float64)
    fallback = []
    for cls in range(c):
        correct = (labels == cls) & (preds == cls)
        if correct.any():
            patterns[cls] = train.features[correct].mean(axis=0)
        else:
            labeled = labels == cls
            if not labeled.any():
                raise FitFailure(f"class {cls} has no samples")
            patterns[cls] = train.features[labeled].mean(axis=0)
            fallback.append(cls)
    return patterns, tuple(fallback)


def weibull_mle(
    tail: np.ndarray, tol: float = 1e-8, max_iter: int = 200
) -> tuple[float, float]:
    """Two-parameter Weibull fit by Newton iteration on the shape equation.

    Raises DegenerateData for tails without spread (no MLE exists) and
    FitFailure when the iteration does not converge.
    """
    x = np.asarray(tail, dtype=np.float64)
    x = x[x > 0]
    if x.size < 2:
        raise DegenerateData("Weibull tail needs at least two positive values")
    top = float(x.max())
    if (top - float(x.min())) <= 1e-12 * top:
        raise DegenerateData("zero-variance tail has no Weibull MLE")
    s = x / top
    ln_s = np.log(s)
    mean_ln = float(ln_s.mean())
    sd_ln = float(ln_s.std())
    k = 1.2 / sd_ln
    converged = False
    for _ in range(max_iter):
        sk = s**k
        a = float(sk.sum())
        b = float((sk * ln_s).sum())
        c = float((sk * ln_s * ln_s).sum())
        g = b / a - 1.0 / k - mean_ln
        gp = (c * a - b * b) / (a * a) + 1.0 / (k * k)
        k_new = k - g / gp
        if k_new <= 0:
            k_new = k / 2.0
        if abs(k_new - k) < tol:
            k = k_new
            converged = True
            break
        k = k_new
    if not converged:
        raise FitFailure("Weibull MLE did not converge")
    lam = float(np.mean(s**k) ** (1.0 / k)) * top
    return float(k), lam


def weibull_cdf(x, shape: float, scale: float) -> np.ndarray:
    """CDF of Weibull(shape, scale): 1 - exp(-(x/scale)^shape), 0 for x <= 0."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(arr)
    pos = arr > 0
    out[pos] = 1.0 - np.exp(-((arr[pos] / scale) ** shape))
    return out


@dataclass(frozen=True)
class OpenMaxTails:
    mavs: np.ndarray  # (C, C)
    shapes: np.ndarray  # (C,)
    scales: np.ndarray  # (C,)
    valid: np.ndarray  # (C,) bool
    shrunk: tuple[int, ...]  # classes whose tail was shorter than requested


def fit_openmax_tails(
    train: FeatureSet,
    head: LinearHead,
    tail: int = 20,
    alpha_top: int = 10,
) -> OpenMaxTails:
    """Per-class mean activation (logit) vectors of correctly classified
    samples, plus Weibull fits to the largest distances from them.

    Classes with degenerate tails (or too few correct samples to fit) are
    marked invalid and never recalibrated at score time.
    """
    if tail < 2:
        raise ConfigError(f"tail size must be >= 2, got {tail}")
    if alpha_top < 1:
        raise ConfigError(f"alpha_top must be >= 1, got {alpha_top}")
    labels = _require_labels(train, "fit_openmax_tails")
    c = head.num_classes
    logits = head.logits(train.features)
    preds = logits.argmax(axis=1)
    mavs = np.zeros((c, c), dtype=np.float64)
    shapes = np.ones(c, dtype=np.float64)
    scales = np.ones(c, dtype=np.float64)
    valid = np.zeros(c, dtype=bool)
    shrunk = []
    for cls in range(c):
        correct = (labels == cls) & (preds == cls)
        n_correct = int(correct.sum())
        if n_correct == 0:
            labeled = labels == cls
            if labeled.any():
                mavs[cls] = logits[labeled].mean(axis=0)
            shrunk.append(cls)
            continue
        av = logits[correct]
        mavs[cls] = av.mean(axis=0)
        dists = np.linalg.norm(av - mavs[cls], axis=1)
        eta = min(tail, n_correct)
        if eta < tail:
            shrunk.append(cls)
        if eta < 2:
            continue
        tail_vals = np.sort(dists)[-eta:]
        try:
            shapes[cls], scales[cls] = weibull_mle(tail_vals)
        except DegenerateData:
            continue
        valid[cls] = True
    return OpenMaxTails(mavs, shapes, scales, valid, tuple(shrunk))


# ---------------------------------------------------------------------------
# one-call fit covering a set of methods
# ---------------------------------------------------------------------------

_NEEDS_CLASS_MEANS = {"mahalanobis", "rmds"}
_NEEDS_SUBSPACE = {"vim", "residual"}
_NEEDS_KNN = {"knn", "relation"}


def fit_stats(
    train: FeatureSet,
    head: Optional[LinearHead],
    methods: Iterable[str],
    val: Optional[FeatureSet] = None,
    config: FitConfig = FitConfig(),
) -> FittedStats:
    """Fit exactly the artifacts the requested methods need.

    ``val`` supplies the dumps for temperature scaling and class-prototype
    estimation; ``head`` is required by methods that touch classifier
    weights (vim, fdbd, react, ash, dice, she, rankfeat, openmax).
    """
    methods = set(methods)
    d = train.dim
    kwargs: dict = {
        "feature_dim": d,
        "num_classes": head.num_classes if head is not None else train.num_classes,
    }

    def need_head(method: str) -> LinearHead:
        if head is None:
            raise FitFailure(f"{method} requires a linear head")
        return head

    if methods & _NEEDS_CLASS_MEANS:
        means = fit_class_means(
            train, head.num_classes if head is not None else None
        )
        kwargs["class_means"] = means
        if "mahalanobis" in methods:
            kwargs["shared_cov_inv"] = fit_shared_cov_inv(
                train, means, config.shrinkage_eps
            )
        if "rmds" in methods:
            kwargs["per_class_cov_inv"] = fit_per_class_cov_inv(
                train, means, config.shrinkage_eps
            )
            mu0, cov0_inv = fit_background_gaussian(train, config.shrinkage_eps)
            kwargs["background_mean"] = mu0
            kwargs["background_cov_inv"] = cov0_inv

    if methods & (_NEEDS_SUBSPACE | {"fdbd"}):
        if methods & _NEEDS_SUBSPACE:
            base_dim = config.subspace_dim
            if base_dim is None:
                base_dim = max(1, min(d - 1, d // 8))
            dims = sorted(
                {base_dim}
                | {int(x) for x in config.extra_subspace_dims if 0 < int(x) < d}
            )
            mu_train, basis, eigvals = fit_principal_subspace(train, max(dims))
            kwargs["train_mean"] = mu_train
            kwargs["principal_basis"] = basis
            kwargs["principal_eigenvalues"] = eigvals
            kwargs["subspace_dim"] = base_dim
            if "vim" in methods:
                h = need_head("vim")
                kwargs["vim_alpha"] = {
                    dim: fit_vim_alpha(train, h, mu_train, basis[:, :dim])
                    for dim in dims
                }
        else:
            kwargs["train_mean"] = train.features.mean(axis=0)

    if methods & _NEEDS_KNN:
        kwargs["knn_features"] = fit_knn_index(train, config.knn_cap, config.seed)
        kwargs["knn_cap"] = config.knn_cap
        kwargs["knn_seed"] = config.seed

    if "klmatch" in methods:
        if val is None:
            raise FitFailure("klmatch requires a validation dump")
        protos, missing = fit_prototypes(val)
        kwargs["prototypes"] = protos
        kwargs["prototype_missing"] = missing

    if "tempscale" in methods:
        if val is None:
            raise FitFailure("tempscale requires a validation dump")
        kwargs["temperature"] = fit_temperature(val, config.temperature_bounds)

    if "react" in methods:
        need_head("react")
        kwargs["react_threshold"] = fit_react_threshold(
            train, config.react_percentile
        )
        kwargs["react_percentile"] = config.react_percentile

    if "ash" in methods:
        need_head("ash")
        kwargs["ash_percentile"] = config.ash_percentile

    if "dice" in methods:
        mask, degenerate = fit_dice_mask(train, need_head("dice"), config.dice_sparsity)
        kwargs["dice_mask"] = mask
        kwargs["dice_sparsity"] = config.dice_sparsity
        kwargs["dice_degenerate"] = degenerate

    if "she" in methods:
        patterns, fallback = fit_she_patterns(train, need_head("she"))
        kwargs["she_patterns"] = patterns
        kwargs["she_fallback_classes"] = fallback
        kwargs["she_beta"] = config.she_beta

    if "openmax" in methods:
        tails = fit_openmax_tails(
            train, need_head("openmax"), config.openmax_tail, config.openmax_alpha_top
        )
        kwargs["openmax_mav"] = tails.mavs
        kwargs["weibull_shape"] = tails.shapes
        kwargs["weibull_scale"] = tails.scales
        kwargs["weibull_valid"] = tails.valid
        kwargs["openmax_shrunk_classes"] = tails.shrunk
        kwargs["openmax_tail"] = config.openmax_tail
        kwargs["openmax_alpha_top"] = config.openmax_alpha_top

    return FittedStats(**kwargs)
