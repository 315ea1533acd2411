"""Seeded synthetic benchmark: a desk-scale stand-in for a real
ID / Near-OoD / Far-OoD feature-dump collection.

Geometry: ID classes sit at ``separation`` along orthonormal directions
with unit isotropic noise. Near-OoD components shift a class mean by
``near_shift`` in a random direction; Far-OoD components sit at
``far_shift`` along directions orthogonal to the span of all class means,
so growing ``far_shift`` genuinely grows the ID/Far distance. With
separation and both shifts at 0 every split is the same standard normal.

The bundled linear head is Bayes-aligned (weights = class means, bias =
-|mu|^2/2) plus a small seeded jitter so no two weight rows coincide even
at separation 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data_model import FeatureSet, LinearHead, batch_softmax
from .errors import ConfigError
from .interchange import load_manifest, save_head, write_dump_raw

__all__ = ["SynthSpec", "gen_synthetic_benchmark"]

_HEAD_JITTER = 0.05
_DROPOUT_NOISE = 0.3


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 8
    feature_dim: int = 32
    separation: float = 6.0
    near_shift: float = 1.5
    far_shift: float = 8.0
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    n_ood: int = 2000
    components_per_group: int = 4
    heavy_tail_df: Optional[float] = None  # None: Gaussian noise
    dropout_samples: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.feature_dim <= self.num_classes:
            raise ConfigError(
                "feature_dim must exceed num_classes so far directions can be "
                "orthogonal to the class-mean span"
            )
        if self.heavy_tail_df is not None and self.heavy_tail_df <= 2:
            raise ConfigError("heavy_tail_df must be > 2 for unit-variance scaling")
        for name in ("n_train", "n_val", "n_test", "n_ood"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _noise(rng: np.random.Generator, n: int, d: int, df: Optional[float]) -> np.ndarray:
    if df is None:
        return rng.standard_normal((n, d))
    # scale Student-t to unit variance so shifts stay comparable
    return rng.standard_t(df, size=(n, d)) / np.sqrt(df / (df - 2.0))


def _class_directions(rng: np.random.Generator, d: int, c: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, c)))
    # fix the QR sign ambiguity for determinism across BLAS builds
    return (q * np.sign(np.diag(r)))[:, :c].T  # (c, d) orthonormal rows


def _orthogonal_unit(rng: np.random.Generator, span: np.ndarray) -> np.ndarray:
    d = span.shape[1]
    for _ in range(64):
        v = rng.standard_normal(d)
        v = v - span.T @ (span @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm
    raise ConfigError("could not draw a direction orthogonal to the class-mean span")


def _make_head(
    rng: np.random.Generator, means: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    c, d = means.shape
    w = means + _HEAD_JITTER * rng.standard_normal((c, d))
    b = -0.5 * (means * means).sum(axis=1) + _HEAD_JITTER * rng.standard_normal(c)
    return w, b


def _balanced_labels(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    base = np.repeat(np.arange(c), n // c)
    extra = rng.choice(c, size=n - base.size, replace=False) if n % c else np.empty(0, int)
    labels = np.concatenate([base, extra.astype(int)])
    rng.shuffle(labels)
    return labels.astype(np.int64)


def _aug_channels(rng, logits: np.ndarray, t: int):
    stacks = np.stack(
        [
            batch_softmax(logits + _DROPOUT_NOISE * rng.standard_normal(logits.shape))
            for _ in range(t)
        ],
        axis=1,
    )
    return stacks, logits  # odin channel carries the unperturbed logits (eps = 0)


def _write_split(path, features, head_w, head_b, rng, t, labels=None, meta=None):
    logits = features @ head_w.T + head_b
    stacks, odin = _aug_channels(rng, logits, t)
    write_dump_raw(
        path,
        features,
        labels=labels,
        logits=logits,
        dropout_prob_stacks=stacks,
        odin_logits=odin,
        meta=meta or {},
    )


def gen_synthetic_benchmark(
    spec: SynthSpec,
    out_dir,
    backbones=("synth-a",),
    seeds=(0,),
):
    """Generate dumps, heads and a manifest under ``out_dir``.

    Every (backbone, seed) entry gets an independent draw from a generator
    seeded by (spec.seed, backbone index, seed), so reruns are
    byte-identical and entries differ from each other.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    c, d, t = spec.num_classes, spec.feature_dim, spec.dropout_samples
    entries = {}
    for bi, backbone in enumerate(backbones):
        for seed in seeds:
            rng = np.random.default_rng((spec.seed, bi, int(seed)))
            entry_dir = out / backbone / str(seed)
            entry_dir.mkdir(parents=True, exist_ok=True)

            directions = _class_directions(rng, d, c)
            means = spec.separation * directions
            head_w, head_b = _make_head(rng, means)
            head = LinearHead(weights=head_w, bias=head_b)
            save_head(entry_dir / "head.oodh", head)

            def id_split(n):
                labels = _balanced_labels(rng, n, c)
                feats = means[labels] + _noise(rng, n, d, spec.heavy_tail_df)
                return feats, labels

            for split, n in (
                ("id_train", spec.n_train),
                ("id_val", spec.n_val),
                ("id_test", spec.n_test),
            ):
                feats, labels = id_split(n)
                _write_split(
                    entry_dir / f"{split}.oodf",
                    feats,
                    head_w,
                    head_b,
                    rng,
                    t,
                    labels=labels,
                    meta={"split": split},
                )

            def ood_split(shift_kind, magnitude):
                k = spec.components_per_group
                centers = np.empty((k, d))
                for j in range(k):
                    if shift_kind == "near":
                        base = means[rng.integers(c)]
                        v = rng.standard_normal(d)
                        centers[j] = base + magnitude * v / np.linalg.norm(v)
                    else:
                        centers[j] = magnitude * _orthogonal_unit(rng, directions)
                assign = rng.integers(k, size=spec.n_ood)
                return centers[assign] + _noise(rng, spec.n_ood, d, spec.heavy_tail_df)

            groups = {
                "near": ("near", spec.near_shift),
                "far_bp": ("far", spec.far_shift),
                "far_general": ("far", spec.far_shift),
            }
            group_paths = {}
            for gname, (kind, magnitude) in groups.items():
                feats = ood_split(kind, magnitude)
                fname = f"{gname}.oodf"
                _write_split(
                    entry_dir / fname,
                    feats,
                    head_w,
                    head_b,
                    rng,
                    t,
                    meta={"split": gname},
                )
                group_paths[gname] = [f"{backbone}/{seed}/{fname}"]

            entries[f"{backbone}/{seed}"] = {
                "id_train": f"{backbone}/{seed}/id_train.oodf",
                "id_val": f"{backbone}/{seed}/id_val.oodf",
                "id_test": f"{backbone}/{seed}/id_test.oodf",
                "head": f"{backbone}/{seed}/head.oodh",
                "ood_groups": group_paths,
            }

    manifest = {
        "version": 1,
        "backbones": list(backbones),
        "seeds": [int(s) for s in seeds],
        "class_names": [f"class_{i}" for i in range(c)],
        "entries": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return load_manifest(manifest_path)
