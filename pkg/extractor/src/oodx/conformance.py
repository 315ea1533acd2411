"""Builds the conformance corpus: a tiny two-class MLP over 16 synthetic
points, extracted with every optional channel enabled. The resulting dump,
head and sidecar are checked into the consumer's test fixtures once and
re-validated there; run this module again only to regenerate them.

    python3 -m oodx.conformance --out DIR [--seed 0]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import torch

from .extract import ExtractionJob, ExtractResult, OdinOptions, extract
from .models import build_mlp

__all__ = ["DEMO_ARCH", "build_demo_checkpoint", "build_demo_dataset", "build_corpus"]

DEMO_ARCH = {
    "in_dim": 8,
    "hidden": [16],
    "num_classes": 2,
    "dropout": 0.25,
    "activation": "relu",
}


def build_demo_checkpoint(path, seed: int = 0, arch: dict = None) -> Path:
    torch.manual_seed(seed)
    arch = dict(DEMO_ARCH if arch is None else arch)
    model = build_mlp(arch)
    torch.save(
        {"format": "oodx-mlp", "version": 1, "arch": arch, "state_dict": model.state_dict()},
        path,
    )
    return Path(path)


def build_demo_dataset(path, seed: int = 0, n: int = 16, d: int = 8) -> Path:
    rng = np.random.default_rng(seed)
    y = np.tile([0, 1], n // 2 + 1)[:n]
    x = rng.standard_normal((n, d)).astype(np.float32)
    x[:, 0] += np.where(y == 0, -0.75, 0.75).astype(np.float32)
    np.savez(path, x=x, y=y.astype(np.int64))
    return Path(path)


def build_corpus(out_dir, seed: int = 0) -> list:
    """Two extractions: the fully loaded dump and an epsilon-zero variant
    whose perturbed-logits channel must equal the plain logits."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = build_demo_checkpoint(out / "tiny_mlp.ckpt.pt", seed=seed)
    data = build_demo_dataset(out / "tiny_mlp.data.npz", seed=seed)
    results = []
    for name, odin in (
        ("tiny_mlp.oodf", OdinOptions(temperature=1000.0, epsilon=0.0014)),
        ("tiny_mlp_eps0.oodf", OdinOptions(temperature=1000.0, epsilon=0.0)),
    ):
        job = ExtractionJob(
            checkpoint=ckpt,
            dataset=data,
            out=out / name,
            mc_dropout_T=4,
            odin=odin,
            batch_size=8,
            seed=seed,
        )
        results.append(extract(job))
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="corpus directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for result in build_corpus(args.out, seed=args.seed):
        for p in (result.dump, result.head, result.sidecar):
            print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
