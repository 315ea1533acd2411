"""The extraction pipeline: run a frozen classifier over a dataset and dump
everything a post-hoc detector needs.

The dump always carries penultimate features and logits (plus labels when
the dataset has them) and the linear head goes to a companion file. Two
optional channels cover what cannot be recomputed from a dump alone:
probability stacks from stochastic dropout passes, and logits after the
input-gradient sign perturbation. A JSON sidecar records per-channel
checksums and reference scores so the consumer can cross-validate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError
from .models import PenultimateCapture, find_head, load_checkpoint
from .oodf import write_dump, write_head, write_sidecar

__all__ = ["OdinOptions", "ExtractionJob", "ExtractResult", "extract"]


@dataclass(frozen=True)
class OdinOptions:
    """Input perturbation x' = x + eps * sign(grad_x log p_max), with the
    softmax taken at the given temperature; the channel stores the logits
    of a fresh forward pass on x'."""

    temperature: float = 1000.0
    epsilon: float = 0.0014

    def __post_init__(self):
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError(f"odin temperature must be positive, got {self.temperature}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError(f"odin epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class ExtractionJob:
    checkpoint: Path
    dataset: Path
    out: Path
    mc_dropout_T: Optional[int] = None
    odin: Optional[OdinOptions] = None
    batch_size: int = 128
    device: str = "cpu"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mc_dropout_T is not None:
            if self.mc_dropout_T < 1:
                raise ConfigError(
                    f"mc_dropout_T must be >= 1, got {self.mc_dropout_T}"
                )
            if self.seed is None:
                raise ConfigError(
                    "dropout sampling is stochastic: refusing to run without a seed"
                )


@dataclass(frozen=True)
class ExtractResult:
    dump: Path
    head: Path
    sidecar: Path
    n: int
    d: int
    c: int


def _load_dataset(path) -> Tuple[torch.Tensor, Optional[np.ndarray]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset not found: {p}")
    try:
        with np.load(p) as npz:
            if "x" not in npz:
                raise DataError(f"dataset {p} has no 'x' array")
            x = np.asarray(npz["x"], dtype=np.float32)
            y = np.asarray(npz["y"]) if "y" in npz.files else None
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset {p}: {exc}")
    if x.ndim < 2 or x.shape[0] == 0:
        raise DataError(f"dataset 'x' must be (N, ...), non-empty; got {x.shape}")
    if y is not None:
        if y.shape != (x.shape[0],):
            raise DataError(f"labels must be ({x.shape[0]},), got {y.shape}")
        y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise DataError("labels must be non-negative")
    return torch.from_numpy(x), y


def _batches(x: torch.Tensor, batch_size: int):
    for lo in range(0, x.shape[0], batch_size):
        yield x[lo : lo + batch_size]


def _forward_all(model, x, batch_size, capture: Optional[PenultimateCapture]):
    feats, logits = [], []
    with torch.no_grad():
        for xb in _batches(x, batch_size):
            out = model(xb)
            logits.append(out)
            if capture is not None:
                feats.append(capture.take())
    return (torch.cat(feats) if capture is not None else None), torch.cat(logits)


def _dropout_stack(model, x, job) -> np.ndarray:
    """T stochastic passes with only the dropout layers in train mode,
    stacked as (N, T, C) softmax probabilities."""
    drops = [m for m in model.modules() if isinstance(m, nn.Dropout)]
    for m in drops:
        m.train()
    torch.manual_seed(job.seed)
    passes = []
    try:
        for _ in range(job.mc_dropout_T):
            _, lg = _forward_all(model, x, job.batch_size, None)
            passes.append(torch.softmax(lg, dim=1).numpy())
    finally:
        for m in drops:
            m.eval()
    return np.stack(passes, axis=1)


def _odin_logits(model, x, job) -> np.ndarray:
    opts = job.odin
    out = []
    for xb in _batches(x, job.batch_size):
        xb = xb.clone().requires_grad_(True)
        logp = torch.log_softmax(model(xb) / opts.temperature, dim=1)
        (grad,) = torch.autograd.grad(logp.max(dim=1).values.sum(), xb)
        with torch.no_grad():
            out.append(model(xb.detach() + opts.epsilon * grad.sign()))
    return torch.cat(out).numpy()


def _ref_odin(odin_logits_f32: np.ndarray, temperature: float) -> np.ndarray:
    scaled = odin_logits_f32.astype(np.float64) / temperature
    scaled -= scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled)
    return (e / e.sum(axis=1, keepdims=True)).max(axis=1)


def _ref_mcdropout(stack_f32: np.ndarray) -> np.ndarray:
    m = stack_f32.astype(np.float64).mean(axis=1)
    terms = np.where(m > 0, m * np.log(np.where(m > 0, m, 1.0)), 0.0)
    return terms.sum(axis=1)


def extract(job: ExtractionJob) -> ExtractResult:
    """Run the job and write dump, head and sidecar next to ``job.out``.

    Deterministic given (checkpoint, dataset order, seed, options): the
    same job produces byte-identical files.
    """
    model = load_checkpoint(job.checkpoint, job.device)
    head = find_head(model)
    x, y = _load_dataset(job.dataset)
    x = x.to(job.device)

    with PenultimateCapture(head) as cap:
        feats, logits = _forward_all(model, x, job.batch_size, cap)
    features = feats.numpy()
    logits = logits.numpy()

    stack = None
    if job.mc_dropout_T is not None:
        stack = _dropout_stack(model, x, job)
    odin = None
    if job.odin is not None:
        odin = _odin_logits(model, x, job)

    dump_path = Path(job.out)
    head_path = dump_path.with_suffix(".oodh")
    sidecar_path = dump_path.with_suffix(".conformance.json")

    meta = {
        "source": "oodx",
        "checkpoint": Path(job.checkpoint).name,
        "dataset": Path(job.dataset).name,
        "seed": job.seed,
    }
    channel_bytes = write_dump(
        dump_path,
        features,
        labels=y,
        logits=logits,
        dropout_prob_stacks=stack,
        odin_logits=odin,
        meta=meta,
    )
    write_head(head_path, head.weight.detach().numpy(), head.bias.detach().numpy())

    # references are computed from the float32 values as written, so the
    # consumer sees exactly the numbers these scores were derived from
    references = {}
    if odin is not None:
        references["odin"] = _ref_odin(odin.astype(np.float32), job.odin.temperature)
    if stack is not None:
        references["mcdropout"] = _ref_mcdropout(stack.astype(np.float32))

    n, d = features.shape
    c = logits.shape[1]
    shapes = {"features": features.shape, "logits": logits.shape}
    if y is not None:
        shapes["labels"] = y.shape
    if stack is not None:
        shapes["dropout_prob_stacks"] = stack.shape
    if odin is not None:
        shapes["odin_logits"] = odin.shape
    options = {
        "batch_size": job.batch_size,
        "device": job.device,
        "seed": job.seed,
        "mc_dropout_T": job.mc_dropout_T,
        "odin": None
        if job.odin is None
        else {"temperature": job.odin.temperature, "epsilon": job.odin.epsilon},
    }
    write_sidecar(sidecar_path, dump_path, shapes, channel_bytes, options, references)
    return ExtractResult(
        dump=dump_path, head=head_path, sidecar=sidecar_path, n=n, d=d, c=c
    )
