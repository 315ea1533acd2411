"""Writers for the dump interchange formats.

This module is deliberately standalone: the consumer toolkit has its own
reader, and keeping the writer free of any import from it means the byte
layout is pinned by two independent implementations. Layout of a dump:

    magic "OODF" | version u16 | dtype u8 (0 = float32) | flags u8
    N, d, C, T as u64 | meta length u32 | meta JSON | payload

all little-endian. Flag bits (1, 2, 4, 8) mark the optional labels,
logits, dropout-stack and perturbed-logits sections, which follow the
features in that order. Heads use magic "OODH" with C, d as u64 followed
by the float32 weight matrix and bias.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

__all__ = ["write_dump", "write_head", "write_sidecar", "DUMP_MAGIC", "HEAD_MAGIC"]

DUMP_MAGIC = b"OODF"
HEAD_MAGIC = b"OODH"
FORMAT_VERSION = 1

_DTYPE_F32 = 0
_FLAG_LABELS = 1 << 0
_FLAG_LOGITS = 1 << 1
_FLAG_DROPOUT = 1 << 2
_FLAG_ODIN = 1 << 3

_DUMP_HEADER = struct.Struct("<4sHBBQQQQ")
_HEAD_HEADER = struct.Struct("<4sHBBQQ")


def _f32(arr: np.ndarray, name: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} contains non-finite values after float32 cast")
    return out


def write_dump(
    path,
    features: np.ndarray,
    labels: Optional[np.ndarray] = None,
    logits: Optional[np.ndarray] = None,
    dropout_prob_stacks: Optional[np.ndarray] = None,
    odin_logits: Optional[np.ndarray] = None,
    meta: Optional[dict] = None,
) -> dict:
    """Write a dump and return {channel: raw bytes} for checksumming.

    ``features`` is (N, d); ``logits`` and ``odin_logits`` are (N, C);
    ``dropout_prob_stacks`` is (N, T, C) with the sample axis second.
    """
    features = np.asarray(features)
    if features.ndim != 2:
        raise ConfigError(f"features must be 2-D, got shape {features.shape}")
    n, d = features.shape

    flags = 0
    c = t = 0
    channels = {"features": _f32(features, "features").tobytes()}

    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ConfigError(f"labels must be ({n},), got {labels.shape}")
        if labels.size and int(labels.min()) < 0:
            raise ConfigError("labels must be non-negative")
        flags |= _FLAG_LABELS
        channels["labels"] = np.ascontiguousarray(labels, dtype="<u4").tobytes()
    if logits is not None:
        logits = np.asarray(logits)
        if logits.ndim != 2 or logits.shape[0] != n:
            raise ConfigError(f"logits must be ({n}, C), got {logits.shape}")
        c = logits.shape[1]
        flags |= _FLAG_LOGITS
        channels["logits"] = _f32(logits, "logits").tobytes()
    if dropout_prob_stacks is not None:
        st = np.asarray(dropout_prob_stacks)
        if st.ndim != 3 or st.shape[0] != n:
            raise ConfigError(
                f"dropout_prob_stacks must be ({n}, T, C), got {st.shape}"
            )
        if c and st.shape[2] != c:
            raise ConfigError(
                f"dropout stack class count {st.shape[2]} disagrees with logits ({c})"
            )
        c, t = st.shape[2], st.shape[1]
        flags |= _FLAG_DROPOUT
        channels["dropout_prob_stacks"] = _f32(st, "dropout_prob_stacks").tobytes()
    if odin_logits is not None:
        ol = np.asarray(odin_logits)
        if ol.ndim != 2 or ol.shape[0] != n:
            raise ConfigError(f"odin_logits must be ({n}, C), got {ol.shape}")
        if c and ol.shape[1] != c:
            raise ConfigError(
                f"odin_logits class count {ol.shape[1]} disagrees with {c}"
            )
        c = ol.shape[1]
        flags |= _FLAG_ODIN
        channels["odin_logits"] = _f32(ol, "odin_logits").tobytes()

    meta_blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [
        _DUMP_HEADER.pack(DUMP_MAGIC, FORMAT_VERSION, _DTYPE_F32, flags, n, d, c, t),
        struct.pack("<I", len(meta_blob)),
        meta_blob,
        channels["features"],
    ]
    # payload sections appear in flag-bit order
    for key in ("labels", "logits", "dropout_prob_stacks", "odin_logits"):
        if key in channels:
            parts.append(channels[key])
    Path(path).write_bytes(b"".join(parts))
    return channels


def write_head(path, weights: np.ndarray, bias: np.ndarray) -> None:
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 2:
        raise ConfigError(f"head weights must be 2-D, got shape {weights.shape}")
    c, d = weights.shape
    if bias.shape != (c,):
        raise ConfigError(f"head bias must be ({c},), got {bias.shape}")
    parts = [
        _HEAD_HEADER.pack(HEAD_MAGIC, FORMAT_VERSION, _DTYPE_F32, 0, c, d),
        _f32(weights, "weights").tobytes(),
        _f32(bias, "bias").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def write_sidecar(
    path,
    dump_path,
    shapes: dict,
    channel_bytes: dict,
    options: dict,
    references: dict,
) -> None:
    """Conformance sidecar: shapes, per-channel sha256 of the bytes as
    written, the job options, and reference score vectors for the channels
    a consumer should be able to reproduce."""
    record = {
        "format": "oodx-conformance",
        "version": 1,
        "dump": Path(dump_path).name,
        "shapes": {k: list(v) for k, v in shapes.items()},
        "sha256": {
            k: hashlib.sha256(raw).hexdigest() for k, raw in sorted(channel_bytes.items())
        },
        "options": options,
        "references": {k: [float(x) for x in v] for k, v in references.items()},
    }
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
