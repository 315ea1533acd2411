"""On-disk formats: feature dumps, classifier heads, fitted-stats bundles
and the benchmark manifest.

All binary layouts are little-endian with fixed headers and exact length
checks; a file that is one byte short or long is rejected, not silently
padded. Dumps store float32 payloads, stats bundles store raw float64 so a
save/load cycle is bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import AugmentedDump, FeatureSet, LinearHead
from .errors import ConfigError, FormatError, MissingArtifact
from .stats_fit import FittedStats

__all__ = [
    "Dump",
    "write_dump",
    "write_dump_raw",
    "read_dump",
    "save_head",
    "load_head",
    "save_stats",
    "load_stats",
    "BenchmarkManifest",
    "ManifestEntry",
    "load_manifest",
    "DUMP_MAGIC",
    "HEAD_MAGIC",
    "STATS_MAGIC",
    "FORMAT_VERSION",
]

DUMP_MAGIC = b"OODF"
HEAD_MAGIC = b"OODH"
STATS_MAGIC = b"OODS"
FORMAT_VERSION = 1

_DTYPE_F32 = 0

_FLAG_LABELS = 1 << 0
_FLAG_LOGITS = 1 << 1
_FLAG_DROPOUT = 1 << 2
_FLAG_ODIN = 1 << 3

_DUMP_HEADER = struct.Struct("<4sHBBQQQQ")  # magic, version, dtype, flags, N, d, C, T
_HEAD_HEADER = struct.Struct("<4sHBBQQ")  # magic, version, dtype, reserved, C, d
_STATS_HEADER = struct.Struct("<4sHHI")  # magic, version, reserved, index_len

_STATS_DTYPES = {"<f8", "<i8", "|u1", "|b1"}


def _check_finite_f32(arr: np.ndarray, name: str) -> np.ndarray:
    """Cast to little-endian float32 and reject values that do not survive."""
    out = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise FormatError(
            "nonfinite",
            f"{name} has a non-finite value at index {tuple(int(i) for i in bad)}",
        )
    return out


def _read_exact(buf: bytes, offset: int, nbytes: int, what: str) -> bytes:
    end = offset + nbytes
    if end > len(buf):
        raise FormatError(
            "truncated",
            f"file ends inside {what}: need {end} bytes, have {len(buf)}",
        )
    return buf[offset:end]


# ---------------------------------------------------------------------------
# feature dumps (.oodf)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dump:
    """A decoded feature dump: core arrays, optional augmentation channels
    and free-form metadata from the header."""

    data: FeatureSet
    aug: Optional[AugmentedDump] = None
    meta: dict = field(default_factory=dict)


def write_dump_raw(
    path,
    features: np.ndarray,
    labels: Optional[np.ndarray] = None,
    logits: Optional[np.ndarray] = None,
    dropout_prob_stacks: Optional[np.ndarray] = None,
    odin_logits: Optional[np.ndarray] = None,
    meta: Optional[dict] = None,
    flags: Optional[int] = None,
) -> None:
    """Low-level dump writer.

    ``flags`` defaults to whatever matches the provided arrays; passing them
    explicitly lets callers assert their intent, and any disagreement between
    flags and payload is rejected up front.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise FormatError("flag_mismatch", f"features must be 2-D, got {features.ndim}-D")
    n, d = features.shape

    derived = 0
    if labels is not None:
        derived |= _FLAG_LABELS
    if logits is not None:
        derived |= _FLAG_LOGITS
    if dropout_prob_stacks is not None:
        derived |= _FLAG_DROPOUT
    if odin_logits is not None:
        derived |= _FLAG_ODIN
    if flags is None:
        flags = derived
    elif flags != derived:
        raise FormatError(
            "flag_mismatch",
            f"header flags {flags:#04x} disagree with provided arrays {derived:#04x}",
        )

    c = 0
    for name, arr in (("logits", logits), ("odin_logits", odin_logits)):
        if arr is not None:
            arr = np.asarray(arr)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise FormatError(
                    "flag_mismatch", f"{name} must be ({n}, C), got {arr.shape}"
                )
            if c and arr.shape[1] != c:
                raise FormatError(
                    "flag_mismatch",
                    f"{name} class count {arr.shape[1]} != {c}",
                )
            c = arr.shape[1]
    t = 0
    if dropout_prob_stacks is not None:
        st = np.asarray(dropout_prob_stacks)
        if st.ndim != 3 or st.shape[0] != n:
            raise FormatError(
                "flag_mismatch",
                f"dropout_prob_stacks must be ({n}, T, C), got {st.shape}",
            )
        t = st.shape[1]
        if c and st.shape[2] != c:
            raise FormatError(
                "flag_mismatch",
                f"dropout_prob_stacks class count {st.shape[2]} != {c}",
            )
        c = st.shape[2]
    if labels is not None:
        lab = np.asarray(labels)
        if lab.shape != (n,):
            raise FormatError("flag_mismatch", f"labels must be ({n},), got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() > np.iinfo(np.uint32).max):
            raise FormatError("flag_mismatch", "labels do not fit in uint32")

    meta_blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()

    parts = [
        _DUMP_HEADER.pack(DUMP_MAGIC, FORMAT_VERSION, _DTYPE_F32, flags, n, d, c, t),
        struct.pack("<I", len(meta_blob)),
        meta_blob,
        _check_finite_f32(features, "features").tobytes(),
    ]
    if labels is not None:
        parts.append(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    if logits is not None:
        parts.append(_check_finite_f32(logits, "logits").tobytes())
    if dropout_prob_stacks is not None:
        parts.append(
            _check_finite_f32(dropout_prob_stacks, "dropout_prob_stacks").tobytes()
        )
    if odin_logits is not None:
        parts.append(_check_finite_f32(odin_logits, "odin_logits").tobytes())

    Path(path).write_bytes(b"".join(parts))


def write_dump(
    path, data: FeatureSet, aug: Optional[AugmentedDump] = None, meta: Optional[dict] = None
) -> None:
    """Serialize a FeatureSet (plus optional augmentation channels)."""
    write_dump_raw(
        path,
        data.features,
        labels=data.labels,
        logits=data.logits,
        dropout_prob_stacks=None if aug is None else aug.dropout_prob_stacks,
        odin_logits=None if aug is None else aug.odin_logits,
        meta=meta if meta is not None else (aug.meta if aug is not None else None),
    )


def read_dump(path) -> Dump:
    """Decode a dump file, checking magic, version, dtype, exact length and
    finiteness. Raises FormatError with a stable code on any violation."""
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"dump not found: {p}")
    buf = p.read_bytes()
    header = _read_exact(buf, 0, _DUMP_HEADER.size, "dump header")
    magic, version, dtype, flags, n, d, c, t = _DUMP_HEADER.unpack(header)
    if magic != DUMP_MAGIC:
        raise FormatError("bad_magic", f"expected {DUMP_MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError("bad_version", f"unsupported dump version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError("bad_dtype", f"unsupported dtype code {dtype}")
    if flags & ~(_FLAG_LABELS | _FLAG_LOGITS | _FLAG_DROPOUT | _FLAG_ODIN):
        raise FormatError("flag_mismatch", f"unknown flag bits in {flags:#04x}")

    (meta_len,) = struct.unpack(
        "<I", _read_exact(buf, _DUMP_HEADER.size, 4, "meta length")
    )
    offset = _DUMP_HEADER.size + 4
    meta_blob = _read_exact(buf, offset, meta_len, "meta block")
    offset += meta_len
    try:
        meta = json.loads(meta_blob.decode()) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("bad_index", f"meta block is not valid JSON: {exc}")

    has_labels = bool(flags & _FLAG_LABELS)
    has_logits = bool(flags & _FLAG_LOGITS)
    has_dropout = bool(flags & _FLAG_DROPOUT)
    has_odin = bool(flags & _FLAG_ODIN)
    if (has_logits or has_dropout or has_odin) and c == 0:
        raise FormatError("flag_mismatch", "class-channel flags set but C = 0")
    if has_dropout and t == 0:
        raise FormatError("flag_mismatch", "dropout flag set but T = 0")

    def take(count: int, dtype_str: str, shape: tuple, name: str) -> np.ndarray:
        nonlocal offset
        nbytes = count * np.dtype(dtype_str).itemsize
        raw = _read_exact(buf, offset, nbytes, name)
        offset += nbytes
        return np.frombuffer(raw, dtype=dtype_str).reshape(shape)

    features = take(n * d, "<f4", (n, d), "features").astype(np.float64)
    labels = logits = dropout = odin = None
    if has_labels:
        labels = take(n, "<u4", (n,), "labels").astype(np.int64)
    if has_logits:
        logits = take(n * c, "<f4", (n, c), "logits").astype(np.float64)
    if has_dropout:
        dropout = take(n * t * c, "<f4", (n, t, c), "dropout stack").astype(np.float64)
    if has_odin:
        odin = take(n * c, "<f4", (n, c), "odin logits").astype(np.float64)
    if offset != len(buf):
        raise FormatError(
            "truncated",
            f"file length mismatch: expected {offset} bytes, have {len(buf)}",
        )

    for name, arr in (
        ("features", features),
        ("logits", logits),
        ("dropout stack", dropout),
        ("odin logits", odin),
    ):
        if arr is not None and not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise FormatError(
                "nonfinite",
                f"{name} has a non-finite value at index "
                f"{tuple(int(i) for i in bad)}",
            )

    data = FeatureSet(features=features, labels=labels, logits=logits)
    aug = None
    if has_dropout or has_odin:
        stacks = dropout
        if stacks is None:
            # odin-only dumps still need the stack slot filled; use the plain
            # softmax of the main logits when present, else reject
            if logits is None:
                raise FormatError(
                    "flag_mismatch", "odin channel requires logits or dropout stack"
                )
            from .data_model import batch_softmax

            stacks = batch_softmax(logits)[:, None, :]
        aug = AugmentedDump(dropout_prob_stacks=stacks, odin_logits=odin, meta=meta)
    return Dump(data=data, aug=aug, meta=meta)


# ---------------------------------------------------------------------------
# linear heads (.oodh)
# ---------------------------------------------------------------------------


def save_head(path, head: LinearHead) -> None:
    c, d = head.weights.shape
    parts = [
        _HEAD_HEADER.pack(HEAD_MAGIC, FORMAT_VERSION, _DTYPE_F32, 0, c, d),
        _check_finite_f32(head.weights, "weights").tobytes(),
        _check_finite_f32(head.bias, "bias").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_head(path) -> LinearHead:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"head not found: {p}")
    buf = p.read_bytes()
    header = _read_exact(buf, 0, _HEAD_HEADER.size, "head header")
    magic, version, dtype, _reserved, c, d = _HEAD_HEADER.unpack(header)
    if magic != HEAD_MAGIC:
        raise FormatError("bad_magic", f"expected {HEAD_MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError("bad_version", f"unsupported head version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError("bad_dtype", f"unsupported dtype code {dtype}")
    expected = _HEAD_HEADER.size + (c * d + c) * 4
    if len(buf) != expected:
        raise FormatError(
            "truncated",
            f"file length mismatch: expected {expected} bytes, have {len(buf)}",
        )
    offset = _HEAD_HEADER.size
    w = np.frombuffer(buf, dtype="<f4", count=c * d, offset=offset).reshape(c, d)
    offset += c * d * 4
    b = np.frombuffer(buf, dtype="<f4", count=c, offset=offset)
    for name, arr in (("weights", w), ("bias", b)):
        if not np.all(np.isfinite(arr)):
            raise FormatError("nonfinite", f"head {name} contain non-finite values")
    return LinearHead(weights=w.astype(np.float64), bias=b.astype(np.float64))


# ---------------------------------------------------------------------------
# fitted-stats bundles (.oods)
# ---------------------------------------------------------------------------


def _stats_dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "<f8"
    if arr.dtype == np.int64:
        return "<i8"
    if arr.dtype == np.uint8:
        return "|u1"
    if arr.dtype == np.bool_:
        return "|b1"
    raise ConfigError(f"unsupported stats array dtype {arr.dtype}")


def save_stats(path, stats: FittedStats) -> None:
    """Write a stats bundle: JSON index (meta + section table) followed by
    raw array payloads. Float arrays keep their exact float64 bits."""
    meta, arrays = stats.to_payload()
    sections = []
    payloads = []
    offset = 0
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key])
        tag = _stats_dtype_tag(arr)
        raw = arr.astype(tag).tobytes()
        sections.append(
            {
                "key": key,
                "dtype": tag,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    index_blob = json.dumps(
        {"meta": meta, "sections": sections}, sort_keys=True, separators=(",", ":")
    ).encode()
    parts = [
        _STATS_HEADER.pack(STATS_MAGIC, FORMAT_VERSION, 0, len(index_blob)),
        index_blob,
    ]
    parts.extend(payloads)
    Path(path).write_bytes(b"".join(parts))


def load_stats(path) -> FittedStats:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"stats bundle not found: {p}")
    buf = p.read_bytes()
    header = _read_exact(buf, 0, _STATS_HEADER.size, "stats header")
    magic, version, _reserved, index_len = _STATS_HEADER.unpack(header)
    if magic != STATS_MAGIC:
        raise FormatError("bad_magic", f"expected {STATS_MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError("bad_version", f"unsupported stats version {version}")
    index_blob = _read_exact(buf, _STATS_HEADER.size, index_len, "stats index")
    try:
        index = json.loads(index_blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("bad_index", f"stats index is not valid JSON: {exc}")
    if not isinstance(index, dict) or "meta" not in index or "sections" not in index:
        raise FormatError("bad_index", "stats index missing 'meta' or 'sections'")

    payload_start = _STATS_HEADER.size + index_len
    payload_len = len(buf) - payload_start
    arrays = {}
    total = 0
    for sec in index["sections"]:
        try:
            key, tag = sec["key"], sec["dtype"]
            shape = tuple(int(s) for s in sec["shape"])
            offset, nbytes = int(sec["offset"]), int(sec["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError("bad_index", f"malformed section entry: {exc}")
        if tag not in _STATS_DTYPES:
            raise FormatError("bad_index", f"section {key!r} has unknown dtype {tag!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(tag).itemsize
        if nbytes != expected:
            raise FormatError(
                "bad_index",
                f"section {key!r} declares {nbytes} bytes but shape needs {expected}",
            )
        if offset < 0 or offset + nbytes > payload_len:
            raise FormatError(
                "truncated",
                f"section {key!r} extends past end of file "
                f"({offset}+{nbytes} > {payload_len})",
            )
        raw = buf[payload_start + offset : payload_start + offset + nbytes]
        arrays[key] = np.frombuffer(raw, dtype=tag).reshape(shape).copy()
        total += nbytes
    if total != payload_len:
        raise FormatError(
            "truncated",
            f"payload length mismatch: sections cover {total} of {payload_len} bytes",
        )
    try:
        return FittedStats.from_payload(index["meta"], arrays)
    except TypeError as exc:
        raise FormatError("bad_index", f"stats meta does not match schema: {exc}")


# ---------------------------------------------------------------------------
# benchmark manifest (manifest.json)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """Artifact paths for one (backbone, seed) cell, already resolved
    against the manifest directory."""

    backbone: str
    seed: int
    id_train: Path
    id_val: Path
    id_test: Path
    head: Path
    ood_groups: dict  # group name -> tuple of Paths


@dataclass(frozen=True)
class BenchmarkManifest:
    version: int
    backbones: tuple
    seeds: tuple
    entries: dict  # "<backbone>/<seed>" -> ManifestEntry
    class_names: Optional[tuple] = None
    base_dir: Optional[Path] = None

    @property
    def group_names(self) -> tuple:
        names: list = []
        for entry in self.entries.values():
            for g in entry.ood_groups:
                if g not in names:
                    names.append(g)
        return tuple(names)

    def entry(self, backbone: str, seed: int) -> ManifestEntry:
        key = f"{backbone}/{seed}"
        if key not in self.entries:
            raise MissingArtifact(f"manifest has no entry {key!r}")
        return self.entries[key]


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"manifest {where} is missing required key {key!r}")
    return d[key]


def load_manifest(path) -> BenchmarkManifest:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"manifest not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest is not valid JSON: {exc}")
    base = p.parent
    version = int(_require(raw, "version", "root"))
    backbones = tuple(_require(raw, "backbones", "root"))
    seeds = tuple(int(s) for s in _require(raw, "seeds", "root"))
    entries_raw = _require(raw, "entries", "root")

    entries = {}
    for backbone in backbones:
        for seed in seeds:
            key = f"{backbone}/{seed}"
            if key not in entries_raw:
                raise ConfigError(f"manifest is missing entry {key!r}")
            e = entries_raw[key]
            groups = {}
            for gname, paths in _require(e, "ood_groups", key).items():
                if not isinstance(paths, Sequence) or isinstance(paths, str):
                    raise ConfigError(
                        f"manifest entry {key!r} group {gname!r} must be a list"
                    )
                groups[gname] = tuple(base / q for q in paths)
            entries[key] = ManifestEntry(
                backbone=backbone,
                seed=seed,
                id_train=base / _require(e, "id_train", key),
                id_val=base / _require(e, "id_val", key),
                id_test=base / _require(e, "id_test", key),
                head=base / _require(e, "head", key),
                ood_groups=groups,
            )
    class_names = raw.get("class_names")
    return BenchmarkManifest(
        version=version,
        backbones=backbones,
        seeds=seeds,
        entries=entries,
        class_names=None if class_names is None else tuple(class_names),
        base_dir=base,
    )
