"""Benchmark orchestration: fit per (backbone, seed), tune hyperparameters
on validation data, score the test splits, aggregate over seeds and pick
the best backbone per method.

Leakage control: hyperparameter selection sees only the ID validation dump
and a seeded held-out fraction of each OoD group. The ID test dump may not
be opened while sweeps run; every dump access is phase-tagged and audited,
and a sweep-phase open of a test dump raises GuardViolation.

Failures are isolated at (backbone, seed, method) granularity: a method
that cannot be fitted or scored is recorded and skipped, never silently
averaged.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import AugmentedDump, FeatureSet
from .errors import ConfigError, DegenerateData, GuardViolation, OodkitError
from .interchange import BenchmarkManifest, Dump, load_head, load_manifest, read_dump
from .metrics import MetricRow, MetricSummary, accuracy, auroc, fpr_at_tpr, summarize
from .scores import METHOD_IDS, MethodConfig, compute_score
from .stats_fit import FitConfig, fit_stats

__all__ = [
    "SweepSpec",
    "SweepRecord",
    "CellFailure",
    "EvalRow",
    "AggregateRow",
    "BestBackboneRow",
    "EvalReport",
    "default_sweeps",
    "sweep",
    "run_benchmark",
    "correlation_study",
]

VAL_FRACTION = 0.2


@dataclass(frozen=True)
class SweepSpec:
    """A hyperparameter grid for one method; candidates are enumerated in
    declared key order and ties keep the earliest grid point."""

    method: str
    grid: dict  # param name -> sequence of candidate values

    def configs(self) -> list:
        keys = list(self.grid)
        if not keys:
            return [MethodConfig(self.method)]
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            out.append(MethodConfig(self.method, dict(zip(keys, combo))))
        return out


@dataclass(frozen=True)
class SweepRecord:
    method: str
    backbone: str
    seed: int
    selected: MethodConfig
    table: tuple = ()  # ((params dict, validation auroc or None), ...)


@dataclass(frozen=True)
class CellFailure:
    backbone: str
    seed: int
    method: Optional[str]  # None: the whole (backbone, seed) cell
    stage: str
    message: str


@dataclass(frozen=True)
class EvalRow:
    method: str
    backbone: str
    seed: int
    ood_group: str
    metrics: MetricRow


@dataclass(frozen=True)
class AggregateRow:
    method: str
    backbone: str
    ood_group: str
    summary: MetricSummary


@dataclass(frozen=True)
class BestBackboneRow:
    benchmark: str  # "far" or "near"
    method: str
    backbone: str
    mean_auroc: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple
    aggregates: tuple
    best_backbones: tuple
    sweep_records: tuple
    failures: tuple
    access_log: tuple  # ((phase, path), ...) for every dump open
    group_names: tuple
    backbones: tuple
    seeds: tuple
    methods: tuple


def default_sweeps(
    feature_dim: int, n_train: Optional[int] = None, knn_cap: int = 50_000
) -> dict:
    """Stock grids for the tunable methods, adapted to the feature width.

    Subspace dims follow the common 64/128/256 ladder when the features are
    wide enough, else fractions of d; K is clamped to the index size.
    """
    dims = tuple(v for v in (64, 128, 256) if v < feature_dim)
    if not dims:
        dims = tuple(
            sorted(
                {
                    max(1, feature_dim // 8),
                    max(1, feature_dim // 4),
                    max(1, feature_dim // 2),
                }
                - {feature_dim}
            )
        )
    index_size = knn_cap if n_train is None else min(n_train, knn_cap)
    return {
        "gen": SweepSpec("gen", {"gamma": (0.01, 0.1, 0.5), "M": (10, 50, 100)}),
        "ash": SweepSpec("ash", {"percentile": (65.0, 80.0, 95.0, 99.0)}),
        "vim": SweepSpec("vim", {"dim": dims}),
        "knn": SweepSpec("knn", {"K": (max(1, min(50, index_size)),)}),
        "relation": SweepSpec("relation", {"pow": (8.0,)}),
    }


# ---------------------------------------------------------------------------
# dump plumbing
# ---------------------------------------------------------------------------


class _Session:
    """Phase-tagged dump reader with a per-phase forbidden set and an
    access log; reads are cached so each file is opened once."""

    def __init__(self):
        self.phase = "idle"
        self.log: list = []
        self.forbidden: dict = {}
        self._cache: dict = {}

    def forbid(self, phase: str, path) -> None:
        self.forbidden.setdefault(phase, set()).add(str(Path(path).resolve()))

    def read(self, path) -> Dump:
        resolved = str(Path(path).resolve())
        self.log.append((self.phase, resolved))
        if resolved in self.forbidden.get(self.phase, ()):
            raise GuardViolation(
                f"dump {resolved} may not be opened during the {self.phase} phase"
            )
        if resolved not in self._cache:
            self._cache[resolved] = read_dump(path)
        return self._cache[resolved]


def _subset(dump: Dump, rows: np.ndarray) -> Dump:
    data = dump.data
    fs = FeatureSet(
        features=data.features[rows],
        labels=None if data.labels is None else data.labels[rows],
        logits=None if data.logits is None else data.logits[rows],
    )
    aug = None
    if dump.aug is not None:
        aug = AugmentedDump(
            dropout_prob_stacks=dump.aug.dropout_prob_stacks[rows],
            odin_logits=(
                None if dump.aug.odin_logits is None else dump.aug.odin_logits[rows]
            ),
            meta=dump.aug.meta,
        )
    return Dump(data=fs, aug=aug, meta=dump.meta)


def _concat_dumps(parts: Sequence[Dump]) -> Dump:
    if len(parts) == 1:
        return parts[0]
    feats = np.concatenate([p.data.features for p in parts])
    logits = (
        None
        if any(p.data.logits is None for p in parts)
        else np.concatenate([p.data.logits for p in parts])
    )
    aug = None
    if all(p.aug is not None for p in parts):
        odin = (
            None
            if any(p.aug.odin_logits is None for p in parts)
            else np.concatenate([p.aug.odin_logits for p in parts])
        )
        stacks = [p.aug.dropout_prob_stacks for p in parts]
        same_t = len({s.shape[1] for s in stacks}) == 1
        aug = (
            AugmentedDump(
                dropout_prob_stacks=np.concatenate(stacks), odin_logits=odin
            )
            if same_t
            else None
        )
    return Dump(data=FeatureSet(features=feats, logits=logits), aug=aug)


def _score(config: MethodConfig, dump: Dump, stats, head) -> np.ndarray:
    return compute_score(
        config.method,
        dump.data,
        stats=stats,
        head=head,
        aug=dump.aug,
        params=config.params,
    ).scores


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def sweep(
    method: str,
    grid: SweepSpec,
    stats,
    head,
    val_id: Dump,
    val_ood: Optional[Dump],
    backbone: str = "",
    seed: int = 0,
) -> SweepRecord:
    """Evaluate every grid point on validation AUROC (ID validation dump vs
    the held-out OoD split) and keep the best; ties keep the first declared
    point. With no OoD validation data available the first point is
    selected and the table records no numbers."""
    if grid.method != method:
        raise ConfigError(f"grid is for {grid.method!r}, not {method!r}")
    candidates = grid.configs()
    if val_ood is None or val_ood.data.n == 0:
        return SweepRecord(
            method,
            backbone,
            seed,
            candidates[0],
            tuple((dict(c.params), None) for c in candidates),
        )
    best = None
    best_value = -np.inf
    table = []
    last_error = None
    for candidate in candidates:
        try:
            pos = _score(candidate, val_id, stats, head)
            neg = _score(candidate, val_ood, stats, head)
            value = auroc(pos, neg)
        except OodkitError as exc:
            # a degenerate grid point (e.g. a percentile pruning every
            # activation at small d) is recorded but never selected
            table.append((dict(candidate.params), None))
            last_error = exc
            continue
        table.append((dict(candidate.params), value))
        if value > best_value:
            best, best_value = candidate, value
    if best is None:
        raise last_error if last_error is not None else ConfigError(
            f"empty grid for {method!r}"
        )
    return SweepRecord(method, backbone, seed, best, tuple(table))


# ---------------------------------------------------------------------------
# the full protocol
# ---------------------------------------------------------------------------


def _fit_config_for(method: str, base: FitConfig, spec: Optional[SweepSpec]) -> FitConfig:
    if method != "vim" or spec is None:
        return base
    dims = spec.grid.get("dim")
    if not dims:
        return base
    return replace(base, extra_subspace_dims=tuple(int(v) for v in dims))


def run_benchmark(
    manifest,
    methods: Optional[Sequence[str]] = None,
    sweeps: Optional[dict] = None,
    fit_config: Optional[FitConfig] = None,
    val_fraction: float = VAL_FRACTION,
    jobs: int = 1,
) -> EvalReport:
    """Execute the whole protocol over a manifest; deterministic given the
    manifest contents, the config and the seeds."""
    if not isinstance(manifest, BenchmarkManifest):
        manifest = load_manifest(manifest)
    methods = tuple(methods) if methods else METHOD_IDS
    unknown = [m for m in methods if m not in METHOD_IDS]
    if unknown:
        raise ConfigError(f"unknown method ids: {unknown}")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    base_config = fit_config if fit_config is not None else FitConfig()

    rows: list = []
    failures: list = []
    sweep_records: list = []
    access_log: list = []
    group_names = manifest.group_names

    for bi, backbone in enumerate(manifest.backbones):
        for seed in manifest.seeds:
            entry = manifest.entry(backbone, seed)
            session = _Session()
            session.forbid("sweep", entry.id_test)

            session.phase = "fit"
            try:
                train_dump = session.read(entry.id_train)
                val_dump = session.read(entry.id_val)
                head = load_head(entry.head)
            except OodkitError as exc:
                failures.append(
                    CellFailure(backbone, seed, None, "load", str(exc))
                )
                access_log.extend(session.log)
                continue

            entry_sweeps = default_sweeps(
                train_dump.data.dim, train_dump.data.n, base_config.knn_cap
            )
            if sweeps:
                entry_sweeps.update(sweeps)

            session.phase = "sweep"
            ood_parts: list = []  # (group, dump, val_rows, test_rows)
            try:
                for gi, group in enumerate(entry.ood_groups):
                    for di, path in enumerate(entry.ood_groups[group]):
                        dump = session.read(path)
                        rng = np.random.default_rng(
                            (base_config.seed, bi, int(seed), gi, di)
                        )
                        n = dump.data.n
                        n_val = int(round(val_fraction * n))
                        perm = rng.permutation(n)
                        ood_parts.append(
                            (
                                group,
                                dump,
                                np.sort(perm[:n_val]),
                                np.sort(perm[n_val:]),
                            )
                        )
            except OodkitError as exc:
                failures.append(CellFailure(backbone, seed, None, "load", str(exc)))
                access_log.extend(session.log)
                continue

            val_slices = [
                _subset(dump, vr) for _, dump, vr, _ in ood_parts if vr.size
            ]
            val_pool = _concat_dumps(val_slices) if val_slices else None

            prepared: dict = {}
            for method in methods:
                grid_spec = entry_sweeps.get(method)
                try:
                    cfg = _fit_config_for(method, base_config, grid_spec)
                    stats = fit_stats(
                        train_dump.data,
                        head,
                        {method},
                        val=val_dump.data,
                        config=cfg,
                    )
                    if grid_spec is not None and grid_spec.grid:
                        record = sweep(
                            method,
                            grid_spec,
                            stats,
                            head,
                            val_dump,
                            val_pool,
                            backbone,
                            seed,
                        )
                    else:
                        record = SweepRecord(
                            method, backbone, seed, MethodConfig(method)
                        )
                    sweep_records.append(record)
                    prepared[method] = (stats, record.selected)
                except OodkitError as exc:
                    failures.append(
                        CellFailure(backbone, seed, method, "fit", str(exc))
                    )

            session.phase = "score"
            try:
                test_dump = session.read(entry.id_test)
            except OodkitError as exc:
                failures.append(CellFailure(backbone, seed, None, "score", str(exc)))
                access_log.extend(session.log)
                continue
            acc = None
            if test_dump.data.logits is not None and test_dump.data.labels is not None:
                acc = accuracy(test_dump.data.logits, test_dump.data.labels)

            def score_one(method):
                stats, config = prepared[method]
                id_scores = _score(config, test_dump, stats, head)
                method_rows = []
                for group in entry.ood_groups:
                    parts = [
                        _score(config, _subset(dump, tr), stats, head)
                        for g, dump, _, tr in ood_parts
                        if g == group and tr.size
                    ]
                    if not parts:
                        raise DegenerateData(
                            f"group {group!r} has no test samples after the "
                            f"validation holdout"
                        )
                    ood_scores = np.concatenate(parts)
                    metrics = MetricRow(
                        fpr95_id=fpr_at_tpr(id_scores, ood_scores, 0.95),
                        fpr99_id=fpr_at_tpr(id_scores, ood_scores, 0.99),
                        fpr95_ood=fpr_at_tpr(-ood_scores, -id_scores, 0.95),
                        fpr99_ood=fpr_at_tpr(-ood_scores, -id_scores, 0.99),
                        auroc_pct=auroc(id_scores, ood_scores),
                        n_id=id_scores.size,
                        n_ood=ood_scores.size,
                        acc=acc,
                    )
                    method_rows.append(
                        EvalRow(method, backbone, seed, group, metrics)
                    )
                return method_rows

            results: dict = {}
            pending = [m for m in methods if m in prepared]
            if jobs > 1 and len(pending) > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    futures = {m: pool.submit(score_one, m) for m in pending}
                    for m in pending:
                        try:
                            results[m] = futures[m].result()
                        except OodkitError as exc:
                            failures.append(
                                CellFailure(backbone, seed, m, "score", str(exc))
                            )
            else:
                for m in pending:
                    try:
                        results[m] = score_one(m)
                    except OodkitError as exc:
                        failures.append(
                            CellFailure(backbone, seed, m, "score", str(exc))
                        )
            for m in methods:
                rows.extend(results.get(m, ()))
            access_log.extend(session.log)

    aggregates = _aggregate(rows, methods, manifest, group_names)
    best = _best_backbones(aggregates, methods, manifest, group_names)
    return EvalReport(
        rows=tuple(rows),
        aggregates=tuple(aggregates),
        best_backbones=tuple(best),
        sweep_records=tuple(sweep_records),
        failures=tuple(failures),
        access_log=tuple(access_log),
        group_names=group_names,
        backbones=manifest.backbones,
        seeds=manifest.seeds,
        methods=methods,
    )


def _aggregate(rows, methods, manifest, group_names) -> list:
    by_cell: dict = {}
    for row in rows:
        by_cell.setdefault((row.method, row.backbone, row.ood_group), []).append(
            row.metrics
        )
    out = []
    for method in methods:
        for backbone in manifest.backbones:
            for group in group_names:
                cell = by_cell.get((method, backbone, group))
                if cell:
                    out.append(
                        AggregateRow(method, backbone, group, summarize(cell))
                    )
    return out


def _best_backbones(aggregates, methods, manifest, group_names) -> list:
    far = tuple(g for g in group_names if g.startswith("far"))
    near = tuple(g for g in group_names if not g.startswith("far"))
    lookup = {
        (a.method, a.backbone, a.ood_group): a.summary.means["auroc_pct"]
        for a in aggregates
    }
    out = []
    for benchmark, groups in (("far", far), ("near", near)):
        if not groups:
            continue
        for method in methods:
            best_backbone = None
            best_value = -np.inf
            for backbone in manifest.backbones:
                values = [lookup.get((method, backbone, g)) for g in groups]
                if any(v is None for v in values):
                    continue
                mean_value = float(np.mean(values))
                if mean_value > best_value:
                    best_backbone, best_value = backbone, mean_value
            if best_backbone is not None:
                out.append(
                    BestBackboneRow(benchmark, method, best_backbone, best_value)
                )
    return out


def correlation_study(report: EvalReport, acc_table: Optional[dict] = None) -> dict:
    """Spearman correlation between ID accuracy and AUROC across
    (method, backbone) cells, per OoD group.

    ``acc_table`` optionally overrides accuracy per backbone; by default the
    aggregated ID accuracy from the report is used. Returns
    {group: (rho, n_pairs)}.
    """
    from .metrics import spearman_rho

    out = {}
    for group in report.group_names:
        xs, ys = [], []
        for agg in report.aggregates:
            if agg.ood_group != group:
                continue
            acc = (
                acc_table.get(agg.backbone)
                if acc_table is not None
                else agg.summary.means["acc"]
            )
            auc = agg.summary.means["auroc_pct"]
            if acc is None or auc is None:
                continue
            xs.append(acc)
            ys.append(auc)
        if len(xs) >= 2:
            out[group] = (spearman_rho(xs, ys), len(xs))
    return out
