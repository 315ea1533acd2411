"""Report emission: machine-readable CSVs, a JSON round-trip of the whole
report object, and a fixed-width human summary grouped by method family.

Formatting is deterministic: CSV floats use shortest round-trip repr, the
human table uses two decimals with mean±std cells, and byte-identical
output for identical reports is part of the contract.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ConfigError
from .harness import (
    AggregateRow,
    BestBackboneRow,
    CellFailure,
    EvalReport,
    EvalRow,
    SweepRecord,
)
from .metrics import METRIC_FIELDS, MetricRow, MetricSummary
from .scores import DISPLAY_NAME, FAMILY, METHOD_IDS, MethodConfig

__all__ = [
    "emit_report",
    "report_to_dict",
    "report_from_dict",
    "save_report",
    "load_report",
]

_FAMILY_ORDER = ("distance", "classification", "density")
_FAMILY_TITLE = {
    "distance": "Distance-based",
    "classification": "Classification-based",
    "density": "Density-based",
}
_METRIC_HEADERS = (
    ("fpr95_id", "FPR@95-ID ↓"),
    ("fpr99_id", "FPR@99-ID ↓"),
    ("fpr95_ood", "FPR@95-OoD ↓"),
    ("fpr99_ood", "FPR@99-OoD ↓"),
    ("auroc_pct", "AUROC ↑"),
    ("acc", "ACC ↑"),
)


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _emit_cells(report: EvalReport, path: Path) -> None:
    header = [
        "method",
        "backbone",
        "seed",
        "ood_group",
        "n_id",
        "n_ood",
        "fpr95_id",
        "fpr99_id",
        "fpr95_ood",
        "fpr99_ood",
        "auroc",
        "acc",
    ]
    rows = []
    for r in report.rows:
        m = r.metrics
        rows.append(
            [
                r.method,
                r.backbone,
                r.seed,
                r.ood_group,
                m.n_id,
                m.n_ood,
                _num(m.fpr95_id),
                _num(m.fpr99_id),
                _num(m.fpr95_ood),
                _num(m.fpr99_ood),
                _num(m.auroc_pct),
                _num(m.acc),
            ]
        )
    _write_csv(path, header, rows)


def _emit_aggregates(report: EvalReport, path: Path) -> None:
    header = ["method", "backbone", "ood_group", "n_seeds"]
    for name in METRIC_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for a in report.aggregates:
        row = [a.method, a.backbone, a.ood_group, a.summary.n]
        for name in METRIC_FIELDS:
            row += [_num(a.summary.means[name]), _num(a.summary.stds[name])]
        rows.append(row)
    _write_csv(path, header, rows)


def _emit_best(report: EvalReport, path: Path) -> None:
    _write_csv(
        path,
        ["benchmark", "method", "backbone", "mean_auroc"],
        [
            [b.benchmark, b.method, b.backbone, _num(b.mean_auroc)]
            for b in report.best_backbones
        ],
    )


def _emit_sweeps(report: EvalReport, path: Path) -> None:
    rows = []
    for s in report.sweep_records:
        table = [[params, value] for params, value in s.table]
        rows.append(
            [
                s.method,
                s.backbone,
                s.seed,
                json.dumps(s.selected.params, sort_keys=True),
                json.dumps(table, sort_keys=True),
            ]
        )
    _write_csv(path, ["method", "backbone", "seed", "selected_params", "grid"], rows)


def _emit_failures(report: EvalReport, path: Path) -> None:
    _write_csv(
        path,
        ["backbone", "seed", "method", "stage", "message"],
        [
            [f.backbone, f.seed, f.method or "*", f.stage, f.message]
            for f in report.failures
        ],
    )


# ---------------------------------------------------------------------------
# human summary
# ---------------------------------------------------------------------------


def _cell(summary: MetricSummary, name: str) -> str:
    mean = summary.means[name]
    if mean is None:
        return "-"
    if summary.single_run:
        return f"{mean:.2f}"
    return f"{mean:.2f}±{summary.stds[name]:.2f}"


def _render_summary(report: EvalReport) -> str:
    agg = {(a.method, a.backbone, a.ood_group): a.summary for a in report.aggregates}
    best = {
        (b.benchmark, b.method): b.backbone for b in report.best_backbones
    }
    method_col = max(
        [len("Method")] + [len(DISPLAY_NAME[m]) for m in report.methods], default=6
    )
    backbone_col = max(
        [len("Backbone")] + [len(b) for b in report.backbones], default=8
    )
    num_col = 14

    lines = ["OoD detection benchmark summary", "=" * 31, ""]
    lines.append(f"Backbones: {', '.join(report.backbones)}")
    lines.append(f"Seeds: {', '.join(str(s) for s in report.seeds)}")
    lines.append(
        "Each row shows the best backbone for the group's benchmark, "
        "aggregated over seeds."
    )

    header = f"{'Method':<{method_col}}"
    for _, title in _METRIC_HEADERS:
        header += f"{title:>{num_col}}"
    header += f"  {'Backbone':<{backbone_col}}"

    for group in report.group_names:
        benchmark = "far" if group.startswith("far") else "near"
        lines += ["", f"[{group}]"]
        for family in _FAMILY_ORDER:
            members = [
                m
                for m in METHOD_IDS
                if m in report.methods and FAMILY[m] == family
            ]
            body = []
            for method in members:
                backbone = best.get((benchmark, method))
                if backbone is None:
                    continue
                summary = agg.get((method, backbone, group))
                if summary is None:
                    continue
                line = f"{DISPLAY_NAME[method]:<{method_col}}"
                for name, _ in _METRIC_HEADERS:
                    line += f"{_cell(summary, name):>{num_col}}"
                line += f"  {backbone:<{backbone_col}}"
                body.append(line.rstrip())
            if body:
                lines += ["", _FAMILY_TITLE[family], header.rstrip()]
                lines += body
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, out_dir, formats=("csv", "summary")) -> dict:
    """Write report files into ``out_dir`` and return {name: path}.

    ``csv`` produces cells/aggregates/best_backbones/sweeps/failures CSVs,
    ``summary`` the fixed-width text table, ``json`` the full round-trip
    serialization.
    """
    known = {"csv", "summary", "json"}
    bad = set(formats) - known
    if bad:
        raise ConfigError(f"unknown report formats: {sorted(bad)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "csv" in formats:
        for name, emitter in (
            ("cells", _emit_cells),
            ("aggregates", _emit_aggregates),
            ("best_backbones", _emit_best),
            ("sweeps", _emit_sweeps),
            ("failures", _emit_failures),
        ):
            p = out / f"{name}.csv"
            emitter(report, p)
            paths[name] = p
    if "summary" in formats:
        p = out / "summary.txt"
        p.write_text(_render_summary(report), encoding="utf-8")
        paths["summary"] = p
    if "json" in formats:
        p = out / "report.json"
        save_report(report, p)
        paths["json"] = p
    return paths


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    def metric_row(m: MetricRow) -> dict:
        return {
            "fpr95_id": m.fpr95_id,
            "fpr99_id": m.fpr99_id,
            "fpr95_ood": m.fpr95_ood,
            "fpr99_ood": m.fpr99_ood,
            "auroc_pct": m.auroc_pct,
            "n_id": int(m.n_id),
            "n_ood": int(m.n_ood),
            "acc": m.acc,
        }

    def summary(s: MetricSummary) -> dict:
        return {
            "means": s.means,
            "stds": s.stds,
            "n": s.n,
            "single_run": s.single_run,
        }

    return {
        "rows": [
            {
                "method": r.method,
                "backbone": r.backbone,
                "seed": r.seed,
                "ood_group": r.ood_group,
                "metrics": metric_row(r.metrics),
            }
            for r in report.rows
        ],
        "aggregates": [
            {
                "method": a.method,
                "backbone": a.backbone,
                "ood_group": a.ood_group,
                "summary": summary(a.summary),
            }
            for a in report.aggregates
        ],
        "best_backbones": [
            {
                "benchmark": b.benchmark,
                "method": b.method,
                "backbone": b.backbone,
                "mean_auroc": b.mean_auroc,
            }
            for b in report.best_backbones
        ],
        "sweep_records": [
            {
                "method": s.method,
                "backbone": s.backbone,
                "seed": s.seed,
                "selected": {"method": s.selected.method, "params": s.selected.params},
                "table": [[params, value] for params, value in s.table],
            }
            for s in report.sweep_records
        ],
        "failures": [
            {
                "backbone": f.backbone,
                "seed": f.seed,
                "method": f.method,
                "stage": f.stage,
                "message": f.message,
            }
            for f in report.failures
        ],
        "access_log": [list(entry) for entry in report.access_log],
        "group_names": list(report.group_names),
        "backbones": list(report.backbones),
        "seeds": list(report.seeds),
        "methods": list(report.methods),
    }


def report_from_dict(data: dict) -> EvalReport:
    rows = tuple(
        EvalRow(
            method=r["method"],
            backbone=r["backbone"],
            seed=int(r["seed"]),
            ood_group=r["ood_group"],
            metrics=MetricRow(**r["metrics"]),
        )
        for r in data["rows"]
    )
    aggregates = tuple(
        AggregateRow(
            method=a["method"],
            backbone=a["backbone"],
            ood_group=a["ood_group"],
            summary=MetricSummary(**a["summary"]),
        )
        for a in data["aggregates"]
    )
    best = tuple(BestBackboneRow(**b) for b in data["best_backbones"])
    sweeps = tuple(
        SweepRecord(
            method=s["method"],
            backbone=s["backbone"],
            seed=int(s["seed"]),
            selected=MethodConfig(
                s["selected"]["method"], s["selected"]["params"]
            ),
            table=tuple((params, value) for params, value in s["table"]),
        )
        for s in data["sweep_records"]
    )
    failures = tuple(CellFailure(**f) for f in data["failures"])
    return EvalReport(
        rows=rows,
        aggregates=aggregates,
        best_backbones=best,
        sweep_records=sweeps,
        failures=failures,
        access_log=tuple(tuple(entry) for entry in data["access_log"]),
        group_names=tuple(data["group_names"]),
        backbones=tuple(data["backbones"]),
        seeds=tuple(int(s) for s in data["seeds"]),
        methods=tuple(data["methods"]),
    )


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_report(path) -> EvalReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
