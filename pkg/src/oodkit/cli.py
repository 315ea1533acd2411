"""Command-line entry points.

Subcommands: gen-synth (synthetic benchmark), fit (stats bundle), sweep
(hyperparameter selection), score (one dump, one method), eval (the full
protocol plus reports), report (re-emit from a saved report.json).

Exit codes: 0 success, 1 when eval recorded any cell failure, 2 on a
toolkit error (bad input, malformed file, guard violation).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, OodkitError
from .harness import default_sweeps, run_benchmark, sweep
from .interchange import load_head, load_manifest, load_stats, read_dump, save_stats
from .reporting import emit_report, load_report
from .scores import METHOD_IDS, MethodConfig, compute_score
from .stats_fit import FitConfig, fit_stats
from .synth import SynthSpec, gen_synthetic_benchmark


def _parse_methods(text: str):
    if text == "all":
        return METHOD_IDS
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHOD_IDS]
    if unknown:
        raise ConfigError(
            f"unknown method ids: {unknown}; valid ids: {', '.join(METHOD_IDS)}"
        )
    if not methods:
        raise ConfigError("no methods given")
    return methods


def _parse_csv_list(text: str, caster=str):
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise ConfigError(f"empty list: {text!r}")
    return tuple(caster(x) for x in items)


def _entry_of(args):
    manifest = load_manifest(args.manifest)
    backbone = args.backbone or manifest.backbones[0]
    seed = manifest.seeds[0] if args.entry_seed is None else args.entry_seed
    return manifest, manifest.entry(backbone, seed)


def _cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes,
        feature_dim=args.dim,
        separation=args.separation,
        near_shift=args.near_shift,
        far_shift=args.far_shift,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        n_ood=args.n_ood,
        heavy_tail_df=args.heavy_tail_df,
        seed=args.seed,
    )
    manifest = gen_synthetic_benchmark(
        spec,
        args.out,
        backbones=_parse_csv_list(args.backbones),
        seeds=_parse_csv_list(args.seeds, int),
    )
    print(manifest.base_dir / "manifest.json")
    return 0


def _cmd_fit(args) -> int:
    _, entry = _entry_of(args)
    methods = _parse_methods(args.methods)
    train = read_dump(entry.id_train)
    val = read_dump(entry.id_val)
    head = load_head(entry.head)
    stats = fit_stats(
        train.data, head, methods, val=val.data, config=FitConfig(seed=args.seed)
    )
    save_stats(args.out, stats)
    print(args.out)
    return 0


def _cmd_sweep(args) -> int:
    manifest, entry = _entry_of(args)
    methods = _parse_methods(args.methods)
    train = read_dump(entry.id_train)
    val = read_dump(entry.id_val)
    head = load_head(entry.head)
    config = FitConfig(seed=args.seed)
    grids = default_sweeps(train.data.dim, train.data.n, config.knn_cap)

    from .harness import _concat_dumps, _fit_config_for, _subset

    bi = manifest.backbones.index(entry.backbone)
    parts = []
    for gi, group in enumerate(entry.ood_groups):
        for di, path in enumerate(entry.ood_groups[group]):
            dump = read_dump(path)
            rng = np.random.default_rng((config.seed, bi, entry.seed, gi, di))
            n_val = int(round(0.2 * dump.data.n))
            rows = np.sort(rng.permutation(dump.data.n)[:n_val])
            if rows.size:
                parts.append(_subset(dump, rows))
    val_pool = _concat_dumps(parts) if parts else None

    out = {}
    for method in methods:
        grid = grids.get(method)
        stats = fit_stats(
            train.data,
            head,
            {method},
            val=val.data,
            config=_fit_config_for(method, config, grid),
        )
        if grid is None:
            out[method] = {"selected": {}, "grid": []}
            continue
        record = sweep(
            method, grid, stats, head, val, val_pool, entry.backbone, entry.seed
        )
        out[method] = {
            "selected": record.selected.params,
            "grid": [[params, value] for params, value in record.table],
        }
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(args.out)
    return 0


def _cmd_score(args) -> int:
    dump = read_dump(args.dump)
    stats = load_stats(args.stats) if args.stats else None
    head = load_head(args.head) if args.head else None
    params = json.loads(args.params) if args.params else None
    config = MethodConfig(args.method, params or {})
    sv = compute_score(
        config.method, dump.data, stats=stats, head=head, aug=dump.aug,
        params=config.params,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("index,score\n")
        for i, value in enumerate(sv.scores):
            fh.write(f"{i},{float(value)!r}\n")
    print(args.out)
    return 0


def _cmd_eval(args) -> int:
    methods = _parse_methods(args.methods)
    report = run_benchmark(
        args.manifest,
        methods=methods,
        fit_config=FitConfig(seed=args.seed),
        jobs=args.jobs,
    )
    paths = emit_report(report, args.out, formats=("csv", "summary", "json"))
    for name in sorted(paths):
        print(paths[name])
    if report.failures:
        for f in report.failures:
            print(
                f"FAILED {f.backbone}/{f.seed} {f.method or '*'} [{f.stage}]: "
                f"{f.message}",
                file=sys.stderr,
            )
        return 1
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.report)
    paths = emit_report(report, args.out, formats=("csv", "summary"))
    for name in sorted(paths):
        print(paths[name])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodkit",
        description="Post-hoc out-of-distribution detection toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--near-shift", type=float, default=1.5)
    p.add_argument("--far-shift", type=float, default=8.0)
    p.add_argument("--n-train", type=int, default=4000)
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--n-ood", type=int, default=2000)
    p.add_argument("--heavy-tail-df", type=float, default=None)
    p.add_argument("--backbones", default="synth-a")
    p.add_argument("--seeds", default="0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_synth)

    def manifest_args(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--backbone", default=None, help="default: first in manifest")
        p.add_argument(
            "--entry-seed",
            type=int,
            default=None,
            help="manifest seed of the entry (default: first)",
        )
        p.add_argument("--seed", type=int, default=0, help="fitting seed")

    p = sub.add_parser("fit", help="fit statistics for one manifest entry")
    manifest_args(p)
    p.add_argument("--methods", default="all")
    p.add_argument("--out", required=True, help="output stats bundle (.oods)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("sweep", help="tune hyperparameters for one entry")
    manifest_args(p)
    p.add_argument("--methods", default="all")
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("score", help="score one dump with one method")
    p.add_argument("--dump", required=True)
    p.add_argument("--method", required=True, choices=METHOD_IDS)
    p.add_argument("--stats", default=None, help="stats bundle (.oods)")
    p.add_argument("--head", default=None, help="linear head (.oodh)")
    p.add_argument("--params", default=None, help="hyperparameters as JSON")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="run the full benchmark protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default="all")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="re-emit reports from report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OodkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
