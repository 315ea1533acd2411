import itertools
import json

import numpy as np
import pytest

from oodkit import (
    AggregateRow,
    ConfigError,
    EvalReport,
    FitConfig,
    GuardViolation,
    MethodConfig,
    MetricSummary,
    SweepSpec,
    SynthSpec,
    correlation_study,
    default_sweeps,
    fit_stats,
    gen_synthetic_benchmark,
    load_head,
    read_dump,
    run_benchmark,
    sweep,
)
from oodkit.harness import _Session, _best_backbones
from oodkit.reporting import report_to_dict

SPEC = SynthSpec(
    num_classes=3,
    feature_dim=16,
    separation=4.0,
    near_shift=1.5,
    far_shift=6.0,
    n_train=300,
    n_val=120,
    n_test=160,
    n_ood=160,
    components_per_group=2,
    dropout_samples=3,
    seed=5,
)
METHODS = ("msp", "energy", "gen", "mahalanobis", "knn", "vim", "ash", "tempscale")


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    manifest = gen_synthetic_benchmark(
        SPEC, out, backbones=("bb-a", "bb-b"), seeds=(0, 1)
    )
    return manifest


@pytest.fixture(scope="module")
def report(bench):
    return run_benchmark(bench, methods=METHODS)


class TestRunBenchmark:
    def test_no_failures(self, report):
        assert report.failures == ()

    def test_row_grid_complete_and_ordered(self, report):
        keys = [(r.backbone, r.seed, r.method, r.ood_group) for r in report.rows]
        expected = list(
            itertools.product(
                ("bb-a", "bb-b"), (0, 1), METHODS, ("far_bp", "far_general", "near")
            )
        )
        assert keys == expected

    def test_rows_carry_counts_and_accuracy(self, report):
        n_holdout = SPEC.n_ood - round(0.2 * SPEC.n_ood)
        for row in report.rows:
            assert row.metrics.n_id == SPEC.n_test
            assert row.metrics.n_ood == n_holdout
            assert row.metrics.acc is not None

    def test_separated_benchmark_scores_well(self, report):
        far = [r.metrics.auroc_pct for r in report.rows if r.ood_group == "far_bp"]
        assert np.mean(far) > 90.0

    def test_aggregates_cover_grid(self, report):
        keys = {(a.method, a.backbone, a.ood_group) for a in report.aggregates}
        assert len(report.aggregates) == len(METHODS) * 2 * 3
        assert keys == set(
            itertools.product(METHODS, ("bb-a", "bb-b"), ("far_bp", "far_general", "near"))
        )
        for agg in report.aggregates:
            assert agg.summary.n == 2
            assert not agg.summary.single_run

    def test_aggregate_means_match_rows(self, report):
        agg = next(
            a
            for a in report.aggregates
            if a.method == "energy" and a.backbone == "bb-a" and a.ood_group == "near"
        )
        rows = [
            r.metrics.auroc_pct
            for r in report.rows
            if r.method == "energy" and r.backbone == "bb-a" and r.ood_group == "near"
        ]
        assert agg.summary.means["auroc_pct"] == pytest.approx(np.mean(rows))

    def test_best_backbones_structure(self, report):
        keys = {(b.benchmark, b.method) for b in report.best_backbones}
        assert keys == set(
            itertools.product(("far", "near"), METHODS)
        )
        for b in report.best_backbones:
            assert b.backbone in ("bb-a", "bb-b")

    def test_best_backbone_value_recomputable(self, report):
        row = next(
            b for b in report.best_backbones if b.benchmark == "far" and b.method == "knn"
        )
        lookup = {
            (a.backbone, a.ood_group): a.summary.means["auroc_pct"]
            for a in report.aggregates
            if a.method == "knn"
        }
        per_backbone = {
            bb: np.mean([lookup[(bb, "far_bp")], lookup[(bb, "far_general")]])
            for bb in ("bb-a", "bb-b")
        }
        assert row.mean_auroc == pytest.approx(max(per_backbone.values()))
        assert per_backbone[row.backbone] == pytest.approx(row.mean_auroc)

    def test_sweep_records_present(self, report):
        swept = {r.method for r in report.sweep_records}
        assert swept == set(METHODS)
        gridless = [r for r in report.sweep_records if r.method == "msp"]
        assert len(gridless) == 4
        assert all(r.table == () for r in gridless)
        gen_records = [r for r in report.sweep_records if r.method == "gen"]
        assert all(len(r.table) == 9 for r in gen_records)

    def test_degenerate_sweep_candidates_recorded_not_selected(self, report):
        # at d=16 the 99th percentile prunes every activation
        for record in report.sweep_records:
            if record.method != "ash":
                continue
            values = dict((tuple(p.items()), v) for p, v in record.table)
            assert values[(("percentile", 99.0),)] is None
            assert record.selected.params["percentile"] != 99.0

    def test_unknown_method_rejected(self, bench):
        with pytest.raises(ConfigError, match="unknown method"):
            run_benchmark(bench, methods=("msp", "nope"))

    def test_bad_val_fraction(self, bench):
        with pytest.raises(ConfigError):
            run_benchmark(bench, methods=("msp",), val_fraction=1.0)


class TestGuard:
    def test_access_log_phases(self, report):
        assert {phase for phase, _ in report.access_log} == {"fit", "sweep", "score"}

    def test_test_dump_never_opened_during_sweep(self, report, bench):
        test_paths = {
            str(bench.entry(bb, s).id_test.resolve())
            for bb in ("bb-a", "bb-b")
            for s in (0, 1)
        }
        sweep_opens = {p for phase, p in report.access_log if phase == "sweep"}
        assert not (sweep_opens & test_paths)
        score_opens = {p for phase, p in report.access_log if phase == "score"}
        assert test_paths <= score_opens

    def test_session_forbid(self, bench):
        entry = bench.entry("bb-a", 0)
        session = _Session()
        session.forbid("sweep", entry.id_test)
        session.phase = "fit"
        session.read(entry.id_test)  # other phases unaffected
        session.phase = "sweep"
        with pytest.raises(GuardViolation, match="sweep phase"):
            session.read(entry.id_test)

    def test_session_caches_reads(self, bench):
        entry = bench.entry("bb-a", 0)
        session = _Session()
        session.phase = "fit"
        a = session.read(entry.id_val)
        b = session.read(entry.id_val)
        assert a is b
        assert len(session.log) == 2

    def test_poisoned_manifest_trips_guard(self, tmp_path):
        spec = SynthSpec(
            num_classes=3,
            feature_dim=16,
            n_train=60,
            n_val=30,
            n_test=40,
            n_ood=40,
            components_per_group=1,
            dropout_samples=2,
        )
        gen_synthetic_benchmark(spec, tmp_path)
        raw = json.loads((tmp_path / "manifest.json").read_text())
        for entry in raw["entries"].values():
            # an OoD group that smuggles in the test dump must be refused
            entry["ood_groups"]["near"] = [entry["id_test"]]
        (tmp_path / "manifest.json").write_text(json.dumps(raw))
        report = run_benchmark(tmp_path / "manifest.json", methods=("msp",))
        assert report.rows == ()
        assert len(report.failures) == 1
        failure = report.failures[0]
        assert failure.stage == "load"
        assert "may not be opened" in failure.message


class TestFailureIsolation:
    def test_corrupt_cell_does_not_sink_the_run(self, tmp_path):
        spec = SynthSpec(
            num_classes=3,
            feature_dim=16,
            n_train=60,
            n_val=30,
            n_test=40,
            n_ood=40,
            components_per_group=1,
            dropout_samples=2,
        )
        manifest = gen_synthetic_benchmark(spec, tmp_path, seeds=(0, 1))
        bad = manifest.entry("synth-a", 0).id_train
        bad.write_bytes(bad.read_bytes()[:30])  # truncate mid-header
        report = run_benchmark(tmp_path / "manifest.json", methods=("msp", "energy"))
        assert [(f.backbone, f.seed, f.method, f.stage) for f in report.failures] == [
            ("synth-a", 0, None, "load")
        ]
        assert {(r.seed, r.method) for r in report.rows} == {
            (1, "msp"),
            (1, "energy"),
        }


class TestDeterminism:
    def test_repeat_runs_identical(self, bench, report):
        again = run_benchmark(bench, methods=METHODS)
        assert report_to_dict(again) == report_to_dict(report)

    def test_parallel_matches_serial(self, bench, report):
        threaded = run_benchmark(bench, methods=METHODS, jobs=4)
        assert report_to_dict(threaded) == report_to_dict(report)


@pytest.fixture(scope="module")
def fitted(bench):
    entry = bench.entry("bb-a", 0)
    train = read_dump(entry.id_train)
    val = read_dump(entry.id_val)
    head = load_head(entry.head)
    near = read_dump(entry.ood_groups["near"][0])
    stats = fit_stats(
        train.data, head, {"gen", "ash", "knn"}, val=val.data, config=FitConfig()
    )
    return stats, head, val, near


class TestSweep:
    def test_selects_highest_validation_auroc(self, fitted):
        stats, head, val, near = fitted
        grid = SweepSpec("gen", {"gamma": (0.01, 0.1, 0.5), "M": (10,)})
        record = sweep("gen", grid, stats, head, val, near)
        values = [v for _, v in record.table]
        assert len(values) == 3 and all(v is not None for v in values)
        best = record.table[int(np.argmax(values))][0]
        assert record.selected.params["gamma"] == best["gamma"]

    def test_tie_keeps_first_declared(self, fitted):
        stats, head, val, near = fitted
        # both M values clamp to the 3 available classes: identical scores
        grid = SweepSpec("gen", {"gamma": (0.1,), "M": (50, 100)})
        record = sweep("gen", grid, stats, head, val, near)
        assert record.table[0][1] == record.table[1][1]
        assert record.selected.params["M"] == 50

    def test_failed_candidate_skipped(self, fitted):
        stats, head, val, near = fitted
        grid = SweepSpec("ash", {"percentile": (99.0, 65.0)})
        record = sweep("ash", grid, stats, head, val, near)
        assert record.table[0][1] is None
        assert record.table[1][1] is not None
        assert record.selected.params["percentile"] == 65.0

    def test_all_candidates_failing_raises(self, fitted):
        stats, head, val, near = fitted
        grid = SweepSpec("ash", {"percentile": (99.0,)})
        with pytest.raises(Exception, match="zero activation mass"):
            sweep("ash", grid, stats, head, val, near)

    def test_no_validation_ood_takes_first_candidate(self, fitted):
        stats, head, val, _ = fitted
        grid = SweepSpec("gen", {"gamma": (0.5, 0.01)})
        record = sweep("gen", grid, stats, head, val, None)
        assert record.selected.params["gamma"] == 0.5
        assert all(v is None for _, v in record.table)

    def test_method_grid_mismatch(self, fitted):
        stats, head, val, near = fitted
        with pytest.raises(ConfigError):
            sweep("msp", SweepSpec("gen", {"gamma": (0.1,)}), stats, head, val, near)

    def test_zero_val_fraction_disables_selection(self, bench):
        report = run_benchmark(bench, methods=("gen",), val_fraction=0.0)
        for record in report.sweep_records:
            assert all(v is None for _, v in record.table)
            assert record.selected.params["gamma"] == 0.01  # first grid point


class TestDefaultSweeps:
    def test_wide_features_use_standard_ladder(self):
        grids = default_sweeps(512)
        assert grids["vim"].grid["dim"] == (64, 128, 256)

    def test_narrow_features_use_fractions(self):
        assert default_sweeps(16)["vim"].grid["dim"] == (2, 4, 8)
        assert default_sweeps(8)["vim"].grid["dim"] == (1, 2, 4)

    def test_fraction_ladder_drops_full_dim(self):
        # d=2: d//2 would equal d after the {1} floor collapses duplicates
        assert 2 not in default_sweeps(2)["vim"].grid["dim"]

    def test_knn_k_clamped_to_train_size(self):
        assert default_sweeps(512, n_train=20)["knn"].grid["K"] == (20,)
        assert default_sweeps(512, n_train=9000)["knn"].grid["K"] == (50,)

    def test_configs_enumeration_order(self):
        grid = SweepSpec("gen", {"gamma": (0.1, 0.5), "M": (10, 50)})
        combos = [c.params for c in grid.configs()]
        assert [(p["gamma"], p["M"]) for p in combos] == [
            (0.1, 10),
            (0.1, 50),
            (0.5, 10),
            (0.5, 50),
        ]

    def test_empty_grid_yields_default_config(self):
        combos = SweepSpec("msp", {}).configs()
        assert combos == [MethodConfig("msp")]


class TestBestBackboneTies:
    def _summary(self, value):
        return MetricSummary(
            means={"auroc_pct": value, "acc": None}, stds={}, n=1, single_run=True
        )

    def test_tie_keeps_manifest_order(self, bench):
        aggs = [
            AggregateRow("msp", bb, g, self._summary(90.0))
            for bb in ("bb-a", "bb-b")
            for g in ("far_bp", "far_general")
        ]
        rows = _best_backbones(aggs, ("msp",), bench, ("far_bp", "far_general"))
        assert [(r.benchmark, r.backbone) for r in rows] == [("far", "bb-a")]

    def test_strictly_better_wins(self, bench):
        aggs = [
            AggregateRow("msp", "bb-a", "far_bp", self._summary(90.0)),
            AggregateRow("msp", "bb-b", "far_bp", self._summary(90.5)),
        ]
        rows = _best_backbones(aggs, ("msp",), bench, ("far_bp",))
        assert rows[0].backbone == "bb-b"

    def test_incomplete_backbone_skipped(self, bench):
        aggs = [
            AggregateRow("msp", "bb-a", "far_bp", self._summary(50.0)),
            AggregateRow("msp", "bb-a", "far_general", self._summary(50.0)),
            AggregateRow("msp", "bb-b", "far_bp", self._summary(99.0)),
            # bb-b has no far_general aggregate: it cannot win the far bench
        ]
        rows = _best_backbones(aggs, ("msp",), bench, ("far_bp", "far_general"))
        assert rows[0].backbone == "bb-a"


class TestCorrelationStudy:
    def _report(self, points, group="near"):
        aggs = tuple(
            AggregateRow(
                "msp",
                f"bb-{i}",
                group,
                MetricSummary(
                    means={"auroc_pct": auc, "acc": acc}, stds={}, n=1, single_run=True
                ),
            )
            for i, (acc, auc) in enumerate(points)
        )
        return EvalReport(
            rows=(),
            aggregates=aggs,
            best_backbones=(),
            sweep_records=(),
            failures=(),
            access_log=(),
            group_names=(group,),
            backbones=tuple(f"bb-{i}" for i in range(len(points))),
            seeds=(0,),
            methods=("msp",),
        )

    def test_monotone_association(self):
        report = self._report([(70.0, 80.0), (75.0, 85.0), (80.0, 92.0)])
        rho, n = correlation_study(report)["near"]
        assert rho == pytest.approx(1.0)
        assert n == 3

    def test_anti_monotone(self):
        report = self._report([(70.0, 92.0), (75.0, 85.0), (80.0, 80.0)])
        rho, _ = correlation_study(report)["near"]
        assert rho == pytest.approx(-1.0)

    def test_accuracy_table_override(self):
        report = self._report([(None, 80.0), (None, 85.0), (None, 92.0)])
        assert correlation_study(report) == {}
        table = {"bb-0": 70.0, "bb-1": 75.0, "bb-2": 80.0}
        rho, _ = correlation_study(report, acc_table=table)["near"]
        assert rho == pytest.approx(1.0)

    def test_single_pair_omitted(self):
        report = self._report([(70.0, 80.0)])
        assert correlation_study(report) == {}

    def test_on_real_report(self, report):
        out = correlation_study(report)
        assert set(out) <= {"far_bp", "far_general", "near"}
        for rho, n in out.values():
            assert -1.0 <= rho <= 1.0
            assert n == len(METHODS) * 2
