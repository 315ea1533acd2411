import numpy as np
import pytest

from oodkit import AugmentedDump, FeatureSet, LinearHead

# filled by test_acceptance.py: (criterion name, passed, elapsed seconds)
ACCEPTANCE_RESULTS: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, ok, elapsed in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  [{elapsed:.1f}s]")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_instance(rng, n=32, d=8, c=4, with_labels=True):
    """A consistent random problem instance: features, a head producing
    the logits, and labels drawn to hit every class at least once."""
    features = rng.standard_normal((n, d))
    weights = rng.standard_normal((c, d))
    bias = rng.standard_normal(c)
    head = LinearHead(weights=weights, bias=bias)
    logits = head.logits(features)
    labels = None
    if with_labels:
        labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
        rng.shuffle(labels)
    data = FeatureSet(features=features, labels=labels, logits=logits)
    return data, head


def random_aug(rng, logits, t=4, with_odin=True):
    from oodkit import batch_softmax

    stacks = np.stack(
        [
            batch_softmax(logits + 0.1 * rng.standard_normal(logits.shape))
            for _ in range(t)
        ],
        axis=1,
    )
    odin = logits + 0.05 * rng.standard_normal(logits.shape) if with_odin else None
    return AugmentedDump(dropout_prob_stacks=stacks, odin_logits=odin)


# ---------------------------------------------------------------------------
# fixed report for the formatting goldens
# ---------------------------------------------------------------------------

# per (method, backbone, group): fpr95_id, fpr99_id, fpr95_ood, fpr99_ood, auroc
_GOLDEN_CELLS = {
    ("mahalanobis", "ResNet-50", "far_bp"): (19.41, 27.83, 15.02, 49.67, 91.20),
    ("mahalanobis", "ResNet-50", "far_general"): (22.74, 30.11, 17.85, 52.30, 89.40),
    ("mahalanobis", "ResNet-50", "near"): (61.33, 74.02, 55.48, 83.91, 76.30),
    ("mahalanobis", "DenseNet-201", "far_bp"): (16.87, 24.95, 12.76, 47.22, 93.10),
    ("mahalanobis", "DenseNet-201", "far_general"): (20.58, 28.64, 16.31, 50.89, 90.80),
    ("mahalanobis", "DenseNet-201", "near"): (63.90, 76.45, 58.12, 85.77, 74.90),
    ("vim", "ResNet-50", "far_bp"): (18.23, 26.47, 14.11, 48.95, 95.01),
    ("vim", "ResNet-50", "far_general"): (21.06, 29.38, 16.54, 51.42, 93.50),
    ("vim", "ResNet-50", "near"): (58.77, 71.69, 52.84, 81.26, 78.20),
    ("vim", "DenseNet-201", "far_bp"): (13.82, 21.08, 10.27, 45.59, 97.57),
    ("vim", "DenseNet-201", "far_general"): (15.49, 23.31, 11.93, 46.84, 96.10),
    ("vim", "DenseNet-201", "near"): (60.15, 73.24, 54.37, 82.63, 77.30),
    ("energy", "ResNet-50", "far_bp"): (27.64, 36.18, 23.49, 57.02, 86.00),
    ("energy", "ResNet-50", "far_general"): (30.27, 38.95, 25.81, 59.36, 84.30),
    ("energy", "ResNet-50", "near"): (67.48, 79.13, 62.05, 88.24, 70.20),
    ("energy", "DenseNet-201", "far_bp"): (25.93, 34.57, 21.88, 55.41, 87.50),
    ("energy", "DenseNet-201", "far_general"): (28.36, 37.02, 24.15, 57.79, 85.10),
    ("energy", "DenseNet-201", "near"): (68.91, 80.56, 63.72, 89.48, 69.80),
}
_GOLDEN_SPREAD = (0.41, 0.52, 0.33, 0.64, 0.18)
_GOLDEN_ACC = {"ResNet-50": 91.21, "DenseNet-201": 93.34}
_GOLDEN_METHODS = ("mahalanobis", "vim", "energy")
_GOLDEN_BACKBONES = ("ResNet-50", "DenseNet-201")
_GOLDEN_GROUPS = ("far_bp", "far_general", "near")


def build_golden_report():
    """A fully handcrafted report whose rendered output is frozen under
    tests/golden/.

    Seed rows sit at base, base-spread and base+spread, so every aggregate
    mean reproduces the base values and every std the spread exactly
    (three equally spaced points have sample std equal to the spacing).
    """
    from oodkit import EvalRow, MetricRow, SweepRecord
    from oodkit.harness import _aggregate, _best_backbones

    class _Shell:
        backbones = _GOLDEN_BACKBONES

    rows = []
    for backbone in _GOLDEN_BACKBONES:
        for seed in (0, 1, 2):
            offset = seed - 1
            for method in _GOLDEN_METHODS:
                for group in _GOLDEN_GROUPS:
                    base = _GOLDEN_CELLS[(method, backbone, group)]
                    values = [b + offset * s for b, s in zip(base, _GOLDEN_SPREAD)]
                    rows.append(
                        EvalRow(
                            method,
                            backbone,
                            seed,
                            group,
                            MetricRow(
                                fpr95_id=values[0],
                                fpr99_id=values[1],
                                fpr95_ood=values[2],
                                fpr99_ood=values[3],
                                auroc_pct=values[4],
                                n_id=5000,
                                n_ood=1600,
                                acc=_GOLDEN_ACC[backbone] + offset * 0.12,
                            ),
                        )
                    )
    aggregates = _aggregate(rows, _GOLDEN_METHODS, _Shell, _GOLDEN_GROUPS)
    best = _best_backbones(aggregates, _GOLDEN_METHODS, _Shell, _GOLDEN_GROUPS)

    from oodkit import MethodConfig

    sweeps = []
    for backbone in _GOLDEN_BACKBONES:
        for seed in (0, 1, 2):
            sweeps.append(
                SweepRecord(
                    "vim",
                    backbone,
                    seed,
                    MethodConfig("vim", {"dim": 256}),
                    (
                        ({"dim": 64}, 94.12),
                        ({"dim": 128}, 95.86),
                        ({"dim": 256}, 96.94),
                    ),
                )
            )

    from oodkit import EvalReport

    return EvalReport(
        rows=tuple(rows),
        aggregates=tuple(aggregates),
        best_backbones=tuple(best),
        sweep_records=tuple(sweeps),
        failures=(),
        access_log=(
            ("fit", "dumps/resnet50/0/id_train.oodf"),
            ("sweep", "dumps/resnet50/0/near.oodf"),
            ("score", "dumps/resnet50/0/id_test.oodf"),
        ),
        group_names=_GOLDEN_GROUPS,
        backbones=_GOLDEN_BACKBONES,
        seeds=(0, 1, 2),
        methods=_GOLDEN_METHODS,
    )
