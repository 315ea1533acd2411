"""Post-hoc out-of-distribution detection toolkit.

Fit training-time statistics from exported classifier features and logits,
compute 22 post-hoc OoD scores under one orientation (higher = more ID),
apply the threshold decision rule, and run the benchmark protocol end to
end: sweeps, both FPR polarities, AUROC, seeded aggregation and reports.
"""

__version__ = "0.1.0"

from .data_model import (
    HIGHER_IS_ID,
    AugmentedDump,
    FeatureSet,
    LinearHead,
    ProbVector,
    ScoreVector,
    Violation,
    batch_softmax,
    log_sum_exp,
    softmax,
    validate_feature_set,
)
from .decision import ID, OOD, Threshold, calibrate_threshold, classify
from .errors import (
    ConfigError,
    DegenerateData,
    DimensionMismatch,
    FitFailure,
    FormatError,
    GuardViolation,
    MissingArtifact,
    MissingChannel,
    OodkitError,
)
from .harness import (
    AggregateRow,
    BestBackboneRow,
    CellFailure,
    EvalReport,
    EvalRow,
    SweepRecord,
    SweepSpec,
    correlation_study,
    default_sweeps,
    run_benchmark,
    sweep,
)
from .interchange import (
    BenchmarkManifest,
    Dump,
    ManifestEntry,
    load_head,
    load_manifest,
    load_stats,
    read_dump,
    save_head,
    save_stats,
    write_dump,
    write_dump_raw,
)
from .metrics import (
    MetricRow,
    MetricSummary,
    accuracy,
    auroc,
    fpr_at_tpr,
    spearman_rho,
    summarize,
)
from .reporting import emit_report, load_report, report_from_dict, report_to_dict, save_report
from .scores import (
    DISPLAY_NAME,
    FAMILY,
    METHOD_IDS,
    MethodConfig,
    compute_score,
)
from .stats_fit import (
    FitConfig,
    FittedStats,
    fit_background_gaussian,
    fit_class_means,
    fit_dice_mask,
    fit_knn_index,
    fit_openmax_tails,
    fit_per_class_cov_inv,
    fit_principal_subspace,
    fit_prototypes,
    fit_react_threshold,
    fit_shared_cov_inv,
    fit_she_patterns,
    fit_stats,
    fit_temperature,
    fit_vim_alpha,
    weibull_cdf,
    weibull_mle,
)
from .synth import SynthSpec, gen_synthetic_benchmark

__all__ = [
    "__version__",
    # data model
    "HIGHER_IS_ID",
    "AugmentedDump",
    "FeatureSet",
    "LinearHead",
    "ProbVector",
    "ScoreVector",
    "Violation",
    "batch_softmax",
    "log_sum_exp",
    "softmax",
    "validate_feature_set",
    # errors
    "OodkitError",
    "FormatError",
    "DimensionMismatch",
    "MissingArtifact",
    "MissingChannel",
    "DegenerateData",
    "FitFailure",
    "ConfigError",
    "GuardViolation",
    # interchange
    "Dump",
    "read_dump",
    "write_dump",
    "write_dump_raw",
    "save_head",
    "load_head",
    "save_stats",
    "load_stats",
    "BenchmarkManifest",
    "ManifestEntry",
    "load_manifest",
    # stats
    "FitConfig",
    "FittedStats",
    "fit_stats",
    "fit_class_means",
    "fit_shared_cov_inv",
    "fit_per_class_cov_inv",
    "fit_background_gaussian",
    "fit_principal_subspace",
    "fit_vim_alpha",
    "fit_knn_index",
    "fit_prototypes",
    "fit_temperature",
    "fit_react_threshold",
    "fit_dice_mask",
    "fit_she_patterns",
    "fit_openmax_tails",
    "weibull_mle",
    "weibull_cdf",
    # scores
    "METHOD_IDS",
    "FAMILY",
    "DISPLAY_NAME",
    "MethodConfig",
    "compute_score",
    # decision
    "ID",
    "OOD",
    "Threshold",
    "calibrate_threshold",
    "classify",
    # metrics
    "MetricRow",
    "MetricSummary",
    "auroc",
    "fpr_at_tpr",
    "accuracy",
    "spearman_rho",
    "summarize",
    # harness
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
    # reporting
    "emit_report",
    "report_to_dict",
    "report_from_dict",
    "save_report",
    "load_report",
    # synthetic benchmark
    "SynthSpec",
    "gen_synthetic_benchmark",
]
