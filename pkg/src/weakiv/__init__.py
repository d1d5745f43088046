"""Weak-instrument-robust inference for just-identified linear IV models.

The package compares two inference procedures for the coefficient of a
single endogenous regressor instrumented by a single instrument: the
Anderson-Rubin test with its inverted confidence sets, and the t-ratio
compared against a critical value that decreases in the first-stage F
statistic.  It provides the estimation layer, both tests and their
confidence sets, a Monte Carlo power engine, a replication pipeline
over collections of reported specifications, and a command-line
interface.
"""

__version__ = "0.1.0"

from .model import (
    ModelData,
    SummaryStats,
    HypothesisTestResult,
    partial_out,
    estimate_2sls,
    residual_dof,
)
from .ar import (
    ConfidenceSet,
    BOUNDED,
    TWO_RAYS,
    WHOLE_LINE,
    ar_statistic_raw,
    ar_statistic_summary,
    recover_rho,
    ar_confidence_set,
    chi2_critical,
)
from .tftest import (
    CVTable,
    load_cv_table,
    builtin_table,
    builtin_table_path,
    cv_lookup,
    tf_test,
    tf_confidence_interval,
    verify_size,
)
from .simulate import (
    DGPConfig,
    PowerCurve,
    draw_dataset,
    run_power_study,
    run_power_grid,
    power_report,
    parse_power_report,
)
from .empirics import (
    SpecificationRecord,
    ComparisonRecord,
    GridSpec,
    ingest,
    standardize_coords,
    classify,
    classify_all,
    aggregate_figure1,
    loglength_distribution,
    heatmap_grid,
)

__all__ = [
    "__version__",
    "ModelData",
    "SummaryStats",
    "HypothesisTestResult",
    "partial_out",
    "estimate_2sls",
    "residual_dof",
    "ConfidenceSet",
    "BOUNDED",
    "TWO_RAYS",
    "WHOLE_LINE",
    "ar_statistic_raw",
    "ar_statistic_summary",
    "recover_rho",
    "ar_confidence_set",
    "chi2_critical",
    "CVTable",
    "load_cv_table",
    "builtin_table",
    "builtin_table_path",
    "cv_lookup",
    "tf_test",
    "tf_confidence_interval",
    "verify_size",
    "DGPConfig",
    "PowerCurve",
    "draw_dataset",
    "run_power_study",
    "run_power_grid",
    "power_report",
    "parse_power_report",
    "SpecificationRecord",
    "ComparisonRecord",
    "GridSpec",
    "ingest",
    "standardize_coords",
    "classify",
    "classify_all",
    "aggregate_figure1",
    "loglength_distribution",
    "heatmap_grid",
]
