"""Replication pipeline over collections of reported IV specifications.

Input schema (plain CSV, header required, optional fields may be blank):

    study_id   identifier of the study                       (required)
    spec_id    identifier of the specification, unique
               together with study_id                        (required)
    t          reported t-ratio for the null beta = 0        (required)
    f_hat      signed first-stage t-statistic; reports that
               publish only F can store sqrt(F)              (required)
    beta_hat   point estimate                                (required)
    se         standard error, positive                      (required)
    ar_stat    reported AR statistic at beta = 0             (optional)
    rho_hat    reported residual correlation                 (optional)

At least one of ar_stat and rho_hat must be present: the residual
correlation is otherwise unrecoverable and the row is rejected, the
same exclusion a zero AR statistic forces downstream.  f_hat and
rho_hat are assumed orientation-consistent (both measured against the
same sign of the instrument); reports carrying only F use the positive
orientation.

Each record is classified at the 5% and 1% levels under the
conventional t-ratio, the AR test and the tF procedure, confidence
sets are built for the latter two, and the log length difference
ln(length_tF / length_AR) feeds the distribution and heatmap reports.
Records are never dropped silently: the exclusion ledger accounts for
every input row, so input count = classified + excluded.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .ar import (
    CHI2_1DF_1PCT,
    CHI2_1DF_5PCT,
    ar_confidence_set,
    ar_statistic_summary,
    recover_rho,
)
from .errors import NotRecoverableError, SchemaError
from .model import SummaryStats
from .tftest import CVTable, cv_lookup, tf_confidence_interval

__all__ = [
    "SpecificationRecord",
    "ComparisonRecord",
    "IngestResult",
    "GridSpec",
    "HeatmapGrid",
    "ingest",
    "standardize_coords",
    "classify",
    "classify_all",
    "aggregate_figure1",
    "AgreementTable",
    "loglength_distribution",
    "LogLengthReport",
    "heatmap_grid",
    "INSIGNIFICANT",
    "SIG_5PCT",
    "SIG_1PCT",
    "REASON_RHO_UNRECOVERABLE",
    "REASON_INVALID_RHO",
]

INSIGNIFICANT = "insignificant"
SIG_5PCT = "5%"
SIG_1PCT = "1%"
_CLASS_RANK = {INSIGNIFICANT: 0, SIG_5PCT: 1, SIG_1PCT: 2}

REASON_RHO_UNRECOVERABLE = "rho unrecoverable"
REASON_INVALID_RHO = "invalid estimated correlation"

_REQUIRED = ("study_id", "spec_id", "t", "f_hat", "beta_hat", "se")
_OPTIONAL = ("ar_stat", "rho_hat")
_COLUMNS = _REQUIRED + _OPTIONAL

# conventional two-sided t cutoffs (z quantiles squared are the chi2 values)
_T_CUT_5 = math.sqrt(CHI2_1DF_5PCT)
_T_CUT_1 = math.sqrt(CHI2_1DF_1PCT)


@dataclass(frozen=True)
class SpecificationRecord:
    """One reported specification, reduced to its published statistics."""

    study_id: str
    spec_id: str
    t: float
    f_hat: float
    beta_hat: float
    se: float
    ar_stat: float | None = None
    rho_hat: float | None = None

    def __post_init__(self):
        if self.se <= 0:
            raise ValueError(f"se must be positive, got {self.se}")
        if self.ar_stat is None and self.rho_hat is None:
            raise ValueError("need at least one of ar_stat and rho_hat")

    @property
    def big_f(self) -> float:
        return self.f_hat**2

    @property
    def key(self):
        return (self.study_id, self.spec_id)


@dataclass(frozen=True)
class IngestResult:
    records: list
    rejected: list  # (row_number, reason) pairs, 1-based data rows

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def ingest(source) -> IngestResult:
    """Read specification records from CSV text.

    Structural problems (missing columns, non-numeric required fields,
    duplicate keys) raise :class:`SchemaError` with row numbers.  Rows
    that are well formed but carry neither ar_stat nor rho_hat are
    returned in ``rejected`` with the reason ``"rho unrecoverable"``;
    they later enter the exclusion ledger.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(os.fspath(source), "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in io.StringIO(text)]
    rows = [ln.rstrip("\n").rstrip("\r") for ln in lines if ln.strip()]
    if not rows:
        raise SchemaError("empty input: expected a header row")
    header = [h.strip() for h in rows[0].split(",")]
    missing = [c for c in _REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"missing required columns: {', '.join(missing)}")
    unknown = [c for c in header if c not in _COLUMNS]
    if unknown:
        raise SchemaError(f"unknown columns: {', '.join(unknown)}")
    idx = {c: header.index(c) for c in header}

    records, rejected, seen = [], [], {}
    errors = []
    for rowno, ln in enumerate(rows[1:], start=1):
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != len(header):
            errors.append(f"row {rowno}: expected {len(header)} fields, got {len(parts)}")
            continue

        def get(col):
            return parts[idx[col]] if col in idx else ""

        study_id, spec_id = get("study_id"), get("spec_id")
        if not study_id or not spec_id:
            errors.append(f"row {rowno}: empty study_id or spec_id")
            continue
        numeric = {}
        bad = False
        for col in ("t", "f_hat", "beta_hat", "se"):
            raw = get(col)
            try:
                numeric[col] = float(raw)
            except ValueError:
                errors.append(f"row {rowno}: non-numeric {col} = {raw!r}")
                bad = True
        for col in _OPTIONAL:
            raw = get(col)
            if raw == "":
                numeric[col] = None
            else:
                try:
                    numeric[col] = float(raw)
                except ValueError:
                    errors.append(f"row {rowno}: non-numeric {col} = {raw!r}")
                    bad = True
        if bad:
            continue
        key = (study_id, spec_id)
        if key in seen:
            errors.append(
                f"row {rowno}: duplicate (study_id, spec_id) = {key}, first at row {seen[key]}"
            )
            continue
        seen[key] = rowno
        if numeric["se"] <= 0:
            errors.append(f"row {rowno}: se must be positive, got {numeric['se']}")
            continue
        if numeric["ar_stat"] is None and numeric["rho_hat"] is None:
            rejected.append((rowno, REASON_RHO_UNRECOVERABLE, study_id, spec_id))
            continue
        records.append(SpecificationRecord(study_id=study_id, spec_id=spec_id, **numeric))
    if errors:
        raise SchemaError("; ".join(errors))
    return IngestResult(records=records, rejected=rejected)


def standardize_coords(t: float, big_f: float):
    """Map (t, F) onto the unit square for the significance scatter.

        x = (F / 10) / (1 + F / 10)
        y = (t^2 / 1.96^2) / (1 + t^2 / 1.96^2)

    Strictly increasing in F and t^2, with range [0, 1); F = 10 lands
    exactly at x = 0.5 and t = 1.96 at y = 0.5.
    """
    if big_f < 0:
        raise ValueError("big_f must be nonnegative")
    fx = big_f / 10.0
    ty = t * t / CHI2_1DF_5PCT
    return fx / (1.0 + fx), ty / (1.0 + ty)


def _three_way(sig5: bool, sig1: bool) -> str:
    if sig1:
        return SIG_1PCT
    if sig5:
        return SIG_5PCT
    return INSIGNIFICANT


@dataclass(frozen=True)
class ComparisonRecord:
    """Classification and confidence sets for one specification."""

    record: SpecificationRecord
    x: float
    y: float
    classes: dict  # procedure -> three-way class; None when not computable
    rho_used: float | None
    ar_value: float | None
    ar_set_5: object = None
    ar_set_1: object = None
    tf_set_5: object = None
    tf_set_1: object = None
    log_length_ratio_5: float | None = None
    log_length_ratio_1: float | None = None
    excluded: bool = False
    exclusion_reason: str | None = None

    def log_length_ratio(self, alpha: float) -> float | None:
        return self.log_length_ratio_5 if math.isclose(alpha, 0.05) else self.log_length_ratio_1


def classify(record: SpecificationRecord, cv5: CVTable, cv1: CVTable) -> ComparisonRecord:
    """Classify one record under the three procedures at both levels.

    Exclusion cases are flagged, never dropped: a record whose residual
    correlation cannot be recovered (zero AR statistic or zero t) keeps
    whatever classes are computable from the reported numbers, and a
    record with an invalid correlation (|rho| > 1) is flagged with the
    corresponding reason.
    """
    t, f_hat, big_f = record.t, record.f_hat, record.big_f
    x, y = standardize_coords(t, big_f)

    rho = record.rho_hat
    excluded = False
    reason = None
    if rho is None:
        try:
            rho = recover_rho(t, f_hat, record.ar_stat)
        except NotRecoverableError:
            rho = None
            excluded = True
            reason = REASON_RHO_UNRECOVERABLE
    if rho is not None and abs(rho) > 1.0:
        excluded = True
        reason = REASON_INVALID_RHO

    # AR statistic at beta0 = 0: reported value wins, else the closed form
    if record.ar_stat is not None:
        ar_value = record.ar_stat
    elif rho is not None:
        ar_value = ar_statistic_summary(t, f_hat, rho)
    else:
        ar_value = None

    classes = {
        "t": _three_way(t * t > CHI2_1DF_5PCT, t * t > CHI2_1DF_1PCT),
        "AR": None
        if ar_value is None
        else _three_way(ar_value > CHI2_1DF_5PCT, ar_value > CHI2_1DF_1PCT),
        "tF": _three_way(
            t * t > cv_lookup(cv5, big_f) ** 2, t * t > cv_lookup(cv1, big_f) ** 2
        ),
    }

    ar5 = ar1 = tf5 = tf1 = None
    lr5 = lr1 = None
    if not excluded and rho is not None:
        stats = SummaryStats(
            beta_hat=record.beta_hat,
            se=record.se,
            f_hat=f_hat,
            big_f=big_f,
            rho_hat=rho,
        )
        ar5 = ar_confidence_set(stats, level=0.95)
        ar1 = ar_confidence_set(stats, level=0.99)
        tf5 = tf_confidence_interval(stats, cv5)
        tf1 = tf_confidence_interval(stats, cv1)
        if ar5.is_bounded and tf5.is_bounded:
            lr5 = math.log(tf5.length() / ar5.length())
        if ar1.is_bounded and tf1.is_bounded:
            lr1 = math.log(tf1.length() / ar1.length())

    return ComparisonRecord(
        record=record,
        x=x,
        y=y,
        classes=classes,
        rho_used=rho,
        ar_value=ar_value,
        ar_set_5=ar5,
        ar_set_1=ar1,
        tf_set_5=tf5,
        tf_set_1=tf1,
        log_length_ratio_5=lr5,
        log_length_ratio_1=lr1,
        excluded=excluded,
        exclusion_reason=reason,
    )


def classify_all(records, cv5: CVTable, cv1: CVTable) -> list:
    """Classify a record list; deterministic and order-independent."""
    return [classify(r, cv5, cv1) for r in records]


@dataclass(frozen=True)
class AgreementTable:
    """Cross-procedure significance agreement in the style of the scatter."""

    n_classified: int
    counts: dict  # (ar_class, tf_class) -> count
    n_tf_insig_5: int
    n_ar_sig_among_tf_insig_5: int
    n_tf_5_only: int
    n_ar_1_among_tf_5_only: int
    tf_stricter_violations: list

    @property
    def share_ar_sig_among_tf_insig_5(self) -> float | None:
        if self.n_tf_insig_5 == 0:
            return None
        return self.n_ar_sig_among_tf_insig_5 / self.n_tf_insig_5

    @property
    def share_ar_1_among_tf_5_only(self) -> float | None:
        if self.n_tf_5_only == 0:
            return None
        return self.n_ar_1_among_tf_5_only / self.n_tf_5_only


def aggregate_figure1(comparisons) -> AgreementTable:
    """Agreement shares between the AR and tF classifications.

    Conditional shares with an empty conditioning set are reported as
    undefined (None), never as a propagated NaN.  Any record the tF
    procedure ranks strictly more significant than AR is listed as a
    violation; none are expected.
    """
    usable = [c for c in comparisons if c.classes["AR"] is not None]
    counts = {}
    n_tf_insig = n_ar_sig_tf_insig = 0
    n_tf_5 = n_ar1_tf_5 = 0
    violations = []
    for c in usable:
        ar_c, tf_c = c.classes["AR"], c.classes["tF"]
        counts[(ar_c, tf_c)] = counts.get((ar_c, tf_c), 0) + 1
        if tf_c == INSIGNIFICANT:
            n_tf_insig += 1
            if ar_c != INSIGNIFICANT:
                n_ar_sig_tf_insig += 1
        if tf_c == SIG_5PCT:
            n_tf_5 += 1
            if ar_c == SIG_1PCT:
                n_ar1_tf_5 += 1
        if _CLASS_RANK[tf_c] > _CLASS_RANK[ar_c]:
            violations.append(c.record.key)
    return AgreementTable(
        n_classified=len(usable),
        counts=counts,
        n_tf_insig_5=n_tf_insig,
        n_ar_sig_among_tf_insig_5=n_ar_sig_tf_insig,
        n_tf_5_only=n_tf_5,
        n_ar_1_among_tf_5_only=n_ar1_tf_5,
        tf_stricter_violations=violations,
    )


BIN_WIDTH = 0.05

# display anchors: familiar interval-length ratios for scale
REFERENCE_CONSTANTS = (
    ("ln(1.96/1.645)", math.log(1.96 / 1.645)),
    ("ln(2.58/1.96)", math.log(2.58 / 1.96)),
)


@dataclass(frozen=True)
class LogLengthReport:
    """Distribution of ln(length_tF / length_AR) at one level."""

    alpha: float
    values: np.ndarray
    bin_lo: np.ndarray
    bin_counts: np.ndarray
    n_included: int
    share_ar_shorter: float | None
    mean_when_ar_shorter: float | None
    mean_when_ar_longer: float | None
    share_above_30_logpoints: float | None
    excluded_by_reason: dict

    @property
    def reference_constants(self):
        return REFERENCE_CONSTANTS


def loglength_distribution(comparisons, alpha: float) -> LogLengthReport:
    """Histogram (0.05-wide bins) and summary of the log length ratios.

    Only records with both sets bounded at the level enter; everything
    else is counted in ``excluded_by_reason``.  Bins are aligned so that
    a ratio of exactly 1 falls in the bin starting at 0.
    """
    values = []
    excluded = {}

    def count(reason):
        excluded[reason] = excluded.get(reason, 0) + 1

    for c in comparisons:
        if c.excluded:
            count(c.exclusion_reason)
            continue
        lr = c.log_length_ratio(alpha)
        if lr is None:
            ar_set = c.ar_set_5 if math.isclose(alpha, 0.05) else c.ar_set_1
            tf_set = c.tf_set_5 if math.isclose(alpha, 0.05) else c.tf_set_1
            if ar_set is None or tf_set is None:
                count(REASON_RHO_UNRECOVERABLE)
            elif not tf_set.is_bounded:
                count("tF interval unbounded")
            else:
                count("AR set unbounded")
            continue
        values.append(lr)

    values = np.asarray(sorted(values), dtype=np.float64)
    n = len(values)
    if n:
        idx = np.floor(values / BIN_WIDTH + 1e-12).astype(np.int64)
        lo, hi = int(idx.min()), int(idx.max())
        edges = np.arange(lo, hi + 1)
        counts = np.bincount(idx - lo, minlength=hi - lo + 1)
        bin_lo = edges * BIN_WIDTH
        share_shorter = float(np.mean(values > 0))
        above = values[values > 0]
        below = values[values < 0]
        report = LogLengthReport(
            alpha=alpha,
            values=values,
            bin_lo=bin_lo,
            bin_counts=counts,
            n_included=n,
            share_ar_shorter=share_shorter,
            mean_when_ar_shorter=float(above.mean()) if len(above) else None,
            mean_when_ar_longer=float(below.mean()) if len(below) else None,
            share_above_30_logpoints=float(np.mean(values > 0.30)),
            excluded_by_reason=excluded,
        )
    else:
        report = LogLengthReport(
            alpha=alpha,
            values=values,
            bin_lo=np.array([]),
            bin_counts=np.array([], dtype=np.int64),
            n_included=0,
            share_ar_shorter=None,
            mean_when_ar_shorter=None,
            mean_when_ar_longer=None,
            share_above_30_logpoints=None,
            excluded_by_reason=excluded,
        )
    return report


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the smoothed comparison surface."""

    nx: int = 41
    ny: int = 41
    bandwidth: float = 0.08
    cutoff: float = 3.0  # kernel truncated at cutoff * bandwidth

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 points per axis")


@dataclass(frozen=True)
class HeatmapGrid:
    """Kernel-smoothed log length differences over (|rho|, transformed F)."""

    alpha: float
    x_centers: np.ndarray  # |rho| axis
    y_centers: np.ndarray  # (F/10)/(1+F/10) axis
    values: np.ndarray  # shape (ny, nx), NaN where no observation in reach
    n_points: int
    spec: GridSpec


def heatmap_grid(comparisons, alpha: float, spec: GridSpec | None = None) -> HeatmapGrid:
    """Gaussian-kernel weighted average of log length differences.

    Each grid cell over (|rho|, (F/10)/(1+F/10)) averages nearby
    observations with weights exp(-d^2 / (2 h^2)), truncated at
    ``cutoff * h``.  Cells with no observation in reach are emitted as
    missing (NaN), never as zero.
    """
    spec = spec or GridSpec()
    pts_x, pts_y, pts_v = [], [], []
    for c in comparisons:
        if c.excluded or c.rho_used is None:
            continue
        lr = c.log_length_ratio(alpha)
        if lr is None:
            continue
        fx = c.record.big_f / 10.0
        pts_x.append(abs(c.rho_used))
        pts_y.append(fx / (1.0 + fx))
        pts_v.append(lr)

    xs = np.linspace(0.0, 1.0, spec.nx)
    ys = np.linspace(0.0, 1.0, spec.ny)
    values = np.full((spec.ny, spec.nx), np.nan)
    if pts_x:
        px = np.asarray(pts_x)
        py = np.asarray(pts_y)
        pv = np.asarray(pts_v)
        h2 = spec.bandwidth**2
        max_d2 = (spec.cutoff * spec.bandwidth) ** 2
        gx, gy = np.meshgrid(xs, ys)
        d2 = (gx[..., None] - px) ** 2 + (gy[..., None] - py) ** 2
        w = np.where(d2 <= max_d2, np.exp(-0.5 * d2 / h2), 0.0)
        wsum = w.sum(axis=-1)
        with np.errstate(invalid="ignore"):
            avg = (w * pv).sum(axis=-1) / wsum
        values = np.where(wsum > 0.0, avg, np.nan)
    return HeatmapGrid(
        alpha=alpha,
        x_centers=xs,
        y_centers=ys,
        values=values,
        n_points=len(pts_x),
        spec=spec,
    )


# --------------------------------------------------------- tabular exports


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def agreement_csv(table: AgreementTable) -> str:
    """Agreement table as metric,value rows plus the class cross-counts."""
    lines = ["metric,value"]
    lines.append(f"n_classified,{table.n_classified}")
    for ar_c in (INSIGNIFICANT, SIG_5PCT, SIG_1PCT):
        for tf_c in (INSIGNIFICANT, SIG_5PCT, SIG_1PCT):
            n = table.counts.get((ar_c, tf_c), 0)
            lines.append(f"count_ar_{_slug(ar_c)}_tf_{_slug(tf_c)},{n}")
    lines.append(f"n_tf_insignificant_5pct,{table.n_tf_insig_5}")
    lines.append(f"n_ar_significant_among_tf_insignificant_5pct,{table.n_ar_sig_among_tf_insig_5}")
    lines.append(
        f"share_ar_significant_among_tf_insignificant_5pct,{_fmt(table.share_ar_sig_among_tf_insig_5)}"
    )
    lines.append(f"n_tf_5pct_only,{table.n_tf_5_only}")
    lines.append(f"n_ar_1pct_among_tf_5pct_only,{table.n_ar_1_among_tf_5_only}")
    lines.append(f"share_ar_1pct_among_tf_5pct_only,{_fmt(table.share_ar_1_among_tf_5_only)}")
    lines.append(f"n_tf_stricter_than_ar,{len(table.tf_stricter_violations)}")
    for study, spec in table.tf_stricter_violations:
        lines.append(f"tf_stricter_violation,{study}:{spec}")
    return "\n".join(lines) + "\n"


def _slug(cls: str) -> str:
    return {INSIGNIFICANT: "insig", SIG_5PCT: "5pct", SIG_1PCT: "1pct"}[cls]


def loglength_csv(report: LogLengthReport) -> str:
    """Histogram plus summary as row_type,key,value rows."""
    lines = ["row_type,key,value"]
    for lo, n in zip(report.bin_lo, report.bin_counts):
        lines.append(f"bin,{lo!r},{int(n)}")
    lines.append(f"summary,n_included,{report.n_included}")
    lines.append(f"summary,share_ar_shorter,{_fmt(report.share_ar_shorter)}")
    lines.append(f"summary,mean_when_ar_shorter,{_fmt(report.mean_when_ar_shorter)}")
    lines.append(f"summary,mean_when_ar_longer,{_fmt(report.mean_when_ar_longer)}")
    lines.append(f"summary,share_above_30_logpoints,{_fmt(report.share_above_30_logpoints)}")
    for reason, n in sorted(report.excluded_by_reason.items()):
        lines.append(f"excluded,{reason},{n}")
    for name, value in report.reference_constants:
        lines.append(f"footer,{name},{value!r}")
    return "\n".join(lines) + "\n"


def heatmap_csv(grid: HeatmapGrid) -> str:
    """Long-format x,y,value rows; missing cells have an empty value."""
    lines = ["abs_rho,f_transformed,value"]
    for j, yv in enumerate(grid.y_centers):
        for i, xv in enumerate(grid.x_centers):
            v = grid.values[j, i]
            txt = "" if not np.isfinite(v) else repr(float(v))
            lines.append(f"{float(xv)!r},{float(yv)!r},{txt}")
    return "\n".join(lines) + "\n"


def exclusions_csv(rows) -> str:
    """Exclusion ledger rows: (study_id, spec_id, stage, reason)."""
    lines = ["study_id,spec_id,stage,reason"]
    for study, spec, stage, reason in rows:
        lines.append(f"{study},{spec},{stage},{reason}")
    return "\n".join(lines) + "\n"
