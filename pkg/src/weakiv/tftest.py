"""The tF procedure: t-ratio tests against an F-indexed critical value.

The critical value is a smooth nonincreasing function of the first-stage
F-statistic, tabulated as knots (F, cv) in a plain text table, with

    cv(F) = +inf                     for F <= f_threshold = z^2
    cv(F) -> cv_limit = z            as F -> inf

where z is the two-sided standard normal critical value for the table's
significance level.  Between knots the function interpolates linearly in
log F.  The test rejects beta = beta0 when t(beta0)^2 > cv(F)^2, and the
confidence interval is beta_hat +/- cv(F) * se, the whole real line when
cv is infinite.

Validity of a table is an empirical property, checked by
:func:`verify_size`: under the weak-instrument limit of the model the
null distribution of (t^2, F) is driven by a standard normal pair
(z_u, z_v) with correlation rho and the strength parameter f0,

    f_bar = f0 + z_v,   F = f_bar^2,
    t^2   = z_u^2 f_bar^2 / (f_bar^2 - 2 rho z_u f_bar + z_u^2),

and a table passes when its simulated worst-case rejection rate over a
(f0, rho) grid stays within Monte Carlo error of the nominal level.  In
the same limit the AR statistic equals z_u^2 exactly, which serves as
the module's self-calibration check.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import stats as _stats

from .errors import TableValidationError
from .model import HypothesisTestResult, SummaryStats
from .ar import BOUNDED, WHOLE_LINE, ConfidenceSet
from .rng import stream

__all__ = [
    "CVTable",
    "load_cv_table",
    "builtin_table_path",
    "builtin_table",
    "cv_lookup",
    "tf_test",
    "tf_confidence_interval",
    "AsymptoticNullDraw",
    "draw_asymptotic_null",
    "verify_size",
    "SizeReport",
    "DEFAULT_F0_GRID",
    "DEFAULT_RHO_GRID",
]

DEFAULT_F0_GRID = (0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 20.0, 50.0)
DEFAULT_RHO_GRID = tuple(np.round(np.arange(-19, 20) * 0.05, 2))


@dataclass(frozen=True)
class CVTable:
    """Critical-value function for one significance level.

    ``f_knots`` is strictly increasing with ``f_knots[0] >= f_threshold``
    and ``cv_knots`` strictly decreasing with every value at least
    ``cv_limit``.  ``digest`` is the sha256 of the source text, recorded
    in run manifests.
    """

    level: float
    f_threshold: float
    f_knots: np.ndarray
    cv_knots: np.ndarray
    cv_limit: float
    digest: str | None = None
    source: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "f_knots", np.array(self.f_knots, dtype=np.float64))
        object.__setattr__(self, "cv_knots", np.array(self.cv_knots, dtype=np.float64))
        self.f_knots.setflags(write=False)
        self.cv_knots.setflags(write=False)

    @property
    def n_knots(self) -> int:
        return self.f_knots.shape[0]


def _critical_z(alpha: float) -> float:
    return float(_stats.norm.ppf(1.0 - alpha / 2.0))


def _validate_knots(f, cv, f_threshold, cv_limit):
    """Return a list of (row_index, message) for every violated invariant."""
    bad = []
    for i in range(len(f)):
        if not np.isfinite(f[i]) or not np.isfinite(cv[i]):
            bad.append((i, "non-finite value"))
    if bad:
        return bad
    for i in range(1, len(f)):
        if f[i] <= f[i - 1]:
            bad.append((i, f"F not strictly increasing: {f[i]} after {f[i - 1]}"))
        if cv[i] >= cv[i - 1]:
            bad.append((i, f"cv not strictly decreasing: {cv[i]} after {cv[i - 1]}"))
    for i in range(len(f)):
        if f[i] < f_threshold:
            bad.append((i, f"F = {f[i]} below the unboundedness threshold {f_threshold:.6f}"))
        if cv[i] < cv_limit:
            bad.append((i, f"cv = {cv[i]} below the strong-instrument limit {cv_limit:.6f}"))
    return bad


def load_cv_table(source, level: float) -> CVTable:
    """Read and validate a critical-value table.

    ``source`` is a file path or an open text stream holding comma- or
    whitespace-separated rows with header ``F,cv`` and strictly
    increasing F.  Tables violating monotonicity, the threshold or the
    limit invariants are rejected with the offending rows listed.
    """
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    name = None
    if hasattr(source, "read"):
        text = source.read()
    else:
        name = os.fspath(source)
        with open(name, "r", encoding="utf-8") as fh:
            text = fh.read()
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()

    lines = [ln.strip() for ln in io.StringIO(text)]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise TableValidationError("empty critical-value table")
    header = [h.strip().lower() for h in lines[0].replace(",", " ").split()]
    if header != ["f", "cv"]:
        raise TableValidationError(f"expected header 'F,cv', got {lines[0]!r}")

    f_vals, cv_vals, bad = [], [], []
    for i, ln in enumerate(lines[1:]):
        parts = ln.replace(",", " ").split()
        try:
            fv, cv = float(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            bad.append((i, f"malformed row: {ln!r}"))
            continue
        f_vals.append(fv)
        cv_vals.append(cv)
    if bad:
        raise TableValidationError(
            "malformed rows: " + "; ".join(f"row {i}: {m}" for i, m in bad), rows=bad
        )
    if not f_vals:
        raise TableValidationError("critical-value table has no knots")

    f_threshold = _critical_z(level) ** 2
    cv_limit = _critical_z(level)
    bad = _validate_knots(f_vals, cv_vals, f_threshold, cv_limit)
    if bad:
        raise TableValidationError(
            "invalid critical-value table: "
            + "; ".join(f"row {i}: {m}" for i, m in bad),
            rows=bad,
        )
    return CVTable(
        level=level,
        f_threshold=f_threshold,
        f_knots=np.array(f_vals),
        cv_knots=np.array(cv_vals),
        cv_limit=cv_limit,
        digest=digest,
        source=name,
    )


def builtin_table_path(alpha: float) -> str:
    """Path of the shipped table for alpha in {0.05, 0.01}.

    Environment variables WEAKIV_CV_TABLE_5 and WEAKIV_CV_TABLE_1
    override the shipped files.
    """
    if math.isclose(alpha, 0.05):
        env = os.environ.get("WEAKIV_CV_TABLE_5")
        fname = "tf_cv_table_5pct.csv"
    elif math.isclose(alpha, 0.01):
        env = os.environ.get("WEAKIV_CV_TABLE_1")
        fname = "tf_cv_table_1pct.csv"
    else:
        raise ValueError(f"no shipped table for alpha={alpha}; provide a file")
    if env:
        return env
    return str(resources.files("weakiv.data").joinpath(fname))


def builtin_table(alpha: float) -> CVTable:
    """Load the shipped (or environment-overridden) table for alpha."""
    return load_cv_table(builtin_table_path(alpha), level=alpha)


def cv_values(table: CVTable, big_f) -> np.ndarray:
    """Vectorized critical-value lookup; +inf at and below the threshold.

    Linear interpolation in log F between knots; ``cv_limit`` beyond the
    last knot.  Between the threshold and the first knot the curve is
    completed hyperbolically,

        cv(F) = cv_1 * sqrt(F (F_1 - thr) / (F_1 (F - thr))),

    which is continuous at the first knot, diverges at the threshold and
    is decreasing in F, so the lookup is continuous and nonincreasing on
    the whole interval (f_threshold, inf).
    """
    f = np.asarray(big_f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("first-stage F must be nonnegative")
    out = np.empty(f.shape, dtype=np.float64)
    thr = table.f_threshold
    f1 = float(table.f_knots[0])
    c1 = float(table.cv_knots[0])

    below = f <= thr
    head = (~below) & (f < f1)
    tail = f > table.f_knots[-1]
    mid = ~(below | head | tail)

    out[below] = np.inf
    if np.any(head):
        fh = f[head]
        out[head] = c1 * np.sqrt(fh * (f1 - thr) / (f1 * (fh - thr)))
    out[tail] = table.cv_limit
    if np.any(mid):
        out[mid] = np.interp(np.log(f[mid]), np.log(table.f_knots), table.cv_knots)
    return out


def cv_lookup(table: CVTable, big_f: float) -> float:
    """Critical value (on the |t| scale) at the observed first-stage F."""
    return float(cv_values(table, np.array([big_f]))[0])


def tf_test(t: float, big_f: float, table: CVTable) -> HypothesisTestResult:
    """Compare t^2 against the squared F-indexed critical value.

    Never rejects when the critical value is infinite; coincides with
    the conventional t-test in the strong-instrument limit.
    """
    cv = cv_lookup(table, big_f)
    t2 = float(t) ** 2
    return HypothesisTestResult.compare(t2, cv * cv, table.level)


def tf_confidence_interval(stats: SummaryStats, table: CVTable) -> ConfidenceSet:
    """beta_hat +/- cv(F) * se; the whole line when cv(F) is infinite."""
    cv = cv_lookup(table, stats.big_f)
    level = 1.0 - table.level
    if not np.isfinite(cv):
        return ConfidenceSet(WHOLE_LINE, level=level)
    return ConfidenceSet(
        BOUNDED,
        lo=stats.beta_hat - cv * stats.se,
        hi=stats.beta_hat + cv * stats.se,
        level=level,
    )


@dataclass(frozen=True)
class AsymptoticNullDraw:
    """One draw from the weak-instrument limit of the null model.

    z_u drives the AR direction, z_v the first stage; corr(z_u, z_v) is
    the endogeneity rho and f_bar = f0 + z_v.
    """

    z_u: float
    z_v: float
    f0: float
    rho: float

    @property
    def f_bar(self) -> float:
        return self.f0 + self.z_v

    @property
    def big_f(self) -> float:
        return self.f_bar**2

    @property
    def ar(self) -> float:
        return self.z_u**2

    @property
    def t_sq(self) -> float:
        fb, zu, rho = self.f_bar, self.z_u, self.rho
        denom = (fb - rho * zu) ** 2 + (1.0 - rho * rho) * zu * zu
        if denom == 0.0:
            return 0.0
        return zu * zu * fb * fb / denom


def draw_asymptotic_null(f0, rho, reps, rng=None, seed=0):
    """Vectorized draws: arrays (t_sq, big_f, ar) of length reps."""
    if rng is None:
        rng = stream(seed)
    z_u = rng.standard_normal(reps)
    w = rng.standard_normal(reps)
    z_v = rho * z_u + math.sqrt(max(0.0, 1.0 - rho * rho)) * w
    f_bar = f0 + z_v
    denom = (f_bar - rho * z_u) ** 2 + (1.0 - rho * rho) * z_u**2
    t_sq = np.where(denom > 0.0, z_u**2 * f_bar**2 / np.where(denom > 0, denom, 1.0), 0.0)
    return t_sq, f_bar**2, z_u**2


@dataclass(frozen=True)
class SizeReport:
    """Worst-case null rejection of a table over a (f0, rho) grid."""

    alpha: float
    reps: int
    f0_grid: tuple
    rho_grid: tuple
    rates: np.ndarray  # shape (len(f0_grid), len(rho_grid))
    passed: bool
    sup_rate: float
    sup_f0: float
    sup_rho: float
    sup_mc_se: float

    def format(self) -> str:
        lines = [
            f"size verification at alpha={self.alpha:g}, reps={self.reps} per cell",
            f"grid: {len(self.f0_grid)} f0 values x {len(self.rho_grid)} rho values",
            (
                f"worst cell: f0={self.sup_f0:g}, rho={self.sup_rho:g}, "
                f"rate={self.sup_rate:.5f} (mc se {self.sup_mc_se:.5f})"
            ),
            f"bound: alpha + 3*mc_se = {self.alpha + 3 * self.sup_mc_se:.5f}",
            f"result: {'PASS' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines)


def _cell_rejection(table, f0, rho, reps, seed, cell_index):
    rng = stream(seed, cell_index)
    t_sq, big_f, _ = draw_asymptotic_null(f0, rho, reps, rng=rng)
    cv = cv_values(table, big_f)
    return int(np.count_nonzero(t_sq > cv * cv))


def verify_size(
    table: CVTable,
    f0_grid=DEFAULT_F0_GRID,
    rho_grid=DEFAULT_RHO_GRID,
    reps: int = 100_000,
    seed: int = 0,
    workers: int | None = None,
) -> SizeReport:
    """Monte Carlo worst-case size of the tF test under the null model.

    For each (f0, rho) cell, draws ``reps`` replications from the
    asymptotic null and records the rejection rate of the test.  PASS
    means the supremum over the grid stays below alpha + 3 Monte Carlo
    standard errors.  Per-cell streams are keyed by (seed, cell index),
    so the report does not depend on the worker count.
    """
    if reps < 10_000:
        raise ValueError(f"reps must be at least 10000 for a meaningful check, got {reps}")
    f0_grid = tuple(float(v) for v in f0_grid)
    rho_grid = tuple(float(v) for v in rho_grid)
    cells = [(i, f0, rho) for i, (f0, rho) in enumerate(
        (f0, rho) for f0 in f0_grid for rho in rho_grid
    )]

    counts = np.zeros(len(cells), dtype=np.int64)
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(_cell_rejection, table, f0, rho, reps, seed, i): i
                for i, f0, rho in cells
            }
            for fut, i in futs.items():
                counts[i] = fut.result()
    else:
        for i, f0, rho in cells:
            counts[i] = _cell_rejection(table, f0, rho, reps, seed, i)

    rates = counts.reshape(len(f0_grid), len(rho_grid)) / float(reps)
    flat = int(np.argmax(rates))
    i0, j0 = divmod(flat, len(rho_grid))
    sup = float(rates[i0, j0])
    mc_se = math.sqrt(max(sup * (1.0 - sup), 1e-12) / reps)
    return SizeReport(
        alpha=table.level,
        reps=reps,
        f0_grid=f0_grid,
        rho_grid=rho_grid,
        rates=rates,
        passed=sup <= table.level + 3.0 * mc_se,
        sup_rate=sup,
        sup_f0=f0_grid[i0],
        sup_rho=rho_grid[j0],
        sup_mc_se=mc_se,
    )
