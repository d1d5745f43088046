"""Domain types and estimation for the just-identified linear IV model.

The model is

    y = x * beta + u          (structural equation)
    x = z * pi + v            (first stage)

with a single instrument z, optional exogenous controls w (including the
intercept column), Cov(u, z) = 0 and Cov(z, x) != 0.  Controls are removed
up front by least-squares residualization, after which every statistic in
the package is a function of the bivariate (y, x, z) system.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NoIdentificationError, SingularDesignError

__all__ = [
    "ModelData",
    "SummaryStats",
    "HypothesisTestResult",
    "partial_out",
    "estimate_2sls",
    "residual_dof",
]


def residual_dof(n: int, n_controls: int = 0) -> int:
    """Degrees of freedom used by every residual-variance estimate.

    One global convention: residual sums of squares are divided by
    ``n - k`` where ``k`` counts the estimated coefficients, i.e. the
    single slope of the equation at hand plus every partialled-out
    control column.  With n = 1000 and no controls the divisor is 999;
    with an intercept plus three controls partialled out it is 995.
    """
    k = 1 + n_controls
    if n <= k:
        raise ValueError(f"need n > {k} observations, got n={n}")
    return n - k


@dataclass(frozen=True)
class ModelData:
    """Raw observation vectors for one specification.

    y, x, z are 1-d arrays of equal length; w, when present, is an
    (n, k_w) matrix of exogenous controls including any intercept column.
    ``n_partialled`` records how many control columns were removed by
    :func:`partial_out` so that degrees of freedom stay correct after
    residualization.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray | None = None
    n_partialled: int = 0

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).ravel()
        x = np.array(self.x, dtype=np.float64).ravel()
        z = np.array(self.z, dtype=np.float64).ravel()
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if not (y.shape == x.shape == z.shape):
            raise ValueError("y, x, z must have identical length")
        w = self.w
        if w is not None:
            w = np.array(self.w, dtype=np.float64)
            if w.ndim == 1:
                w = w[:, None]
            if w.shape[1] == 0:
                w = None
            elif w.shape[0] != y.shape[0]:
                raise ValueError("w must have the same number of rows as y")
            object.__setattr__(self, "w", w)
        k_w = self.n_controls
        if y.shape[0] <= k_w + 2:
            raise ValueError(f"need n > k_w + 2 observations, got n={y.shape[0]}")
        for arr in (y, x, z):
            arr.setflags(write=False)
        if w is not None:
            w.setflags(write=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_controls(self) -> int:
        """Control columns still attached plus any already partialled out."""
        k_w = 0 if self.w is None else self.w.shape[1]
        return k_w + self.n_partialled

    @property
    def dof(self) -> int:
        """Residual degrees of freedom under the global convention."""
        return residual_dof(self.n, self.n_controls)


@dataclass(frozen=True)
class SummaryStats:
    """A specification reduced to the statistics the comparisons run on.

    beta_hat  2SLS point estimate.
    se        conventional (homoskedastic) standard error of beta_hat.
    f_hat     signed first-stage t-statistic pi_hat / SE(pi_hat).
    big_f     first-stage F-statistic, equal to f_hat**2.
    rho_hat   sample correlation between the 2SLS structural residuals
              y - x*beta_hat and the first-stage residuals x - z*pi_hat.
    dof       residual degrees of freedom of the originating data, when
              known; used to reconcile the summary-statistic identities
              with raw-data statistics exactly.
    rho_degenerate  True when the residuals were exactly zero and
              rho_hat = 0.0 was reported by convention.

    The correlation rho_hat is invariant to flipping the sign of the
    instrument, while f_hat flips.  Closed forms that take the product
    rho_hat * f_hat therefore expect the positive instrument orientation
    (f_hat = sqrt(big_f)); :meth:`oriented` returns a copy in that
    convention.
    """

    beta_hat: float
    se: float
    f_hat: float
    big_f: float
    rho_hat: float
    dof: int | None = None
    rho_degenerate: bool = False

    def __post_init__(self):
        if not self.se > 0:
            raise ValueError(f"se must be positive, got {self.se}")
        if self.big_f < 0:
            raise ValueError(f"big_f must be nonnegative, got {self.big_f}")

    @classmethod
    def from_reported(cls, *, beta_hat, se, f_hat, rho_hat, dof=None):
        """Build from reported statistics, deriving big_f = f_hat**2."""
        return cls(
            beta_hat=float(beta_hat),
            se=float(se),
            f_hat=float(f_hat),
            big_f=float(f_hat) ** 2,
            rho_hat=float(rho_hat),
            dof=dof,
        )

    @property
    def t(self) -> float:
        """t-ratio for the null beta = 0."""
        return self.beta_hat / self.se

    def t_at(self, beta0: float) -> float:
        """t-ratio for the null beta = beta0."""
        return (self.beta_hat - beta0) / self.se

    def oriented(self) -> "SummaryStats":
        """Copy with the instrument oriented so that f_hat >= 0."""
        if self.f_hat >= 0:
            return self
        return replace(self, f_hat=-self.f_hat)


@dataclass(frozen=True)
class HypothesisTestResult:
    """Outcome of a single test: reject is exactly statistic > critical_value."""

    statistic: float
    critical_value: float
    reject: bool
    level: float

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError(f"level must be in (0, 1), got {self.level}")
        if self.reject != (self.statistic > self.critical_value):
            raise ValueError("reject flag inconsistent with statistic and critical value")

    @classmethod
    def compare(cls, statistic, critical_value, level):
        statistic = float(statistic)
        critical_value = float(critical_value)
        return cls(statistic, critical_value, statistic > critical_value, float(level))


def partial_out(data: ModelData) -> ModelData:
    """Residualize y, x, z on the controls and drop the control block.

    Classic Frisch-Waugh step: replaces each of y, x, z by the residual
    from its least-squares projection on w.  A second application is a
    no-op, and 2SLS on the residualized data reproduces the coefficient
    on x from the long regression.
    """
    if data.w is None:
        return data
    w = data.w
    rank = np.linalg.matrix_rank(w)
    if rank < w.shape[1]:
        raise SingularDesignError(
            f"control matrix has rank {rank} < {w.shape[1]} columns"
        )
    q, _ = np.linalg.qr(w)

    def resid(v):
        return v - q @ (q.T @ v)

    z_res = resid(data.z)
    if not np.any(np.abs(z_res) > 1e-12 * max(1.0, float(np.abs(data.z).max()))):
        raise NoIdentificationError("instrument is collinear with the controls")
    return ModelData(
        y=resid(data.y),
        x=resid(data.x),
        z=z_res,
        w=None,
        n_partialled=data.n_partialled + w.shape[1],
    )


def estimate_2sls(data: ModelData) -> SummaryStats:
    """Just-identified 2SLS with conventional standard errors.

    Controls, if still attached, are partialled out first.  Then

        beta_hat = z'y / z'x
        se^2     = sigma_e^2 * z'z / (z'x)^2,   sigma_e^2 = e'e / (n - k)
        f_hat    = pi_hat / SE(pi_hat),         pi_hat = z'x / z'z
        rho_hat  = corr(e, v_hat),              v_hat = x - z * pi_hat

    with e = y - x*beta_hat and the degrees of freedom k of
    :func:`residual_dof` applied to both residual variances.  If the
    structural fit is exact (e = 0) the correlation is undefined; it is
    reported as 0.0 with ``rho_degenerate=True``.
    """
    data = partial_out(data)
    y, x, z = data.y, data.x, data.z
    m = data.dof

    zz = float(z @ z)
    if zz <= 0:
        raise NoIdentificationError("instrument is identically zero")
    zx = float(z @ x)
    if zx == 0.0:
        raise NoIdentificationError("z'x = 0: the structural coefficient is not identified")
    zy = float(z @ y)

    beta_hat = zy / zx
    e = y - x * beta_hat
    sigma_e2 = float(e @ e) / m
    se = float(np.sqrt(sigma_e2 * zz)) / abs(zx)

    pi_hat = zx / zz
    v = x - z * pi_hat
    vv = float(v @ v)
    if vv == 0.0:
        f_hat = np.inf * np.sign(pi_hat)
    else:
        sigma_v2 = vv / m
        f_hat = pi_hat / np.sqrt(sigma_v2 / zz)

    ee = float(e @ e)
    degenerate = ee == 0.0 or vv == 0.0
    if degenerate:
        rho_hat = 0.0
    else:
        rho_hat = float(e @ v) / np.sqrt(ee * vv)

    if se == 0.0:
        # Exact structural fit: report an infinitesimal-but-positive se so
        # the ratio statistics stay well defined downstream.
        se = np.finfo(np.float64).tiny

    return SummaryStats(
        beta_hat=beta_hat,
        se=se,
        f_hat=float(f_hat),
        big_f=float(f_hat) ** 2,
        rho_hat=rho_hat,
        dof=m,
        rho_degenerate=degenerate,
    )
