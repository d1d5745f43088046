"""Anderson-Rubin test and confidence sets for the just-identified model.

Two pathways compute the same statistic.  The raw pathway evaluates the
quadratic form

    AR(beta0) = (z'e0)^2 / (sigma0^2 * z'z),    e0 = y - x*beta0,

with sigma0^2 = e0'e0 / (n - k).  The summary pathway evaluates the
closed form in the reported statistics (t at beta0, signed first-stage
statistic f_hat, residual correlation rho_hat)

    AR = t^2 F / (F + 2 rho_hat f_hat t + t^2),    F = f_hat^2,

which is the large-sample version of the raw quadratic form.  Passing
the residual degrees of freedom reproduces the raw statistic exactly:
the finite-sample denominator carries one extra term t^2 F / dof.

Inverting AR(beta0) <= c over beta0 is a quadratic inequality in
t = (beta_hat - beta0) / se, so the confidence set is a bounded
interval, the union of two rays, or the whole real line:

    bounded     iff F > c
    two rays    iff c (1 - rho^2) < F < c
    whole line  iff F <= c (1 - rho^2)

The statistic is compared against chi-square(1) critical values; both
set shapes and the trichotomy follow from the sign of F - c and the
discriminant c F (F - c (1 - rho^2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats

from .errors import (
    DegenerateSpecificationError,
    NoIdentificationError,
    NotRecoverableError,
)
from .model import ModelData, SummaryStats, partial_out

__all__ = [
    "BOUNDED",
    "TWO_RAYS",
    "WHOLE_LINE",
    "ConfidenceSet",
    "chi2_critical",
    "CHI2_1DF_5PCT",
    "CHI2_1DF_1PCT",
    "ar_statistic_raw",
    "ar_statistic_summary",
    "recover_rho",
    "ar_confidence_set",
]

BOUNDED = "bounded"
TWO_RAYS = "two_rays"
WHOLE_LINE = "whole_line"

# chi-square(1) upper quantiles, i.e. 1.959964^2 and 2.575829^2
CHI2_1DF_5PCT = 3.841458820694124
CHI2_1DF_1PCT = 6.634896601021214


def chi2_critical(alpha: float) -> float:
    """chi-square(1) critical value for a test at significance level alpha."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return float(_stats.chi2.ppf(1.0 - alpha, df=1))


@dataclass(frozen=True)
class ConfidenceSet:
    """A confidence set over the real line.

    kind is one of ``bounded`` ([lo, hi]), ``two_rays``
    ((-inf, lo] union [hi, inf), lo < hi) or ``whole_line``.  A ray
    endpoint of a two-ray set may itself be infinite, in which case that
    ray is empty and the set degenerates to a single ray; this happens
    only on the knife edge F == c of the inversion.  Length is defined
    only for bounded sets and is never silently coerced to a number.
    """

    kind: str
    lo: float | None = None
    hi: float | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.kind not in (BOUNDED, TWO_RAYS, WHOLE_LINE):
            raise ValueError(f"unknown confidence set kind {self.kind!r}")
        if self.kind == BOUNDED and not self.lo <= self.hi:
            raise ValueError("bounded set requires lo <= hi")
        if self.kind == TWO_RAYS and not self.lo < self.hi:
            raise ValueError("two-ray set requires lo < hi")

    @property
    def is_bounded(self) -> bool:
        return self.kind == BOUNDED

    def length(self) -> float:
        """hi - lo for a bounded set; raises for unbounded sets."""
        if self.kind != BOUNDED:
            raise ValueError(f"{self.kind} confidence set has no finite length")
        return self.hi - self.lo

    def contains(self, beta0: float) -> bool:
        if self.kind == WHOLE_LINE:
            return True
        if self.kind == BOUNDED:
            return self.lo <= beta0 <= self.hi
        return beta0 <= self.lo or beta0 >= self.hi

    def __str__(self):
        if self.kind == WHOLE_LINE:
            return "(-inf, inf)"
        if self.kind == BOUNDED:
            return f"[{self.lo:.6g}, {self.hi:.6g}]"
        return f"(-inf, {self.lo:.6g}] U [{self.hi:.6g}, inf)"


def ar_statistic_raw(data: ModelData, beta0: float) -> float:
    """AR statistic at the null beta = beta0 from raw observations.

    The data are residualized on any attached controls first.  At the
    2SLS point estimate the statistic is exactly zero (z'e = 0 is the
    normal equation).
    """
    data = partial_out(data)
    z = data.z
    zz = float(z @ z)
    if zz <= 0:
        raise NoIdentificationError("instrument is identically zero")
    e0 = data.y - data.x * float(beta0)
    ze = float(z @ e0)
    ss = float(e0 @ e0)
    if ss == 0.0:
        return 0.0
    sigma0_sq = ss / data.dof
    return ze * ze / (sigma0_sq * zz)


def ar_statistic_summary(
    t: float, f_hat: float, rho_hat: float, dof: int | None = None
) -> float:
    """AR statistic implied by (t, f_hat, rho_hat).

    The product rho_hat * f_hat must be orientation-consistent: with
    rho_hat measured against the first-stage residuals of the positively
    oriented instrument, pass f_hat = sqrt(F) (see
    :meth:`SummaryStats.oriented`).  With ``dof`` given, the exact
    finite-sample identity with :func:`ar_statistic_raw` under the
    shared degrees-of-freedom convention is used.
    """
    t = float(t)
    f_hat = float(f_hat)
    rho_hat = float(rho_hat)
    big_f = f_hat * f_hat
    # (f + rho t)^2 + (1 - rho^2) t^2, the algebraically nonnegative form
    denom = (f_hat + rho_hat * t) ** 2 + (1.0 - rho_hat**2) * t * t
    if denom <= 0.0:
        raise DegenerateSpecificationError(
            "degenerate statistics: F + 2*rho*f*t + t^2 = 0"
        )
    if dof is not None:
        denom += t * t * big_f / float(dof)
    return t * t * big_f / denom


def recover_rho(t: float, f_hat: float, ar: float, dof: int | None = None) -> float:
    """Invert the summary identity for the residual correlation.

        rho_hat = (t^2 F - ar (F + t^2)) / (2 ar f_hat t)

    Defined only for ar > 0 and t != 0; the caller is responsible for
    checking |rho_hat| <= 1, mirroring the exclusion of specifications
    with an invalid recovered correlation.  ``dof`` selects the exact
    finite-sample identity, as in :func:`ar_statistic_summary`.
    """
    t = float(t)
    f_hat = float(f_hat)
    ar = float(ar)
    if ar <= 0.0:
        raise NotRecoverableError(
            "AR statistic is zero: the residual correlation is not recoverable"
        )
    if t == 0.0:
        raise NotRecoverableError(
            "t-ratio is zero: the residual correlation is not recoverable"
        )
    if f_hat == 0.0:
        raise NotRecoverableError(
            "first-stage statistic is zero: the residual correlation is not recoverable"
        )
    big_f = f_hat * f_hat
    tt = t * t
    adj = tt * big_f / float(dof) if dof is not None else 0.0
    return (tt * big_f - ar * (big_f + tt + adj)) / (2.0 * ar * f_hat * t)


def ar_confidence_set(stats: SummaryStats, level: float = 0.95) -> ConfidenceSet:
    """Invert the AR test into a confidence set for beta.

    Solves the quadratic inequality in t = (beta_hat - beta0) / se

        t^2 (F - c) - 2 c rho f t - c F <= 0,    c = chi2_critical(1 - level),

    and maps the solution back through beta0 = beta_hat - se * t.  On
    the knife edge F == c the quadratic degenerates to a linear
    inequality whose solution is a single ray; it is reported as a
    two-ray set with the vanished ray's endpoint at infinity, the
    continuity limit of the F < c classification.
    """
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    rho = stats.rho_hat
    if abs(rho) > 1.0:
        raise ValueError(f"|rho_hat| = {abs(rho)} > 1 is not a valid correlation")
    c = chi2_critical(1.0 - level)
    big_f = stats.big_f
    f_hat = stats.f_hat
    beta_hat, se = stats.beta_hat, stats.se

    a = big_f - c
    b = -2.0 * c * rho * f_hat
    g = -c * big_f
    # discriminant / 4 in the numerically exact factored form
    quarter_disc = c * big_f * (big_f - c * (1.0 - rho * rho))

    if a == 0.0:
        if b == 0.0:
            return ConfidenceSet(WHOLE_LINE, level=level)
        t0 = -g / b
        beta0 = beta_hat - se * t0
        if b > 0.0:
            # t <= t0, i.e. beta0 >= beta_hat - se * t0: right ray only
            return ConfidenceSet(TWO_RAYS, lo=-math.inf, hi=beta0, level=level)
        return ConfidenceSet(TWO_RAYS, lo=beta0, hi=math.inf, level=level)

    if quarter_disc <= 0.0:
        # only reachable with a < 0; the parabola never dips below zero
        return ConfidenceSet(WHOLE_LINE, level=level)

    half_b = -c * rho * f_hat
    sq = math.sqrt(quarter_disc)
    # stable root pair: q = -(half_b + sign(half_b) sq); roots q/a and g/q
    if half_b >= 0.0:
        q = -(half_b + sq)
    else:
        q = -(half_b - sq)
    t1 = q / a
    t2 = g / q
    t_lo, t_hi = (t1, t2) if t1 <= t2 else (t2, t1)

    if a > 0.0:
        # t in [t_lo, t_hi]  ->  beta0 in [beta_hat - se*t_hi, beta_hat - se*t_lo]
        return ConfidenceSet(
            BOUNDED,
            lo=beta_hat - se * t_hi,
            hi=beta_hat - se * t_lo,
            level=level,
        )
    # a < 0 with positive discriminant: t <= t_lo or t >= t_hi
    return ConfidenceSet(
        TWO_RAYS,
        lo=beta_hat - se * t_hi,
        hi=beta_hat - se * t_lo,
        level=level,
    )
