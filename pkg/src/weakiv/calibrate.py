"""Construction of the F-indexed critical-value tables.

No machine-readable version of the published critical-value function is
shipped with this package, so the tables under ``weakiv/data`` are
computed from scratch against the weak-instrument null model and then
re-verified by the independent Monte Carlo check in
:func:`weakiv.tftest.verify_size`.

The null rejection probability of the test "reject when
t^2 > cv(F)^2" at nuisance parameters (f0, rho) is

    size(f0, rho) = E[ 1{ t^2 > cv(f_bar^2)^2 } ],
    f_bar = f0 + z_v,
    t^2   = z_u^2 f_bar^2 / ((f_bar - rho z_u)^2 + (1 - rho^2) z_u^2),

with (z_u, z_v) standard normal with correlation rho.  Conditional on
f_bar = h, z_u is normal with mean rho (h - f0) and variance 1 - rho^2,
and the event t^2 > c^2 is a quadratic inequality in z_u:

    (h^2 - c^2) z_u^2 + 2 c^2 rho h z_u - c^2 h^2 > 0,

so the conditional rejection probability is an explicit combination of
normal CDFs and the size is a one-dimensional integral over h.  It is
evaluated by piecewise Gauss-Legendre quadrature with breakpoints at
+/- sqrt of every table knot (where the critical-value curve has kinks)
and at the unboundedness threshold.  At |rho| = 1 the conditional law
is degenerate and the size reduces to the normal mass of the set
{ |h - f0| |h| > f0 cv(h^2), h^2 > threshold }, computed by
root-finding; both its endpoints (rho = +1 and -1) give the same size,
matching the sign symmetries size(f0, rho) = size(-f0, rho) =
size(f0, -rho) of the model.

Calibration minimizes the knot values subject to the size staying at or
below the nominal level over a dense (f0, rho) grid including the
|rho| = 1 boundary: knots are swept from strong to weak instruments,
each lowered by bisection until the worst-case size binds, and the
sweeps are repeated to a fixed point.  A nonincreasing envelope and a
trailing-plateau trim are applied before the table is written.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats as _stats

from .tftest import CVTable, cv_values, _critical_z

__all__ = [
    "asymptotic_size",
    "size_at_unit_rho",
    "worst_case_size",
    "calibrate_cv_table",
    "validate_table_size",
    "write_cv_table",
    "default_knot_grid",
]

_NORM = _stats.norm
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_RANGE = 8.5  # integration half-width around f0, in first-stage sd units


def _conditional_reject(h, cv, f0, rho):
    """Vectorized conditional rejection probability given f_bar = h."""
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(cv, dtype=np.float64)
    out = np.zeros(h.shape, dtype=np.float64)

    finite = np.isfinite(c)
    if not np.any(finite):
        return out
    h = h[finite]
    c = c[finite]

    a = h * h - c * c
    b = 2.0 * c * c * rho * h
    g = -(c * c) * (h * h)
    # disc/4 = c^2 h^2 (h^2 - c^2 (1 - rho^2)), exact factored form
    quarter = c * c * h * h * (h * h - c * c * (1.0 - rho * rho))

    mu = rho * (h - f0)
    s = math.sqrt(max(0.0, 1.0 - rho * rho))
    if s == 0.0:
        val = a * mu * mu + b * mu + g
        p = (val > 0.0).astype(np.float64)
        out[finite] = p
        return out

    p = np.zeros(h.shape, dtype=np.float64)
    real = quarter > 0.0
    if np.any(real):
        ar, br, gr = a[real], b[real], g[real]
        sq = 2.0 * np.sqrt(quarter[real])
        q = -0.5 * (br + np.sign(br) * sq)
        q = np.where(q == 0.0, -0.5 * sq, q)  # b == 0: q = -sqrt(disc)/2
        az = np.where(ar == 0.0, np.finfo(np.float64).tiny, ar)
        r1 = q / az
        r2 = gr / q
        r_lo = np.minimum(r1, r2)
        r_hi = np.maximum(r1, r2)
        mur = mu[real]
        inside = _NORM.cdf((r_hi - mur) / s) - _NORM.cdf((r_lo - mur) / s)
        p_real = np.where(ar > 0.0, 1.0 - inside, inside)
        p[real] = p_real
    # quarter <= 0 only with a < 0: the quadratic never exceeds zero
    out[finite] = p
    return out


def _breakpoints(table: CVTable):
    roots = np.sqrt(np.concatenate(([table.f_threshold], table.f_knots)))
    return np.sort(np.concatenate((-roots[::-1], roots)))


def _pieces(lo, hi, breaks, w_max):
    """Sub-intervals of [lo, hi] split at breaks and capped at width w_max."""
    pts = [lo]
    for b in breaks:
        if lo < b < hi:
            pts.append(b)
    pts.append(hi)
    edges = []
    for a, b in zip(pts[:-1], pts[1:]):
        n_sub = max(1, int(math.ceil((b - a) / w_max)))
        sub = np.linspace(a, b, n_sub + 1)
        edges.extend(zip(sub[:-1], sub[1:]))
    return edges


def asymptotic_size(table: CVTable, f0: float, rho: float, w_max: float = 0.25) -> float:
    """Null rejection probability of the table's test at (f0, rho)."""
    if abs(rho) >= 1.0:
        return size_at_unit_rho(table, f0)
    lo, hi = f0 - _RANGE, f0 + _RANGE
    root_thr = math.sqrt(table.f_threshold)
    breaks = _breakpoints(table)
    total = 0.0
    halfw = []
    mids = []
    for a, b in _pieces(lo, hi, breaks, w_max):
        if -root_thr <= a and b <= root_thr:
            continue  # cv is infinite: no rejection
        halfw.append(0.5 * (b - a))
        mids.append(0.5 * (a + b))
    if not mids:
        return 0.0
    halfw = np.asarray(halfw)
    mids = np.asarray(mids)
    h = mids[:, None] + halfw[:, None] * _GL_NODES[None, :]
    wts = halfw[:, None] * _GL_WEIGHTS[None, :]
    hf = h.ravel()
    cv = cv_values(table, hf * hf)
    pr = _conditional_reject(hf, cv, f0, rho)
    dens = _NORM.pdf(hf - f0)
    total = float(np.sum(wts.ravel() * dens * pr))
    return total


def size_at_unit_rho(table: CVTable, f0: float) -> float:
    """Exact size at |rho| = 1 via root-finding.

    With z_u = +/- z_v the rejection event is deterministic given
    f_bar = h:  |h - f0| |h| > f0 cv(h^2)  and  h^2 > threshold.
    """
    if f0 == 0.0:
        return 2.0 * _NORM.cdf(-math.sqrt(table.f_threshold))

    def gap(h):
        cv = cv_values(table, np.asarray(h) ** 2)
        return np.abs(h - f0) * np.abs(h) - f0 * cv

    root_thr = math.sqrt(table.f_threshold)
    lo, hi = f0 - _RANGE, f0 + _RANGE
    breaks = _breakpoints(table)
    mass = 0.0
    eps = 1e-9
    for a, b in _pieces(lo, hi, breaks, w_max=0.5):
        if -root_thr <= a and b <= root_thr:
            continue
        a_in, b_in = a + eps * (b - a), b - eps * (b - a)
        grid = np.linspace(a_in, b_in, 9)
        vals = gap(grid)
        cuts = [a_in]
        for i in range(len(grid) - 1):
            if vals[i] == 0.0 or (vals[i] > 0) != (vals[i + 1] > 0):
                try:
                    r = optimize.brentq(
                        lambda x: float(gap(np.array([x]))[0]),
                        grid[i],
                        grid[i + 1],
                        xtol=1e-12,
                    )
                    cuts.append(r)
                except ValueError:
                    pass
        cuts.append(b_in)
        cuts = sorted(cuts)
        for x0, x1 in zip(cuts[:-1], cuts[1:]):
            xm = 0.5 * (x0 + x1)
            if float(gap(np.array([xm]))[0]) > 0.0:
                mass += float(_NORM.cdf(x1 - f0) - _NORM.cdf(x0 - f0))
    return mass


def default_f0_grid(f_max: float) -> np.ndarray:
    """Strength grid dense where the size constraint is sensitive."""
    top = math.sqrt(f_max) + 3.0
    parts = [
        np.arange(0.1, 4.0, 0.2),
        np.arange(4.0, 16.0, 0.25),
        np.arange(16.0, 30.0, 0.5),
        np.arange(30.0, min(60.0, top), 2.0),
    ]
    if top > 60.0:
        parts.append(np.arange(60.0, top, 5.0))
    return np.unique(np.round(np.concatenate(parts), 6))


DEFAULT_RHO_CALIBRATION = (0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0)


def worst_case_size(table: CVTable, f0_grid, rho_grid, w_max: float = 0.25):
    """(sup size, argmax (f0, rho), full matrix) over the grid."""
    sizes = np.empty((len(f0_grid), len(rho_grid)))
    for i, f0 in enumerate(f0_grid):
        for j, rho in enumerate(rho_grid):
            sizes[i, j] = asymptotic_size(table, f0, rho, w_max=w_max)
    flat = int(np.argmax(sizes))
    i0, j0 = divmod(flat, len(rho_grid))
    return float(sizes[i0, j0]), (float(f0_grid[i0]), float(rho_grid[j0])), sizes


def default_knot_grid(alpha: float, f_max: float, n_knots: int = 32) -> np.ndarray:
    """Log-spaced knots in F - threshold, denser near the threshold."""
    thr = _critical_z(alpha) ** 2
    offs = np.geomspace(0.02, f_max - thr, n_knots)
    knots = thr + offs
    if alpha == 0.05:
        knots = np.sort(np.unique(np.append(knots, [10.0, 104.67])))
    return knots


@dataclass
class _Calibration:
    alpha: float
    thr: float
    z: float
    f_knots: np.ndarray
    cv: np.ndarray

    def table(self) -> CVTable:
        return CVTable(
            level=self.alpha,
            f_threshold=self.thr,
            f_knots=self.f_knots,
            cv_knots=self.cv,
            cv_limit=self.z,
        )


def calibrate_cv_table(
    alpha: float,
    f_max: float | None = None,
    n_knots: int = 32,
    margin: float = 5e-6,
    cap: float = 1e4,
    bisect_tol: float = 2e-4,
    sweeps: int = 6,
    top_cells: int = 48,
    verbose: bool = False,
) -> CVTable:
    """Compute the minimal monotone critical-value table for ``alpha``.

    Returns a table whose worst-case asymptotic size over the
    calibration grid is at most ``alpha - margin`` up to the bisection
    tolerance.  ``f_max`` defaults to a level-specific value past which
    the flat strong-instrument limit is valid on its own.
    """
    z = _critical_z(alpha)
    thr = z * z
    if f_max is None:
        f_max = 400.0 if alpha >= 0.05 else 6000.0
    f_knots = default_knot_grid(alpha, f_max, n_knots)
    K = len(f_knots)
    # shaped starting curve: diverges at the threshold, decays to the limit
    init = np.minimum(cap, z * np.sqrt(1.0 + 12.0 / (f_knots - thr)))
    state = _Calibration(alpha, thr, z, f_knots, init)

    f0_grid = default_f0_grid(f_max)
    rho_grid = np.asarray(DEFAULT_RHO_CALIBRATION)
    target = alpha - margin

    # ---- phase 1: equalize the near-degenerate boundary -------------------
    #
    # The binding constraints concentrate at |rho| near 1, where the
    # rejection event given f_bar = h is deterministic: reject when
    # |h - f0| |h| > f0 cv(h^2).  A strength value f0 rejects on two
    # flanks, h near f0 +/- 2 (in normal-quantile units), so knot j at
    # F_j influences every constraint with f0 within flank reach of
    # sqrt(F_j).  Each knot is root-found against the worst constraint
    # in that window; joint infeasibilities (several knots short at
    # once) are resolved by damped raises rather than jumps, so the
    # sweeps relax to the equalizer instead of oscillating.
    def window_cells(j):
        root = math.sqrt(f_knots[j])
        f0s = np.arange(max(0.15, root - 3.2), root + 3.4, 0.4)
        return [(float(f0), rho) for f0 in f0s for rho in (0.95, 1.0)]

    def window_gap(j, cj, cells):
        state.cv[j] = cj
        table = state.table()
        return max(asymptotic_size(table, f0, rho) for f0, rho in cells) - target

    for sweep in range(12):
        moved = 0.0
        for j in range(K):
            lo = state.cv[j + 1] if j + 1 < K else z
            hi = state.cv[j - 1] if j > 0 else cap
            old = min(max(state.cv[j], lo), hi)
            cells = window_cells(j)
            if window_gap(j, hi, cells) > 0.0:
                new = min(hi, old * 1.10)  # cannot fix alone: damped raise
            elif window_gap(j, lo, cells) <= 0.0:
                new = lo
            else:
                new = optimize.brentq(
                    lambda c: window_gap(j, c, cells), lo, hi, xtol=1e-5, rtol=1e-6
                )
            state.cv[j] = new
            moved = max(moved, abs(new - old) / max(1.0, old))
        state.cv = np.maximum.accumulate(state.cv[::-1])[::-1]
        if verbose:
            print(
                f"boundary sweep {sweep}: moved={moved:.3e} "
                f"cv[0]={state.cv[0]:.3f} cv[10]={state.cv[min(10, K - 1)]:.4f} "
                f"cv[-1]={state.cv[-1]:.5f}",
                file=sys.stderr,
            )
        if moved < 2e-4:
            break

    # ---- phase 2: correction sweeps against the full (f0, rho) grid -------
    def sizes_on(cells, table):
        return np.array([asymptotic_size(table, f0, rho) for f0, rho in cells])

    def full_eval(table):
        sup, arg, sizes = worst_case_size(table, f0_grid, rho_grid)
        order = np.argsort(sizes.ravel())[::-1][:top_cells]
        hot = [
            (float(f0_grid[k // len(rho_grid)]), float(rho_grid[k % len(rho_grid)]))
            for k in order
        ]
        return sup, hot

    def local_cells(j):
        # cells whose first-stage draws concentrate near knot j
        mid = math.sqrt(state.f_knots[j])
        f0s = np.arange(max(0.1, mid - 4.0), mid + 4.0, 0.5)
        rhos = (0.7, 0.9, 0.95, 0.99, 0.999, 1.0)
        return [(float(f0), rho) for f0 in f0s for rho in rhos]

    for sweep in range(sweeps):
        moved = 0.0
        sup0, hot = full_eval(state.table())
        if verbose:
            print(f"full sweep {sweep}: starting sup={sup0:.6f}", file=sys.stderr)
        if sup0 <= alpha - margin / 2 and sweep > 0:
            break
        for j in range(K - 1, -1, -1):
            lo = state.cv[j + 1] if j + 1 < K else z
            hi = state.cv[j - 1] if j > 0 else cap
            old = state.cv[j]
            cells = hot + local_cells(j)

            def sizes_with(cj):
                state.cv[j] = cj
                return sizes_on(cells, state.table())

            # Cells already violating through other knots only need to
            # not get worse than they are with knot j fully protective.
            base = sizes_with(hi)
            goals = np.maximum(target, base + 1e-7)

            def ok(cj):
                return bool(np.all(sizes_with(cj) <= goals))

            if ok(lo):
                new = lo
            else:
                a, b = lo, hi
                while b - a > bisect_tol * max(1.0, a):
                    m = math.sqrt(a * b)
                    if ok(m):
                        b = m
                    else:
                        a = m
                new = b
            state.cv[j] = new
            moved = max(moved, abs(new - old) / max(1.0, old))
        state.cv = np.maximum.accumulate(state.cv[::-1])[::-1]
        sup1, hot = full_eval(state.table())
        if verbose:
            print(
                f"full sweep {sweep}: sup={sup1:.6f} moved={moved:.3e} "
                f"cv[0]={state.cv[0]:.3f} cv[10]={state.cv[min(10, K - 1)]:.4f} "
                f"cv[-1]={state.cv[-1]:.5f}",
                file=sys.stderr,
            )
        if sup1 <= alpha and moved < 1e-3:
            break

    # ---- final safety: localized lifts while any grid violation remains ---
    for _ in range(40):
        sup, (f0_bad, _rho_bad), _ = worst_case_size(state.table(), f0_grid, rho_grid)
        bsizes = [size_at_unit_rho(state.table(), f0) for f0 in f0_grid]
        sup_b = max(bsizes)
        if sup_b > sup:
            sup = sup_b
            f0_bad = float(f0_grid[int(np.argmax(bsizes))])
        if sup <= alpha - margin / 2:
            break
        # raise the knots reachable from the violating cell's F range
        center = max(f0_bad - 2.3, 0.5) ** 2
        near = np.argsort(np.abs(np.log(state.f_knots) - math.log(center)))[:4]
        state.cv[near] = z + (state.cv[near] - z) * 1.01 + 2e-4
        state.cv = np.maximum.accumulate(state.cv[::-1])[::-1]

    return _trim(state)


def _trim(state: _Calibration) -> CVTable:
    """Drop the trailing floor plateau and enforce strict decrease."""
    z = state.z
    cv = np.maximum(state.cv, z)
    f = state.f_knots
    floor = cv <= z + 1e-6
    if np.any(floor):
        first = int(np.argmax(floor))
        cv = np.concatenate((cv[:first], [z]))
        f = np.concatenate((f[:first], [f[first]]))
    keep = [0]
    for i in range(1, len(f)):
        if cv[i] < cv[keep[-1]] - 1e-9:
            keep.append(i)
    f, cv = f[keep], cv[keep]
    return CVTable(
        level=state.alpha,
        f_threshold=state.thr,
        f_knots=f,
        cv_knots=cv,
        cv_limit=z,
    )


def validate_table_size(
    table: CVTable,
    f0_step: float = 0.1,
    f0_max: float | None = None,
    tol_interior: float = 5e-5,
    tol_boundary: float = 1.2e-4,
):
    """Dense quadrature check of a finished table.

    Returns (sup interior, sup at |rho| = 1).  Raises if either exceeds
    its tolerance above the nominal level: up to ``tol_interior`` for
    |rho| <= 0.999 and ``tol_boundary`` on the degenerate boundary,
    where any table flat at the strong-instrument limit keeps a
    vanishing excess at very large f0.
    """
    if f0_max is None:
        f0_max = math.sqrt(float(table.f_knots[-1])) + 3.0
    f0s = np.arange(f0_step, f0_max, f0_step)
    rhos = (0.0, 0.3, 0.5, 0.7, 0.85, 0.95, 0.99, 0.999)
    sup_i, _arg, _ = worst_case_size(table, f0s, rhos)
    sup_b = max(size_at_unit_rho(table, f0) for f0 in f0s)
    alpha = table.level
    if sup_i > alpha + tol_interior:
        raise RuntimeError(f"interior size {sup_i:.6f} exceeds {alpha} + {tol_interior}")
    if sup_b > alpha + tol_boundary:
        raise RuntimeError(f"boundary size {sup_b:.6f} exceeds {alpha} + {tol_boundary}")
    return sup_i, sup_b


def write_cv_table(table: CVTable, path: str) -> None:
    """Write knots as the plain 'F,cv' text format read by load_cv_table."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("F,cv\n")
        for fv, cv in zip(table.f_knots, table.cv_knots):
            fh.write(f"{fv:.6f},{max(cv, table.cv_limit + 4e-7):.6f}\n")


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Recompute a critical-value table from scratch."
    )
    parser.add_argument("--alpha", type=float, required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--f-max", type=float, default=None)
    parser.add_argument("--n-knots", type=int, default=32)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    table = calibrate_cv_table(
        args.alpha, f_max=args.f_max, n_knots=args.n_knots, verbose=args.verbose
    )
    sup_i, sup_b = validate_table_size(table)
    write_cv_table(table, args.out)
    print(
        f"wrote {args.out}: {table.n_knots} knots, "
        f"interior sup size {sup_i:.6f}, boundary sup size {sup_b:.6f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
