"""Shared test utilities: independent oracles and exact data constructors."""

import math

import numpy as np

from weakiv.ar import chi2_critical
from weakiv.model import ModelData


def orthonormal_triplet(n, rng):
    """Three random orthonormal vectors in R^n."""
    m = rng.standard_normal((n, 3))
    q, _ = np.linalg.qr(m)
    return q[:, 0], q[:, 1], q[:, 2]


def dataset_with_stats(
    *, t0, f_hat, rho_hat, n=60, beta_hat=None, se=None, seed=0
):
    """Construct raw data whose 2SLS summary statistics are exact.

    Builds y, x, z from an orthonormal frame so that the fitted
    statistics (t at beta0 = 0, signed first-stage statistic, residual
    correlation) equal the requested values exactly, up to floating
    point.  The construction places the first-stage residual along one
    basis vector and the structural residual at the requested
    correlation to it, with the instrument orthogonal to both.
    """
    rng = np.random.default_rng(seed)
    q_z, q_a, q_b = orthonormal_triplet(n, rng)
    m = n - 1  # residual degrees of freedom without controls

    if se is None:
        se = 0.5
    if beta_hat is None:
        beta_hat = t0 * se

    z = q_z * math.sqrt(n)  # z'z = n
    zz = n
    c_v = 1.0  # |v| = 1
    v = c_v * q_a
    pi_hat = f_hat * c_v / math.sqrt(m * zz)
    x = z * pi_hat + v

    # choose |e| to match the requested standard error
    zx = pi_hat * zz
    c_e = abs(zx) * se * math.sqrt(m / zz)
    e = c_e * (rho_hat * q_a + math.sqrt(1.0 - rho_hat**2) * q_b)
    y = x * beta_hat + e
    return ModelData(y=y, x=x, z=z)


def ar_membership(stats, beta0, c):
    """Direct quadratic-inequality membership check for the AR set."""
    t = (stats.beta_hat - beta0) / stats.se
    big_f = stats.big_f
    return t * t * (big_f - c) - 2 * c * stats.rho_hat * stats.f_hat * t - c * big_f <= 0


def ar_set_gridsearch(stats, level, half_width=50.0, step_scale=1e-4):
    """Brute-force inversion of the AR test on a beta0 grid.

    Scans beta_hat +/- half_width * se in steps of step_scale * se and
    reads off the accepted region's structure: a bounded interval, two
    rays, or the whole window.  Returns (kind, endpoints) where
    endpoints brackets the transitions seen in the window.
    """
    c = chi2_critical(1.0 - level)
    steps = int(round(2 * half_width / step_scale))
    ts = -half_width + step_scale * np.arange(steps + 1)
    big_f = stats.big_f
    vals = ts * ts * (big_f - c) - 2 * c * stats.rho_hat * stats.f_hat * ts - c * big_f
    accept = vals <= 0.0
    betas = stats.beta_hat - stats.se * ts

    if accept.all():
        return "whole_line", ()
    if not accept.any():
        raise AssertionError("point estimate must always be accepted")
    flips = np.flatnonzero(accept[1:] != accept[:-1])
    if accept[0] and accept[-1]:
        # accepted at both window ends, rejected interval inside: two rays
        lo_edge = betas[flips[-1] + 1]
        hi_edge = betas[flips[0]]
        return "two_rays", (float(min(lo_edge, hi_edge)), float(max(lo_edge, hi_edge)))
    # rejected at both ends: bounded interval inside the window
    lo_edge = betas[flips[-1] + 1]
    hi_edge = betas[flips[0]]
    return "bounded", (float(min(lo_edge, hi_edge)), float(max(lo_edge, hi_edge)))


def weighted_average_bruteforce(grid_x, grid_y, px, py, pv, bandwidth, cutoff):
    """Plain-loop kernel smoother used to cross-check the heatmap."""
    out = np.full((len(grid_y), len(grid_x)), np.nan)
    for j, gy in enumerate(grid_y):
        for i, gx in enumerate(grid_x):
            wsum = vsum = 0.0
            for a, b, v in zip(px, py, pv):
                d2 = (gx - a) ** 2 + (gy - b) ** 2
                if d2 <= (cutoff * bandwidth) ** 2:
                    w = math.exp(-0.5 * d2 / bandwidth**2)
                    wsum += w
                    vsum += w * v
            if wsum > 0:
                out[j, i] = vsum / wsum
    return out
