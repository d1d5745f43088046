"""Finite-sample Monte Carlo engine for size and power comparisons.

Data generating process (one replication of one cell):

    z_i ~ N(0, 1) i.i.d.
    (u_i, v_i) bivariate standard normal with correlation rho
    x = z * pi + v,   pi = f0 / sqrt(n)
    y = x * beta + u

The scaling pi = f0 / sqrt(n) with unit residual variances gives the
instrument-strength parametrization E[F] = f0^2 + 1.  Every replication
is drawn from its own counter-based stream keyed by the seed, the cell
parameters and the replication index, so any subset of the work can be
reproduced bit-identically and results never depend on worker count.

For each null value beta0 = beta - deviation the engine records
rejections of three tests on common random numbers:

    AR     chi-square(1) cutoff on the Anderson-Rubin statistic
    tF     t(beta0)^2 against the squared F-indexed critical value
    t      t(beta0)^2 against the fixed conventional cutoff
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ar import chi2_critical
from .model import ModelData, residual_dof
from .rng import stream
from .tftest import CVTable, cv_values, _critical_z

__all__ = [
    "PROCEDURES",
    "DGPConfig",
    "PowerCurve",
    "draw_dataset",
    "run_power_study",
    "run_power_grid",
    "power_report",
    "parse_power_report",
    "PAPER_DEVIATIONS",
    "PAPER_F0_GRID",
    "PAPER_RHO_GRID",
]

PROCEDURES = ("AR", "tF", "t")

# canonical experiment grids for the full comparison
PAPER_F0_GRID = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)
PAPER_RHO_GRID = tuple(np.round(np.arange(-9, 10, 2) * 0.1, 1))
PAPER_DEVIATIONS = tuple(np.round(np.arange(-16, 16) * 0.1, 1))


def _float_key(x: float) -> int:
    return int(np.float64(x).view(np.uint64))


@dataclass(frozen=True)
class DGPConfig:
    """Parameters of one simulation cell."""

    f0: float
    rho: float
    n: int = 1000
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError(f"n must be at least 10, got {self.n}")
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be below 1, got {self.rho}")

    @property
    def pi(self) -> float:
        """First-stage coefficient implied by the strength parameter."""
        return self.f0 / math.sqrt(self.n)

    def cell_key(self) -> tuple:
        return (_float_key(self.f0), _float_key(self.rho), self.n, _float_key(self.beta))


def draw_dataset(config: DGPConfig, rep_index: int) -> ModelData:
    """One replication; a pure function of (config, rep_index)."""
    rng = stream(config.seed, *config.cell_key(), rep_index)
    draws = rng.standard_normal((3, config.n))
    z, u, w = draws
    v = config.rho * u + math.sqrt(1.0 - config.rho**2) * w
    x = z * config.pi + v
    y = x * config.beta + u
    return ModelData(y=y, x=x, z=z)


@dataclass(frozen=True)
class PowerCurve:
    """Rejection rates over a deviation grid for one cell."""

    f0: float
    rho: float
    n: int
    beta: float
    deviations: np.ndarray
    reps: int
    rates: dict = field(default_factory=dict)  # procedure -> array over deviations

    def mc_se(self, procedure: str) -> np.ndarray:
        r = self.rates[procedure]
        return np.sqrt(r * (1.0 - r) / self.reps)

    def rate_at(self, procedure: str, deviation: float) -> float:
        idx = int(np.argmin(np.abs(self.deviations - deviation)))
        if abs(self.deviations[idx] - deviation) > 1e-9:
            raise KeyError(f"deviation {deviation} not on the grid")
        return float(self.rates[procedure][idx])


def _moment_rows(config: DGPConfig, reps: int) -> np.ndarray:
    """Per-replication cross moments (zz, zx, zy, xx, xy, yy)."""
    out = np.empty((reps, 6))
    for r in range(reps):
        d = draw_dataset(config, r)
        z, x, y = d.z, d.x, d.y
        out[r, 0] = z @ z
        out[r, 1] = z @ x
        out[r, 2] = z @ y
        out[r, 3] = x @ x
        out[r, 4] = x @ y
        out[r, 5] = y @ y
    return out


def rejection_indicators(
    config: DGPConfig, deviations, reps: int, cv_table: CVTable
) -> dict:
    """Boolean rejection matrices, shape (len(deviations), reps).

    All three procedures are evaluated on the same draws, so per
    replication a tF rejection implies a conventional-t rejection at
    the same level (the F-indexed critical value never falls below the
    fixed one).
    """
    deviations = np.asarray(deviations, dtype=np.float64)
    mom = _moment_rows(config, reps)
    zz, zx, zy, xx, xy, yy = (mom[:, i] for i in range(6))
    m = residual_dof(config.n, 0)
    alpha = cv_table.level

    with np.errstate(divide="ignore", invalid="ignore"):
        beta_hat = zy / zx
        ee = np.maximum(yy - 2.0 * beta_hat * xy + beta_hat**2 * xx, 0.0)
        se_sq = (ee / m) * zz / zx**2
        vv = np.maximum(xx - zx**2 / zz, 0.0)
        big_f = np.where(vv > 0, zx**2 / zz / (vv / m), np.inf)

        cv_sq = cv_values(cv_table, big_f) ** 2
        t_cut_sq = _critical_z(alpha) ** 2
        ar_cut = chi2_critical(alpha)

        beta0 = config.beta - deviations[:, None]  # (D, 1) against (reps,)
        t_sq = (beta_hat - beta0) ** 2 / se_sq
        ze0 = zy - beta0 * zx
        e0e0 = yy - 2.0 * beta0 * xy + beta0**2 * xx
        ar = ze0**2 * m / (zz * e0e0)

    return {
        "AR": ar > ar_cut,
        "tF": t_sq > cv_sq,
        "t": t_sq > t_cut_sq,
    }


def run_power_study(
    config: DGPConfig, deviation_grid, reps: int, cv_table: CVTable
) -> PowerCurve:
    """Rejection-rate curves for one cell on common random numbers."""
    if reps < 1000:
        raise ValueError(f"reps must be at least 1000, got {reps}")
    deviations = np.asarray(deviation_grid, dtype=np.float64)
    ind = rejection_indicators(config, deviations, reps, cv_table)
    rates = {proc: ind[proc].mean(axis=1) for proc in PROCEDURES}
    return PowerCurve(
        f0=config.f0,
        rho=config.rho,
        n=config.n,
        beta=config.beta,
        deviations=deviations,
        reps=reps,
        rates=rates,
    )


def _run_cell(args):
    config, deviations, reps, cv_table = args
    return run_power_study(config, deviations, reps, cv_table)


def run_power_grid(
    f0_values,
    rho_values,
    deviations,
    reps: int,
    cv_table: CVTable,
    n: int = 1000,
    beta: float = 1.0,
    seed: int = 0,
    workers: int | None = None,
) -> list:
    """Power curves for every (f0, rho) cell, optionally in parallel.

    Each cell derives its streams from (seed, cell parameters), so the
    result is identical for any worker count.
    """
    configs = [
        DGPConfig(f0=float(f0), rho=float(rho), n=n, beta=beta, seed=seed)
        for f0 in f0_values
        for rho in rho_values
    ]
    jobs = [(c, deviations, reps, cv_table) for c in configs]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]


def power_report(curves) -> str:
    """Long-format text export: one row per (cell, deviation, procedure).

    Floats are written in shortest round-trip representation, so parsing
    the export back reproduces the numbers bit-exactly.
    """
    lines = ["f0,rho,deviation,procedure,rate,mc_se"]
    first = curves[0].deviations
    for c in curves:
        if c.deviations.shape != first.shape or np.any(c.deviations != first):
            raise ValueError("all curves must share one deviation grid")
    for c in curves:
        for k, dev in enumerate(c.deviations):
            for proc in PROCEDURES:
                rate = float(c.rates[proc][k])
                mc_se = float(c.mc_se(proc)[k])
                lines.append(
                    f"{float(c.f0)!r},{float(c.rho)!r},{float(dev)!r},"
                    f"{proc},{rate!r},{mc_se!r}"
                )
    return "\n".join(lines) + "\n"


def parse_power_report(text: str) -> list:
    """Rows of the long-format export as dicts with float fields."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    expected = ["f0", "rho", "deviation", "procedure", "rate", "mc_se"]
    if header != expected:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for ln in lines[1:]:
        f0, rho, dev, proc, rate, mc_se = ln.split(",")
        rows.append(
            {
                "f0": float(f0),
                "rho": float(rho),
                "deviation": float(dev),
                "procedure": proc,
                "rate": float(rate),
                "mc_se": float(mc_se),
            }
        )
    return rows
