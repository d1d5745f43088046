"""Command-line interface.

Subcommands:

    simulate    run the finite-sample power study over a (f0, rho) grid
    analyze     classify a CSV of reported specifications and export the
                agreement, length-distribution and heatmap reports
    infer       AR and tF inference for a single specification
    verify-cv   Monte Carlo worst-case size check of a critical-value table

Exit codes: 0 success, 1 runtime failure, 2 usage or schema error,
3 verification failure.  Every file-producing run writes a manifest
(parameters, seed, table digests, output digests, duration) next to its
outputs, even when it fails partway.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .ar import ar_confidence_set, ar_statistic_summary, chi2_critical
from .empirics import (
    GridSpec,
    aggregate_figure1,
    classify_all,
    heatmap_grid,
    ingest,
    loglength_distribution,
)
from .errors import SchemaError, WeakIVError
from .model import ModelData, SummaryStats, estimate_2sls
from .rng import ALGORITHM
from .simulate import (
    PAPER_DEVIATIONS,
    PAPER_F0_GRID,
    PAPER_RHO_GRID,
    power_report,
    run_power_grid,
)
from .tftest import builtin_table_path, cv_lookup, load_cv_table, tf_confidence_interval, verify_size
from . import svg

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3


class UsageError(WeakIVError):
    pass


class VerificationFailure(WeakIVError):
    pass


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class Manifest:
    """Collects run metadata; written even on partial failure."""

    def __init__(self, subcommand, params, out_dir):
        self.data = {
            "subcommand": subcommand,
            "parameters": params,
            "package_version": __version__,
            "rng": ALGORITHM,
            "cv_tables": {},
            "outputs": {},
            "status": "running",
            "error": None,
        }
        self.out_dir = out_dir
        self.t0 = time.time()

    def add_table(self, label, table):
        self.data["cv_tables"][label] = {"source": table.source, "sha256": table.digest}

    def add_output(self, path):
        self.data["outputs"][os.path.basename(path)] = _sha256(path)

    def finish(self, status, error=None):
        self.data["status"] = status
        self.data["error"] = error
        self.data["duration_seconds"] = round(time.time() - self.t0, 3)
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write(out_dir, name, text, manifest):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    manifest.add_output(path)
    return path


def _parse_floats(text):
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}")


def _parse_grid(text):
    """'start:stop:step' (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid must be start:stop:step, got {text!r}")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"non-numeric grid bounds in {text!r}")
        if step <= 0 or stop < start:
            raise UsageError(f"bad grid {text!r}")
        n = int(round((stop - start) / step))
        return list(np.round(start + step * np.arange(n + 1), 10))
    return _parse_floats(text)


def _load_table(path, alpha):
    try:
        return load_cv_table(path, level=alpha)
    except FileNotFoundError:
        raise UsageError(f"critical-value table not found: {path}")


# ----------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    if args.reps < 1000:
        raise UsageError(f"--reps must be at least 1000, got {args.reps}")
    if not math.isclose(args.alpha, 0.05) and not math.isclose(args.alpha, 0.01):
        raise UsageError("--alpha must be 0.05 or 0.01")
    f0_values = _parse_floats(args.f0) if args.f0 else list(PAPER_F0_GRID)
    rho_values = _parse_floats(args.rho) if args.rho else list(PAPER_RHO_GRID)
    deviations = _parse_grid(args.dev_grid) if args.dev_grid else list(PAPER_DEVIATIONS)
    if any(abs(r) >= 1 for r in rho_values):
        raise UsageError("|rho| must be below 1")
    table_path = args.cv_table or builtin_table_path(args.alpha)

    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest("simulate", _params(args), args.out)
    try:
        table = _load_table(table_path, args.alpha)
        manifest.add_table(f"{args.alpha:g}", table)
        curves = run_power_grid(
            f0_values,
            rho_values,
            deviations,
            reps=args.reps,
            cv_table=table,
            n=args.n,
            beta=args.beta,
            seed=args.seed,
            workers=args.threads,
        )
        _write(args.out, "power_curves.csv", power_report(curves), manifest)
        if args.figures:
            for c in curves:
                name = f"power_f0_{c.f0:g}_rho_{c.rho:g}.svg".replace("-", "m")
                _write(args.out, name, svg.power_panel(c, args.alpha), manifest)
        manifest.finish("ok")
        print(f"wrote {len(manifest.data['outputs'])} files to {args.out}")
        return EXIT_OK
    except BaseException as exc:
        manifest.finish("error", error=str(exc))
        raise


# ------------------------------------------------------------------ analyze


def cmd_analyze(args) -> int:
    from .empirics import (
        REASON_RHO_UNRECOVERABLE,
        agreement_csv,
        exclusions_csv,
        heatmap_csv,
        loglength_csv,
    )

    os.makedirs(args.out_dir, exist_ok=True)
    manifest = Manifest("analyze", _params(args), args.out_dir)
    try:
        cv5 = _load_table(args.cv_table_5 or builtin_table_path(0.05), 0.05)
        cv1 = _load_table(args.cv_table_1 or builtin_table_path(0.01), 0.01)
        manifest.add_table("0.05", cv5)
        manifest.add_table("0.01", cv1)

        result = ingest(args.input)
        comparisons = classify_all(result.records, cv5, cv1)

        exclusion_rows = [
            (study, spec, "ingest", REASON_RHO_UNRECOVERABLE)
            for (_rowno, _reason, study, spec) in result.rejected
        ]
        for c in comparisons:
            if c.excluded:
                exclusion_rows.append(
                    (c.record.study_id, c.record.spec_id, "classify", c.exclusion_reason)
                )

        agreement = aggregate_figure1(comparisons)
        log5 = loglength_distribution(comparisons, 0.05)
        log1 = loglength_distribution(comparisons, 0.01)
        spec = GridSpec(bandwidth=args.bandwidth)
        heat5 = heatmap_grid(comparisons, 0.05, spec)
        heat1 = heatmap_grid(comparisons, 0.01, spec)

        _write(args.out_dir, "agreement_table.csv", agreement_csv(agreement), manifest)
        _write(args.out_dir, "loglength_5pct.csv", loglength_csv(log5), manifest)
        _write(args.out_dir, "loglength_1pct.csv", loglength_csv(log1), manifest)
        _write(args.out_dir, "heatmap_5pct.csv", heatmap_csv(heat5), manifest)
        _write(args.out_dir, "heatmap_1pct.csv", heatmap_csv(heat1), manifest)
        _write(args.out_dir, "exclusions.csv", exclusions_csv(exclusion_rows), manifest)
        if args.figures:
            _write(
                args.out_dir,
                "significance.svg",
                svg.significance_scatter(comparisons, cv5, cv1),
                manifest,
            )
            _write(args.out_dir, "loglength_5pct.svg", svg.loglength_histogram(log5), manifest)
            _write(args.out_dir, "loglength_1pct.svg", svg.loglength_histogram(log1), manifest)
            _write(args.out_dir, "heatmap_5pct.svg", svg.heatmap_figure(heat5), manifest)
            _write(args.out_dir, "heatmap_1pct.svg", svg.heatmap_figure(heat1), manifest)
        manifest.finish("ok")
        n_excl = len(exclusion_rows)
        print(
            f"analyzed {len(result.records) + len(result.rejected)} rows: "
            f"{len(comparisons)} classified, {n_excl} excluded; "
            f"outputs in {args.out_dir}"
        )
        return EXIT_OK
    except BaseException as exc:
        manifest.finish("error", error=str(exc))
        raise


# -------------------------------------------------------------------- infer


def _infer_stats(args):
    have_raw = args.data is not None
    have_summary = args.t is not None or args.beta is not None
    if have_raw == have_summary:
        raise UsageError("provide either --data, or summary statistics (--t/--beta ...)")
    if have_raw:
        rows = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
        with open(args.data, "r", encoding="utf-8") as fh:
            header = [h.strip().lower() for h in fh.readline().split(",")]
        if header[:3] != ["y", "x", "z"]:
            raise SchemaError(f"--data expects header y,x,z[,w...], got {header}")
        w = rows[:, 3:] if rows.shape[1] > 3 else None
        stats = estimate_2sls(ModelData(y=rows[:, 0], x=rows[:, 1], z=rows[:, 2], w=w))
        return stats.oriented(), True
    if args.f is None or args.rho is None:
        raise UsageError("summary input needs --f and --rho")
    if args.f < 0:
        raise UsageError("--f (first-stage F) must be nonnegative")
    if abs(args.rho) > 1:
        raise UsageError("|rho| must be at most 1")
    f_hat = math.sqrt(args.f)
    if args.beta is not None:
        if args.se is None or args.se <= 0:
            raise UsageError("--beta needs a positive --se")
        beta_hat, se = args.beta, args.se
    else:
        # t and F only: report in standard-error units (se = 1, beta = t)
        beta_hat, se = args.t, 1.0
    if args.t is not None and args.beta is not None:
        if not math.isclose(args.t, args.beta / args.se, rel_tol=1e-6):
            raise UsageError("--t conflicts with --beta/--se")
    return (
        SummaryStats(beta_hat=beta_hat, se=se, f_hat=f_hat, big_f=args.f, rho_hat=args.rho),
        args.beta is not None,
    )


def cmd_infer(args) -> int:
    stats, in_beta_units = _infer_stats(args)
    lines = [
        f"beta_hat = {stats.beta_hat:.6g}, se = {stats.se:.6g}, t = {stats.t:.6g}, "
        f"F = {stats.big_f:.6g}, rho_hat = {stats.rho_hat:.6g}"
    ]
    if not in_beta_units:
        lines.append("(no --beta/--se given: intervals are in standard-error units)")
    for alpha in (0.05, 0.01):
        table = _load_table(
            (args.cv_table_5 if math.isclose(alpha, 0.05) else args.cv_table_1)
            or builtin_table_path(alpha),
            alpha,
        )
        ar_stat = ar_statistic_summary(stats.t, stats.f_hat, stats.rho_hat)
        cut = chi2_critical(alpha)
        ar_set = ar_confidence_set(stats, level=1 - alpha)
        cv = cv_lookup(table, stats.big_f)
        tf_set = tf_confidence_interval(stats, table)
        lines.append(f"at the {alpha:g} level:")
        lines.append(
            f"  AR statistic = {ar_stat:.5g} vs chi2(1) cutoff {cut:.5g}: "
            f"{'reject' if ar_stat > cut else 'do not reject'} beta = 0"
        )
        lines.append(f"  AR confidence set ({ar_set.kind}): {ar_set}")
        cv_txt = "inf" if not math.isfinite(cv) else f"{cv:.5g}"
        lines.append(
            f"  tF critical value = {cv_txt}: "
            f"{'reject' if stats.t**2 > cv * cv else 'do not reject'} beta = 0"
        )
        lines.append(f"  tF interval ({tf_set.kind}): {tf_set}")
        if ar_set.is_bounded and tf_set.is_bounded:
            lines.append(
                f"  ln(length_tF / length_AR) = "
                f"{math.log(tf_set.length() / ar_set.length()):.5g}"
            )
        else:
            lines.append("  ln(length_tF / length_AR): undefined (unbounded set)")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- verify-cv


def cmd_verify_cv(args) -> int:
    if args.reps < 10_000:
        raise UsageError(f"--reps must be at least 10000, got {args.reps}")
    table = _load_table(args.cv_table or builtin_table_path(args.alpha), args.alpha)
    manifest = Manifest("verify-cv", _params(args), args.out) if args.out else None
    if manifest:
        os.makedirs(args.out, exist_ok=True)
        manifest.add_table(f"{args.alpha:g}", table)
    try:
        f0_grid = _parse_floats(args.f0_grid) if args.f0_grid else None
        rho_grid = _parse_floats(args.rho_grid) if args.rho_grid else None
        kwargs = {}
        if f0_grid:
            kwargs["f0_grid"] = f0_grid
        if rho_grid:
            kwargs["rho_grid"] = rho_grid
        report = verify_size(
            table, reps=args.reps, seed=args.seed, workers=args.threads, **kwargs
        )
        print(report.format())
        if manifest:
            rows = ["f0,rho,rate"]
            for i, f0 in enumerate(report.f0_grid):
                for j, rho in enumerate(report.rho_grid):
                    rows.append(f"{f0!r},{rho!r},{report.rates[i, j]!r}")
            _write(args.out, "size_report.csv", "\n".join(rows) + "\n", manifest)
            manifest.finish("ok" if report.passed else "verification failed")
        if not report.passed:
            return EXIT_VERIFY
        return EXIT_OK
    except BaseException as exc:
        if manifest:
            manifest.finish("error", error=str(exc))
        raise


# --------------------------------------------------------------------- main


def _params(args):
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="weakiv",
        description="Weak-instrument-robust inference for just-identified IV models.",
    )
    sub = p.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="finite-sample power study")
    sim.add_argument("--f0", help="comma list of strength values (default: canonical grid)")
    sim.add_argument("--rho", help="comma list of correlations (default: canonical grid)")
    sim.add_argument("--dev-grid", help="deviations as start:stop:step or comma list")
    sim.add_argument("--reps", type=int, default=10_000)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--beta", type=float, default=1.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--cv-table", help="path to the critical-value table")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--figures", action="store_true", help="emit SVG power panels")
    sim.add_argument("--threads", type=int, default=None, help="cap on parallel workers")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="replication pipeline over reported specifications")
    ana.add_argument("--input", required=True, help="CSV of specification records")
    ana.add_argument("--out-dir", required=True)
    ana.add_argument("--cv-table-5", help="5% critical-value table path")
    ana.add_argument("--cv-table-1", help="1% critical-value table path")
    ana.add_argument("--bandwidth", type=float, default=0.08)
    ana.add_argument("--figures", action="store_true", help="emit SVG figures")
    ana.set_defaults(func=cmd_analyze)

    inf = sub.add_parser("infer", help="single-specification AR and tF inference")
    inf.add_argument("--t", type=float, help="t-ratio at beta0 = 0")
    inf.add_argument("--f", type=float, help="first-stage F statistic")
    inf.add_argument("--rho", type=float, help="residual correlation")
    inf.add_argument("--beta", type=float, help="point estimate")
    inf.add_argument("--se", type=float, help="standard error")
    inf.add_argument("--data", help="CSV with header y,x,z[,w...] for the raw pathway")
    inf.add_argument("--cv-table-5")
    inf.add_argument("--cv-table-1")
    inf.set_defaults(func=cmd_infer)

    ver = sub.add_parser("verify-cv", help="Monte Carlo size check of a table")
    ver.add_argument("--cv-table", help="table path (default: shipped table)")
    ver.add_argument("--alpha", type=float, required=True)
    ver.add_argument("--reps", type=int, default=100_000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--f0-grid", help="comma list overriding the default grid")
    ver.add_argument("--rho-grid", help="comma list overriding the default grid")
    ver.add_argument("--threads", type=int, default=None)
    ver.add_argument("--out", help="optional output directory for the cell report")
    ver.set_defaults(func=cmd_verify_cv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (UsageError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WeakIVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failures keep the exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
