"""Command-line entry point: ``sieve-hte {fit,simulate,link-curve}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from dataclasses import asdict

import numpy as np
from scipy.special import ndtr

from . import __version__
from ._parallel import child_rng, worker_count
from .artifact import FitArtifact
from .errors import (
    BootstrapDegeneracyError,
    HTEError,
    InputError,
    NonConvergenceError,
    SingularCovarianceError,
    SingularDesignError,
)
from .inference import bootstrap_inference, plug_in_report, wald_interval
from .nuisance import Family, FeatureMap, ObservationFrame
from .pipeline import PipelineConfig, fit_pipeline
from .simulation import (
    Scenario,
    generate_dataset,
    link_curve,
    parse_grid,
    parse_misspec,
    run_monte_carlo,
)
from .single_index import FitOptions

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_COLUMNS = 3
EXIT_DATA = 4
EXIT_SINGULAR = 5
EXIT_CONVERGENCE = 6


class UsageError(Exception):
    pass


class ColumnError(Exception):
    pass


def fmt(v):
    """Full-precision, '.'-separated float text; empty for missing values."""
    if v is None:
        return ""
    return repr(float(v))


def read_csv_columns(path, outcome, treatment, covariates):
    with open(path, newline="", encoding="utf-8") as fh:
        raw = fh.read()
    reader = csv.reader(raw.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration as exc:
        raise ColumnError(f"{path} is empty") from exc
    wanted = [outcome, treatment, *covariates]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ColumnError(f"columns not found in {path}: {', '.join(missing)}")
    pos = [header.index(c) for c in wanted]
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        vals = []
        for c, j in zip(wanted, pos):
            cell = rec[j].strip() if j < len(rec) else ""
            if cell == "":
                raise InputError(f"missing value for {c!r} on line {lineno}")
            try:
                vals.append(float(cell))
            except ValueError as exc:
                raise InputError(f"non-numeric {c!r} value {cell!r} on line {lineno}") from exc
        rows.append(vals)
    if not rows:
        raise InputError(f"{path} has no data rows")
    data = np.array(rows)
    digest = hashlib.sha256(raw.encode("utf-8")).hexdigest()
    return data[:, 0], data[:, 1], data[:, 2:], digest


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def coefficient_rows(names, gamma, se, level=0.95):
    """(name, estimate, sd, ci_lo, ci_hi, p_value) with two-sided Wald p-values."""
    rows = []
    for name, est, s in zip(names, gamma, se):
        lo, hi = wald_interval(est, s, level)
        if s > 0:
            pval = 2.0 * ndtr(-abs(est) / s)
        else:
            pval = 1.0 if est == 0 else 0.0
        rows.append((name, float(est), float(s), lo, hi, float(pval)))
    return rows


def _fit_options(args):
    k = "auto" if str(args.k) == "auto" else int(args.k)
    return FitOptions(k=k, n_starts=args.starts, seed=args.seed)


def cmd_fit(args):
    covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if not covariates:
        raise UsageError("--covariates needs at least one column")
    y, d, x, digest = read_csv_columns(args.data, args.outcome, args.treatment, covariates)
    if not np.all(np.isin(d, (0.0, 1.0))):
        bad = sorted(set(d[~np.isin(d, (0.0, 1.0))].tolist()))
        raise InputError(f"treatment column {args.treatment!r} is not binary: {bad[:5]}")
    frame = ObservationFrame(y, d, x)
    config = PipelineConfig(Family(args.family), FeatureMap(args.outcome_map))
    opts = _fit_options(args)
    res = fit_pipeline(frame, config, opts)
    if args.boot >= 2:
        report = bootstrap_inference(
            frame, res.fit, args.boot, args.level, opts, seed=args.seed,
            config=config, workers=worker_count(args.workers),
        )
        se = report.se_gamma_boot
    else:
        report = plug_in_report(res.fit, frame.x, args.level)
        se = report.se_gamma_plugin
    provenance = {
        "seed": args.seed,
        "options": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(opts).items()},
        "config": {"family": config.family.value, "outcome_map": config.outcome_map.value,
                   "clip": list(config.clip)},
        "bootstrap": args.boot,
        "input_sha256": digest,
        "outcome": args.outcome,
        "treatment": args.treatment,
        "version": __version__,
    }
    artifact = FitArtifact.build(res, report, covariates, provenance)
    artifact.write(args.out)
    rows = coefficient_rows(covariates, res.fit.gamma, se, args.level)
    if args.table:
        write_csv(args.table, ["name", "estimate", "sd", "ci_lo", "ci_hi", "p_value"],
                  [(r[0], *map(fmt, r[1:])) for r in rows])
    print(f"n={frame.n} p={frame.p} k={res.fit.k} sigma2={res.fit.sigma2:.4f} "
          f"converged={res.fit.converged}")
    print(f"{'Variable':<16}{'Estimator':>12}{'SD':>10}{'p_value':>10}")
    for name, est, s, _, _, pval in rows:
        print(f"{name:<16}{est:>12.4f}{s:>10.4f}{pval:>10.4f}")
    return EXIT_OK


def cmd_simulate(args):
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    if args.boot == 1:
        raise UsageError("--boot must be 0 or at least 2")
    try:
        misspec = parse_misspec(args.misspec)
        scenario = Scenario(args.link, args.cov, args.n, args.prop, misspec=misspec, seed=args.seed)
    except InputError as exc:
        raise UsageError(str(exc)) from exc
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    opts = _fit_options(args)
    if args.emit_data:
        data = generate_dataset(scenario, child_rng(args.seed, 0, 0))
        f = data.frame
        header = ["y", "d"] + [f"x{j + 1}" for j in range(f.p)]
        write_csv(args.emit_data, header,
                  [[fmt(f.y[i]), fmt(f.d[i]), *map(fmt, f.x[i])] for i in range(f.n)])
    summary = run_monte_carlo(
        scenario, args.reps, opts, boot_b=args.boot,
        parallelism=args.workers, methods=methods,
    )
    rows = summary.rows()
    header = list(rows[0])
    write_csv(args.out, header, [[r[h] if h == "component" else fmt(r[h]) for h in header]
                                 for r in rows])
    print(f"reps={summary.reps} failures={summary.failures}")
    for r in rows:
        print(f"{r['component']:<8} bias={r['bias']:+.4f} sd={r['sd']:.4f} "
              f"ese={r['ese']:.4f} ci={r['ci_cover']:.3f}")
    return EXIT_OK


def cmd_link_curve(args):
    try:
        grid = parse_grid(args.grid)
    except InputError as exc:
        raise UsageError(str(exc)) from exc
    artifact = FitArtifact.read(args.artifact)
    curve = link_curve(artifact.single_index_fit(), artifact.coeff_cov, grid, args.level)
    write_csv(args.out, ["u", "g_hat", "lo", "hi"],
              [[fmt(u), fmt(g), fmt(lo), fmt(hi)] for u, g, lo, hi in curve.rows()])
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sieve-hte",
        description="Doubly robust single-index estimation of heterogeneous treatment effects.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required):
        p.add_argument("--k", default="6", help="truncation parameter or 'auto' (default 6)")
        p.add_argument("--starts", type=int, default=5, help="multi-start count (default 5)")
        p.add_argument("--boot", type=int, default=100, help="bootstrap resamples (default 100)")
        p.add_argument("--seed", type=int, required=seed_required, default=0)
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (capped by HTE_THREADS)")

    p = sub.add_parser("fit", help="fit the model on a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--covariates", required=True, help="comma-separated column names")
    p.add_argument("--family", choices=[f.value for f in Family], default="logistic")
    p.add_argument("--outcome-map", choices=[f.value for f in FeatureMap], default="linear")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True, help="artifact JSON path")
    p.add_argument("--table", help="coefficient table CSV path")
    common(p, seed_required=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--link", choices=["linear", "cubic"], default="linear")
    p.add_argument("--cov", choices=["normal", "uniform"], default="normal")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--prop", type=float, default=0.5)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--misspec", default="TTT", help="ps/outcome/index flags, e.g. TFT")
    p.add_argument("--methods", default="sim", help="comma list from sim,t_rf,x_rf")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--emit-data", help="also write replicate 0's dataset as CSV")
    common(p, seed_required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("link-curve", help="tabulate the estimated link with its band")
    p.add_argument("--artifact", required=True)
    p.add_argument("--grid", default="-3:3:0.05", help="lo:hi:step")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_link_curve)
    return parser


def _glue_negative_grid(argv):
    # argparse reads "--grid -1:1:1" as two options; accept it anyway
    out = []
    it = iter(argv)
    for a in it:
        if a == "--grid":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--grid={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(_glue_negative_grid(sys.argv[1:] if argv is None else argv))
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sieve-hte: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ColumnError as exc:
        print(f"sieve-hte: column error: {exc}", file=sys.stderr)
        return EXIT_COLUMNS
    except InputError as exc:
        print(f"sieve-hte: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularDesignError, SingularCovarianceError) as exc:
        print(f"sieve-hte: singular design: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (NonConvergenceError, BootstrapDegeneracyError) as exc:
        print(f"sieve-hte: estimation failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (HTEError, OSError, ValueError) as exc:
        print(f"sieve-hte: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
