"""Command-line interface: ``covgrow fit|predict|simulate|gcv-scan``.

Exit codes: 0 success, 2 invalid input or configuration, 3 singular or
unidentifiable system, 4 smoothing-parameter selection failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, CovgrowError, DataError, DomainError, IdentifiabilityError, SelectionError
from .io import (fmt, load_config, read_csv_columns, read_dataset, write_coef, write_csv, write_curves,
                 write_residuals, write_scan, write_summary)
from .pipeline import build_system, fit_dataset, transform_dataset
from .selection import SelectionConfig, gcv_scan, rhat_grid_minimizer, sigma2_hat
from .solver import plugin_se

EXIT_INPUT, EXIT_SINGULAR, EXIT_SELECTION = 2, 3, 4


def _load(args):
    config = load_config(args.config)
    cov_file = config.model.covariance_file
    if cov_file:
        cov_file = str((config.base_dir / cov_file) if not Path(cov_file).is_absolute() else cov_file)
    data = read_dataset(args.data, config.model.time_dependent, cov_file)
    return config, data


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_fit(args):
    config, data = _load(args)
    system, fit = fit_dataset(data, config)
    out = _out_dir(args.out)
    write_coef(out / "coef.csv", system, fit)
    write_summary(out / "summary.txt", system, fit)
    write_curves(out / "curves.csv", system, fit)
    write_residuals(out / "residuals.csv", system, fit)
    lam = " ".join(fmt(v) for v in fit.lambdas)
    print(f"method={fit.method} converged={str(fit.converged).lower()} lambdas={lam} "
          f"trace_A={fit.trace_A:.6g} gcv={fit.gcv:.6g} sigma2={fit.sigma2:.6g}")
    return 0


def _prediction_points(arg, system, data):
    """List of ``(id, index, times, covariates)`` from ``--grid``."""
    a, b = system.basis.domain
    if arg is None or arg.strip().isdigit():
        n = int(arg) if arg else 200
        grid = np.linspace(a, b, n)
        return [(pid, i, grid, system.covariates[i]) for i, pid in enumerate(system.ids)
                if np.ndim(system.covariates[i]) < 2]
    cols = read_csv_columns(arg)
    if "id" not in cols or "t" not in cols:
        raise DataError(f"{arg}: prediction points need id and t columns")
    ids = [str(v) for v in cols["id"]]
    t = np.asarray(cols["t"], dtype=float)
    names = list(data.covariate_names)
    have = [n for n in names if n in cols]
    out = []
    for pid in dict.fromkeys(ids):
        rows = np.array([k for k, v in enumerate(ids) if v == pid])
        idx = system.ids.index(pid) if pid in system.ids else None
        if have and len(have) == len(names):
            u = np.column_stack([np.asarray(cols[n], dtype=float)[rows] for n in names])
            u = u[0] if np.all(u == u[0]) and np.ndim(system.covariates[0]) < 2 else u
        elif idx is not None:
            u = system.covariates[idx]
        else:
            raise DataError(f"{arg}: new individual {pid!r} needs covariate columns {names}")
        out.append((pid, idx, t[rows], u))
    return out


def cmd_predict(args):
    config, data = _load(args)
    system, fit = fit_dataset(data, config)
    out = _out_dir(args.out)
    rows = []
    for pid, idx, times, u in _prediction_points(args.grid, system, data):
        D = system.design_rows(times, u, idx)
        mean = D @ fit.theta
        se = plugin_se(fit, system, D)
        rows += [[pid, fmt(t), fmt(m), fmt(s)] for t, m, s in zip(times, mean, se)]
    write_csv(out / "predictions.csv", ["id", "t", "fit", "se"], rows)
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return 0


def cmd_simulate(args):
    from .simulate import simulate, write_simulation

    config = load_config(args.config)
    dataset, truth, sigma = simulate(config, seed=args.seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    truth_path = write_simulation(out, dataset, truth, sigma)
    print(f"wrote {out} and {truth_path}")
    return 0


def _grid_override(selection, spec):
    if not spec:
        return selection
    try:
        lo, hi, ppd = spec.split(":")
        kw = dict(vars(selection))
        kw.update(lambda_min=float(lo), lambda_max=float(hi), points_per_decade=int(ppd))
        return SelectionConfig(**kw)
    except ValueError:
        raise ConfigError(f"--grid must be lambda_min:lambda_max:points_per_decade, got {spec!r}") from None


def cmd_gcv_scan(args):
    config, data = _load(args)
    selection = _grid_override(config.selection, args.grid)
    system = build_system(transform_dataset(data, config.model.response_transform), config.model)
    sigma2 = selection.sigma2
    if sigma2 is None:
        try:
            sigma2 = sigma2_hat(system)
        except (SelectionError, IdentifiabilityError) as exc:
            print(f"note: Rhat column omitted ({exc})", file=sys.stderr)
            sigma2 = None
    scan = gcv_scan(system, selection, sigma2)
    out = _out_dir(args.out)
    write_scan(out / "scan.csv", scan, system.L)
    best = " ".join(fmt(v) for v in scan.lambdas[scan.best])
    msg = f"gcv minimizer: {best} (V={scan.gcv[scan.best]:.6g})"
    if scan.rhat is not None:
        r = rhat_grid_minimizer(scan)
        msg += f"; Rhat minimizer: {' '.join(fmt(v) for v in scan.lambdas[r])}"
    print(msg)
    return 0


def describe_direction(direction, labels=None, top=4):
    d = np.asarray(direction)
    idx = np.argsort(-np.abs(d), kind="stable")[:top]
    return ", ".join(f"{labels[i] if labels and i < len(labels) else i}: {d[i]:+.3g}" for i in idx)


def build_parser():
    p = argparse.ArgumentParser(prog="covgrow", description="Smoothing-spline growth curves with covariates.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("fit", "fit a model and write coef/summary/curves/residuals"),
                           ("predict", "fit, then predict at grid points"),
                           ("gcv-scan", "tabulate GCV and estimated risk over the smoothing grid")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--data", required=True, help="dataset CSV (id,t,y[,sigma],covariates...)")
        sp.add_argument("--config", required=True, help="model configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        if name == "predict":
            sp.add_argument("--grid", help="points CSV (id,t[,covariates]) or number of uniform points")
        if name == "gcv-scan":
            sp.add_argument("--grid", help="lambda_min:lambda_max:points_per_decade")
    sp = sub.add_parser("simulate", help="generate a synthetic dataset and its truth file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True, help="dataset CSV path; truth goes to <stem>.truth.json")
    sp.add_argument("--seed", type=int, default=None)
    return p


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "gcv-scan": cmd_gcv_scan}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except IdentifiabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.direction is not None:
            print(f"null-space direction (largest components): {describe_direction(exc.direction, exc.labels)}",
                  file=sys.stderr)
        return EXIT_SINGULAR
    except SelectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SELECTION
    except (ConfigError, DataError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CovgrowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
