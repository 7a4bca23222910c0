"""Command-line interface: ``bicens {fit,simulate,montecarlo,basis}``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the long flag names; flags given on the command line win.

Exit status: 0 on success, 1 when a fit did not converge (artifacts are still
written) or every Monte-Carlo replication failed, 2 on invalid input.
"""

import argparse
import csv
import logging
import os
import sys
import warnings

import numpy as np

from bicens.errors import BicensError, InvalidArgumentError
from bicens.ggp_optimizer import FitOptions, fit
from bicens.io import (
    ParseError,
    data_line_numbers,
    fmt,
    read_config,
    read_dataset,
    write_dataset,
    write_result,
)
from bicens.sieve_model import SieveSpec, cdf_grid
from bicens.simulation import (
    SimConfig,
    aggregate,
    generate_dataset,
    knot_count,
    replication_rng,
    summary_text,
    write_report,
    run_replications,
)
from bicens.spline_basis import (
    KnotVector,
    bspline_basis,
    build_knots,
    ispline_basis,
    mspline_basis,
)

log = logging.getLogger("bicens")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INVALID = 0, 1, 2


def _floats(n):
    def parse(text):
        try:
            vals = [float(v) for v in str(text).split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
        return vals

    return parse


def _add_common(p):
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bicens",
        description="Tensor I-spline sieve MLE for bivariate current-status data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    p = parser.subcommands["fit"] = sub.add_parser("fit", help="fit a dataset CSV")
    _add_common(p)
    p.add_argument("--data", required=True, help="CSV with header c1,c2,delta1,delta2")
    p.add_argument("--domain", type=_floats(4), default=[0.0, 5.0, 0.0, 5.0],
                   help="L1,U1,L2,U2 (default 0,5,0,5)")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--knots-m", type=int, default=None,
                   help="interior knots per axis (default round(n^(1/3)) - 1)")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--grid", type=int, default=51, help="grid points per axis in grid.csv")
    p.add_argument("--out", required=True, help="output directory")

    p = parser.subcommands["simulate"] = sub.add_parser("simulate", help="simulate a Clayton-copula dataset")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--censor-lo", type=float, default=0.0201)
    p.add_argument("--censor-hi", type=float, default=4.7698)
    p.add_argument("--out", required=True, help="dataset CSV path")

    p = parser.subcommands["montecarlo"] = sub.add_parser("montecarlo", help="Monte-Carlo bias/RMSE study")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--knots-m", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: BICENS_THREADS or CPU count)")
    p.add_argument("--out", required=True, help="output directory")

    p = parser.subcommands["basis"] = sub.add_parser("basis", help="tabulate M-, I- and B-spline bases")
    _add_common(p)
    p.add_argument("--knots", type=_floats(None), default=[], help="interior knots, comma separated")
    p.add_argument("--domain", type=_floats(2), default=[0.0, 5.0], help="L,U (default 0,5)")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--out", required=True, help="CSV path")
    return parser


def parse_args(argv=None):
    """Parse ``argv``, filling flags not given on the command line from ``--config``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in parser.subcommands), None)
    if known.config and command:
        sub = parser.subcommands[command]
        try:
            cfg = read_config(known.config)
        except (OSError, ParseError) as exc:
            parser.error(f"cannot read config: {exc}")
        by_dest = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            action = by_dest.get(key)
            if action is None or key in ("config", "help", "verbose"):
                parser.error(f"unknown config key {key!r}")
            conv = action.type or str
            try:
                defaults[key] = conv(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"config key {key!r}: {exc}")
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _grid_axis(lo, hi, k):
    return np.linspace(lo, hi, max(int(k), 2))


def cmd_fit(args):
    try:
        data = read_dataset(args.data)
    except ParseError as exc:
        log.error("%s: %s", args.data, exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("cannot read %s: %s", args.data, exc)
        return EXIT_INVALID

    L1, U1, L2, U2 = args.domain
    bad = data.outside(args.domain)
    if bad.size:
        line = data_line_numbers(args.data)[bad[0]]
        log.error("%s: line %d: observation outside domain %s", args.data, line, args.domain)
        return EXIT_INVALID
    m = args.knots_m if args.knots_m is not None else knot_count(len(data))
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            spec = SieveSpec(
                build_knots(data.c1, m, args.order, L1, U1),
                build_knots(data.c2, m, args.order, L2, U2),
            )
            result = fit(spec, data, FitOptions(epsilon=args.eps, max_iter=args.max_iter))
        for w in caught:
            log.warning("%s", w.message)
    except BicensError as exc:
        log.error("fit failed: %s", exc)
        return EXIT_INVALID

    os.makedirs(args.out, exist_ok=True)
    write_result(os.path.join(args.out, "result.txt"), spec, result)
    s_axis = _grid_axis(L1, U1, args.grid)
    t_axis = _grid_axis(L2, U2, args.grid)
    F, F1, F2 = cdf_grid(spec, result.theta_hat, s_axis, t_axis)
    with open(os.path.join(args.out, "grid.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "t", "F", "F1", "F2"])
        for i, s in enumerate(s_axis):
            for j, t in enumerate(t_axis):
                w.writerow([fmt(s), fmt(t), fmt(F[i, j]), fmt(F1[i]), fmt(F2[j])])

    print(f"loglik = {fmt(result.loglik)}")
    print(f"iterations = {result.iterations}")
    print(f"converged = {str(result.converged).lower()}")
    if not result.converged:
        log.error("optimizer did not converge; results written but flagged")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _sim_config(args, **extra):
    return SimConfig(
        n=args.n,
        tau=args.tau,
        seed=args.seed,
        **extra,
    )


def cmd_simulate(args):
    try:
        cfg = _sim_config(
            args, marginal_rate=args.rate, censor_lo=args.censor_lo, censor_hi=args.censor_hi
        )
    except InvalidArgumentError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    data, _ = generate_dataset(cfg, replication_rng(cfg.seed, 0))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_dataset(data, args.out)
    sidecar = os.path.splitext(args.out)[0] + ".truth.txt"
    with open(sidecar, "w") as fh:
        fh.write(
            f"n = {cfg.n}\n"
            f"tau = {fmt(cfg.tau)}\n"
            f"alpha = {fmt(cfg.alpha)}\n"
            f"rate = {fmt(cfg.marginal_rate)}\n"
            f"censor_lo = {fmt(cfg.censor_lo)}\n"
            f"censor_hi = {fmt(cfg.censor_hi)}\n"
            f"seed = {cfg.seed}\n"
        )
    print(f"wrote {args.out} and {sidecar}")
    return EXIT_OK


def cmd_montecarlo(args):
    try:
        cfg = _sim_config(
            args,
            reps=args.reps,
            order=args.order,
            m=args.knots_m,
            epsilon=args.eps,
            max_iter=args.max_iter,
            workers=args.workers,
        )
    except InvalidArgumentError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    results = run_replications(cfg, list(range(cfg.reps)))
    os.makedirs(args.out, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = aggregate(cfg, results)
    except BicensError as exc:
        log.error("%s", exc)
        with open(os.path.join(args.out, "summary.txt"), "w") as fh:
            fh.write(f"n = {cfg.n}\nreps = {cfg.reps}\nfailures = {len(results)}\n")
        return EXIT_NOT_CONVERGED
    write_report(report, args.out)
    sys.stdout.write(summary_text(report))
    return EXIT_OK


def cmd_basis(args):
    L, U = args.domain
    try:
        knots = KnotVector(args.order, sorted(args.knots), L, U)
    except InvalidArgumentError as exc:
        log.error("invalid knots: %s", exc)
        return EXIT_INVALID
    s = _grid_axis(L, U, args.grid)
    M = mspline_basis(knots, s)
    I = ispline_basis(knots, s)
    N = bspline_basis(knots, s)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "i", "M", "I", "N"])
        for k, x in enumerate(s):
            for i in range(knots.n_basis):
                w.writerow([fmt(x), i, fmt(M[k, i]), fmt(I[k, i]), fmt(N[k, i])])
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "basis": cmd_basis,
}


def main(argv=None):
    args = parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="bicens: %(levelname)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
