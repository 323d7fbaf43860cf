"""Command-line interface: ``caprec <subcommand> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 degenerate estimate
or aborted benchmark. Errors are reported as one line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .bench import BenchmarkAborted, ConfigError, emit_report, parse_config, run_benchmark
from .crossfit import read_idfold, read_nuisances
from .dataset import load_dataset
from .estimator import popsize, popsize_cond, read_results
from .learners import DEFAULT_SL_LIBRARY, LearnerKind
from .plotting import plot_ci
from .simulator import DgpSpec, calibrate_ep, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class Degenerate(Exception):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _default_seed() -> int:
    raw = os.environ.get("CAPREC_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CAPREC_SEED must be an integer, got {raw!r}") from None


def _estimation_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with K list columns then covariates")
    p.add_argument("--k-lists", dest="K", type=int, default=2, help="number of lists K")
    p.add_argument("--list-columns", type=_csv_list, default=None,
                   help="names of the list columns (default: first K columns)")
    p.add_argument("--j", type=int, default=None, help="first list of the pair (1-based)")
    p.add_argument("--k", type=int, default=None, help="second list of the pair (1-based)")
    p.add_argument("--funcname", type=_csv_list, default=["rangerlogit"],
                   help="comma-separated learners: logit, mlogit, gam, ranger, rangerlogit, sl")
    p.add_argument("--sl-lib", type=_csv_list, default=list(DEFAULT_SL_LIBRARY),
                   help="library for the sl learner")
    p.add_argument("--nfolds", type=int, default=5)
    p.add_argument("--margin", type=float, default=0.005)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--plugin", action="store_true", help="also report plug-in estimates")
    p.add_argument("--tmle", action="store_true", help="reserved; not implemented")
    p.add_argument("--seed", type=int, default=None, help="random seed (env CAPREC_SEED)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--true-n", type=float, default=None, help="reference line in ci.svg")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caprec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("popsize", help="estimate capture probability and population size")
    _estimation_args(p)
    p.add_argument("--getnuis", default=None, help="CSV of precomputed nuisance estimates")
    p.add_argument("--idfold", default=None, help="CSV of fold labels")

    p = sub.add_parser("popsize-cond", help="estimate within levels of a discrete covariate")
    _estimation_args(p)
    p.add_argument("--condvar", required=True)

    p = sub.add_parser("simulate", help="simulate capture data with known truth")
    p.add_argument("--n", type=int, default=5000, help="true population size")
    p.add_argument("--k-lists", dest="K", type=int, default=2)
    p.add_argument("--l", type=int, default=1, help="number of continuous covariates")
    p.add_argument("--ep", type=float, default=0.0, help="intercept shift")
    p.add_argument("--target-psi", type=float, default=None,
                   help="calibrate ep to this capture probability (overrides --ep)")
    p.add_argument("--categorical", action="store_true", help="add a 3-level covariate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".")

    p = sub.add_parser("plotci", help="forest plot of confidence intervals")
    p.add_argument("results", help="results CSV written by popsize")
    p.add_argument("--out", default="ci.svg", help="output SVG path")
    p.add_argument("--true-n", type=float, default=None)

    p = sub.add_parser("benchmark", help="Monte Carlo benchmark from a key=value config")
    p.add_argument("config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker processes")
    return parser


def _pair(args):
    if args.j is None and args.k is None:
        return None if args.K > 2 else (1, 2)
    return (1 if args.j is None else args.j, 2 if args.k is None else args.k)


def _common(args):
    if args.tmle:
        raise UsageError("TMLE not implemented")
    kinds = []
    for name in args.funcname:
        try:
            kinds.append(LearnerKind.parse(name, tuple(args.sl_lib)))
        except ValueError as exc:
            raise UsageError(f"--funcname: {exc}") from None
    seed = _default_seed() if args.seed is None else args.seed
    data = load_dataset(args.data, args.K, args.list_columns)
    options = dict(nfolds=args.nfolds, margin=args.margin, alpha=args.alpha,
                   methods=("DR", "PI") if args.plugin else ("DR",), seed=seed,
                   n_jobs=max(1, args.threads), pair=_pair(args))
    os.makedirs(args.out, exist_ok=True)
    return data, kinds, options


def _finish(table, args) -> None:
    table.to_csv(os.path.join(args.out, "results.csv"))
    plot_ci(table.to_frame(), os.path.join(args.out, "ci.svg"), args.true_n)
    print(table.format())
    bad = [f"{r.listpair}/{r.model}/{r.method}" for r in table.rows if r.degenerate]
    if bad:
        raise Degenerate(f"non-positive influence-function mean, psi set to 1 for {', '.join(bad)}")


def cmd_popsize(args) -> None:
    data, kinds, options = _common(args)
    getnuis = read_nuisances(args.getnuis) if args.getnuis else None
    idfold = read_idfold(args.idfold) if args.idfold else None
    if getnuis is not None and options["pair"] is None:
        options["pair"] = getnuis.pair
    table = popsize(data, kinds, getnuis=getnuis, idfold=idfold, **options)
    pairs = list(table.nuisances)
    for pr, nuis in table.nuisances.items():
        name = "nuis.csv" if len(pairs) == 1 else f"nuis_{pr[0]}-{pr[1]}.csv"
        nuis.to_csv(os.path.join(args.out, name))
        if nuis.idfold is not None:
            nuis.idfold.to_csv(os.path.join(args.out, "idfold.csv"))
    _finish(table, args)


def cmd_popsize_cond(args) -> None:
    data, kinds, options = _common(args)
    table = popsize_cond(data, args.condvar, kinds, **options)
    for level in table.skipped:
        print(f"caprec: warning: condvar level {level!r} skipped (too few rows)",
              file=sys.stderr)
    _finish(table, args)


def cmd_simulate(args) -> None:
    seed = _default_seed() if args.seed is None else args.seed
    spec = DgpSpec(n_true=args.n, K=args.K, l=args.l, categorical=args.categorical,
                   ep=args.ep, seed=seed)
    if args.target_psi is not None:
        spec = spec.with_(ep=calibrate_ep(spec, args.target_psi))
    sim = simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    sim.data.to_csv(os.path.join(args.out, "data.csv"))
    sim.data_xstar.to_csv(os.path.join(args.out, "data_xstar.csv"))
    with open(os.path.join(args.out, "dgp.cfg"), "w", encoding="utf-8") as fh:
        fh.write(spec.to_config())
    print(f"psi0 = {sim.psi0:.4f} (N = {sim.data.N} of n = {spec.n_true})")


def cmd_plotci(args) -> None:
    plot_ci(read_results(args.results), args.out, args.true_n)


def cmd_benchmark(args) -> None:
    with open(args.config, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    if args.threads is not None:
        cfg = type(cfg)(**{**cfg.__dict__, "threads": args.threads})
    csv_path, svg_path = emit_report(run_benchmark(cfg), args.out)
    print(f"wrote {csv_path} and {svg_path}")


_COMMANDS = {"popsize": cmd_popsize, "popsize-cond": cmd_popsize_cond,
             "simulate": cmd_simulate, "plotci": cmd_plotci, "benchmark": cmd_benchmark}


def _fail(code: int, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"caprec: error: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="caprec: warning: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except (UsageError, ConfigError, NotImplementedError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (Degenerate, BenchmarkAborted) as exc:
        return _fail(EXIT_DEGENERATE, exc)
    except (ValueError, OSError, RuntimeError) as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK
