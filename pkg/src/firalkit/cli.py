"""Command line interface.

Subcommands: ``generate`` (synthetic datasets), ``run`` (multi-round
experiments), ``select`` (one selection round, indices to stdout),
``verify`` (oracle suites), ``bench`` (timing sweeps).  Exit codes:
0 success, 1 configuration error, 2 numerical failure, 3 verification
failure.  ``--threads`` (or FIRALKIT_THREADS) caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--threads", type=int, default=None)


def _add_solver_flags(p):
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--solver", type=str, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--s", type=int, default=None, help="Rademacher probes per estimate")
    p.add_argument("--cg-tol", type=float, default=None)
    p.add_argument("--eta-grid", type=str, default=None, help="comma-separated values")


def build_parser():
    parser = _Parser(prog="firalkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic blob dataset")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--dim", type=int, default=5)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--spread", type=float, default=0.3)
    g.add_argument("--imbalance", type=float, default=1.0)
    _add_common(g)

    r = sub.add_parser("run", help="run a multi-round active-learning experiment")
    _add_solver_flags(r)
    r.add_argument("--rounds", type=int, default=None)
    _add_common(r)

    s = sub.add_parser("select", help="run one selection round and print indices")
    _add_solver_flags(s)
    _add_common(s)

    v = sub.add_parser("verify", help="run oracle property suites")
    v.add_argument("suite", nargs="?", default="all")
    v.add_argument("--threads", type=int, default=None)

    b = sub.add_parser("bench", help="emit timing sweeps as CSV")
    b.add_argument("kind", choices=["matvec", "cg", "relax", "round"])
    b.add_argument("--sizes", type=str, default=None, help="comma-separated sweep sizes")
    _add_common(b)

    return parser


def _thread_limit(args):
    n = getattr(args, "threads", None)
    if n is None:
        env = os.environ.get("FIRALKIT_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError as exc:
                raise ConfigError(f"FIRALKIT_THREADS={env!r} is not an integer") from exc
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _experiment_config(args, need_rounds):
    from .driver import config_from_mapping, parse_config_file

    raw = parse_config_file(args.config) if args.config else {}
    overrides = {
        "data": args.data,
        "solver": args.solver,
        "budget": args.budget,
        "seed": args.seed,
        "out": args.out,
        "s": args.s,
        "cg_tol": args.cg_tol,
        "eta_grid": args.eta_grid,
    }
    if need_rounds:
        overrides["rounds"] = args.rounds
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if not need_rounds:
        raw["rounds"] = 1
    return config_from_mapping(raw)


def _cmd_generate(args):
    from .data import generate_blobs, save_dataset

    if args.out is None:
        raise ConfigError("generate needs --out")
    ds = generate_blobs(
        args.classes,
        args.dim,
        args.per_class,
        spread=args.spread,
        imbalance=args.imbalance,
        seed=args.seed if args.seed is not None else 0,
    )
    save_dataset(args.out, ds)
    print(f"wrote {ds.n_points} points, dim {ds.dim}, {args.classes} classes to {args.out}")
    return EXIT_OK


def _cmd_run(args):
    from .driver import run_experiment

    cfg = _experiment_config(args, need_rounds=True)
    report = run_experiment(cfg)
    if cfg.out is None:
        json.dump(report, sys.stdout, indent=2)
        print()
    else:
        print(f"wrote report to {cfg.out}")
    return EXIT_OK


def _cmd_select(args):
    from .driver import run_experiment

    cfg = _experiment_config(args, need_rounds=False)
    report = run_experiment(cfg)
    print(" ".join(str(i) for i in report["rounds"][0]["selected"]))
    return EXIT_OK


def _cmd_verify(args):
    from .verify import run_suite

    try:
        ok = run_suite(args.suite)
    except KeyError:
        raise ConfigError(
            f"unknown suite {args.suite!r}; choose from matvec, hutchinson, sm, "
            "prop1, nu, precond, all"
        ) from None
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_bench(args):
    from .bench import rows_to_csv, run_bench

    sizes = None
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --sizes: {args.sizes!r}") from exc
    rows = run_bench(args.kind, sizes=sizes, seed=args.seed if args.seed is not None else 0)
    if args.out:
        with open(args.out, "w") as f:
            rows_to_csv(rows, f)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        rows_to_csv(rows, sys.stdout)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "select": _cmd_select,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        with _thread_limit(args):
            return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
