"""Timing sweeps for the scaling claims behind the matrix-free design.

Measurements run single-threaded (BLAS pinned to one thread) and report
the median of repeated calls, which is what the coarse scaling bands in
the acceptance checks consume.  Rows are plain dicts so the CLI can dump
them as CSV.
"""

from __future__ import annotations

import time

import numpy as np
from threadpoolctl import threadpool_limits

from .fisher import block_preconditioner, info_block_diag, info_operator, pool_matvec
from .linalg import pcg_solve
from .relax import RelaxConfig, solve_fast
from .rounding import RoundConfig, round_blockdiag
from .verify import random_context

__all__ = [
    "bench_cg",
    "bench_matvec",
    "bench_relax",
    "bench_round",
    "rows_to_csv",
    "run_bench",
]


def _median_seconds(fn, reps):
    fn()  # warmup
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_matvec(sizes=(25_000, 50_000, 100_000), dim=16, classes=5, reps=15, seed=0):
    """Pooled matvec wall time as the pool grows at fixed dim and classes."""
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            rng = np.random.default_rng(seed)
            ctx = random_context(rng, n, dim, classes, n_labeled=min(50, n // 10))
            v = rng.normal(size=ctx.stacked_dim)
            seconds = _median_seconds(lambda: pool_matvec(ctx, v), reps)
            rows.append(
                {"kind": "matvec", "n": int(n), "dim": dim, "blocks": classes - 1, "seconds": seconds}
            )
    return rows


def bench_cg(dims=(32, 64, 128), n_points=192, classes=5, tol=1e-6, reps=9, seed=0):
    """Preconditioner setup cost and CG iteration counts with/without it."""
    rows = []
    with threadpool_limits(limits=1):
        for d in dims:
            rng = np.random.default_rng(seed)
            ctx = random_context(rng, n_points, d, classes, n_labeled=min(50, n_points // 4))
            z = rng.dirichlet(np.ones(ctx.pool_size))
            setup_seconds = _median_seconds(
                lambda: block_preconditioner(info_block_diag(ctx, z)), reps
            )
            op = info_operator(ctx, z)
            precond = block_preconditioner(info_block_diag(ctx, z))
            rhs = rng.normal(size=ctx.stacked_dim)
            plain = pcg_solve(op, rhs, tol=tol, max_iter=5000)
            pre = pcg_solve(op, rhs, tol=tol, max_iter=5000, precond=precond)
            rows.append(
                {
                    "kind": "cg",
                    "n": int(n_points),
                    "dim": int(d),
                    "blocks": classes - 1,
                    "setup_seconds": setup_seconds,
                    "iters_plain": int(plain.iterations[0]),
                    "iters_precond": int(pre.iterations[0]),
                }
            )
    return rows


def bench_relax(sizes=(200, 400, 800), dim=8, classes=4, budget=10, iters=5, seed=0):
    """Fast relaxation solve wall time for a few pool sizes."""
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            rng = np.random.default_rng(seed)
            ctx = random_context(rng, n, dim, classes, n_labeled=classes * 2)
            cfg = RelaxConfig(max_iters=iters, obj_rel_tol=1e-12, seed=seed)
            t0 = time.perf_counter()
            solve_fast(ctx, budget, cfg)
            rows.append(
                {
                    "kind": "relax",
                    "n": int(n),
                    "dim": dim,
                    "blocks": classes - 1,
                    "iterations": iters,
                    "seconds": time.perf_counter() - t0,
                }
            )
    return rows


def bench_round(sizes=(200, 400, 800), dim=8, classes=4, budget=10, seed=0):
    """Block-diagonal rounding wall time for a few pool sizes."""
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            rng = np.random.default_rng(seed)
            ctx = random_context(rng, n, dim, classes, n_labeled=classes * 2)
            z_scaled = budget * rng.dirichlet(np.ones(ctx.pool_size))
            eta = np.sqrt(ctx.stacked_dim) / budget
            cfg = RoundConfig(np.array([eta]), budget)
            t0 = time.perf_counter()
            round_blockdiag(ctx, z_scaled, cfg, eta)
            rows.append(
                {
                    "kind": "round",
                    "n": int(n),
                    "dim": dim,
                    "blocks": classes - 1,
                    "budget": budget,
                    "seconds": time.perf_counter() - t0,
                }
            )
    return rows


_KINDS = {
    "matvec": bench_matvec,
    "cg": bench_cg,
    "relax": bench_relax,
    "round": bench_round,
}


def run_bench(kind, sizes=None, seed=0):
    if kind not in _KINDS:
        raise KeyError(kind)
    kwargs = {"seed": seed}
    if sizes is not None:
        key = "dims" if kind == "cg" else "sizes"
        kwargs[key] = tuple(int(s) for s in sizes)
    return _KINDS[kind](**kwargs)


def rows_to_csv(rows, stream):
    cols = sorted({key for row in rows for key in row})
    stream.write(",".join(cols) + "\n")
    for row in rows:
        stream.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
