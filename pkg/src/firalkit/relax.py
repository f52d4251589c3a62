"""Continuous relaxation of batch selection, solved by entropic mirror descent.

Two interchangeable solvers minimize the information ratio
``f(z) = trace(Sigma_z^{-1} H_pool)`` over the probability simplex, where
``Sigma_z`` is the labeled information plus the z-weighted pool
information.  :func:`solve_exact` forms everything densely and is the
correctness oracle; :func:`solve_fast` never materializes a stacked
matrix, estimating gradients with Rademacher probes and two
block-preconditioned CG solves per iteration.  Both return the final
weights scaled by the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefiniteError, SingularMatrixError
from .fisher import (
    FisherContext,
    _gamma_batch,
    block_preconditioner,
    dense_info_matrix,
    dense_pool_matrix,
    info_block_diag,
    info_operator,
    pool_matvec,
    to_matrix,
)
from .linalg import cholesky_factor, pcg_solve, rademacher, spd_repair, symmetrize

__all__ = [
    "GradientEstimate",
    "RelaxConfig",
    "RelaxTrace",
    "estimate_gradients",
    "exact_gradient",
    "exact_objective",
    "hutchinson_objective",
    "mirror_step",
    "solve_exact",
    "solve_fast",
]


@dataclass
class RelaxConfig:
    """Knobs of the mirror-descent loop.

    ``num_probes`` Rademacher vectors drive the gradient estimate;
    ``cg_tol`` is the relative-residual target of both CG solves.  The
    loop stops once the estimated objective moves by less than
    ``obj_rel_tol`` relatively, or after ``max_iters`` iterations.  With
    ``scale_by_budget`` the weighted information matrix uses b*z instead
    of z during the iterations (output scaling is unaffected).
    """

    num_probes: int = 10
    cg_tol: float = 0.1
    cg_max_iter: int = 500
    max_iters: int = 100
    obj_rel_tol: float = 1e-4
    beta0: float = 1.0
    seed: int = 0
    scale_by_budget: bool = False

    def __post_init__(self):
        if self.num_probes < 1:
            raise ValueError("num_probes must be >= 1")
        for name in ("cg_tol", "obj_rel_tol"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.beta0 <= 0.0:
            raise ValueError("beta0 must be positive")


@dataclass
class RelaxTrace:
    """Per-iteration diagnostics of a relaxation solve."""

    objectives: list = field(default_factory=list)
    grad_inf_norms: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    cg_converged: list = field(default_factory=list)
    z_min: list = field(default_factory=list)
    z_sum_err: list = field(default_factory=list)
    iterations: int = 0
    stopped_early: bool = False


@dataclass
class GradientEstimate:
    """Gradient estimate plus the shared solve workspace.

    ``solved_probes`` is Sigma^{-1} V, ``pooled`` is H_pool Sigma^{-1} V
    and ``workspace`` is Sigma^{-1} H_pool Sigma^{-1} V; the last is what
    every per-point contraction reuses.
    """

    gradients: np.ndarray
    solved_probes: np.ndarray
    pooled: np.ndarray
    workspace: np.ndarray
    cg_iterations: int
    cg_converged: bool


def _dense_factor(ctx, weights, cap):
    sigma = dense_info_matrix(ctx, weights, cap=cap)
    try:
        return cholesky_factor(spd_repair(sigma))
    except NotPositiveDefiniteError as exc:
        raise SingularMatrixError(
            "weighted information matrix is singular even after ridge repair"
        ) from exc


def exact_objective(ctx: FisherContext, weights, cap=256):
    """Dense evaluation of trace(Sigma_w^{-1} H_pool)."""
    from scipy.linalg import cho_solve

    l_factor = _dense_factor(ctx, weights, cap)
    hp = dense_pool_matrix(ctx, cap=cap)
    return float(np.trace(cho_solve((l_factor, True), hp)))


def exact_gradient(ctx: FisherContext, weights, cap=256):
    """Dense gradient: entry i is -trace(H_i Sigma^{-1} H_pool Sigma^{-1}).

    Oracle path, gated by the stacked-dimension cap.  Every entry is
    nonpositive because both factors in the trace are PSD.
    """
    from scipy.linalg import cho_solve

    d, k = ctx.dim, ctx.num_free
    l_factor = _dense_factor(ctx, weights, cap)
    hp = dense_pool_matrix(ctx, cap=cap)
    y = cho_solve((l_factor, True), hp)
    m = symmetrize(cho_solve((l_factor, True), y.T).T)
    # trace(H_i M) with H_i = [diag(h)-hh'] (x) xx' contracts into the
    # per-class quadratic forms q[i,k,l] = x_i' M_(k,l) x_i.
    m4 = m.reshape(k, d, k, d)
    xp = ctx.features[ctx.pool_idx]
    hp_rows = ctx.probs[ctx.pool_idx]
    q = np.einsum("ip,kplq,iq->ikl", xp, m4, xp, optimize=True)
    diag_part = np.einsum("ikk,ik->i", q, hp_rows)
    quad_part = np.einsum("ik,ikl,il->i", hp_rows, q, hp_rows)
    return -(diag_part - quad_part)


def estimate_gradients(ctx: FisherContext, weights, probes, cfg: RelaxConfig, op=None, precond=None):
    """Hutchinson gradient estimate from a shared probe workspace.

    Solves Sigma^{-1} V and Sigma^{-1} (H_pool Sigma^{-1} V) by
    block-preconditioned CG once, then contracts the workspace against
    every pool point's matvec.  A CG column hitting its iteration cap is
    reported through ``cg_converged``, not raised.
    """
    probes = np.asarray(probes, dtype=np.float64)
    if probes.ndim != 2 or probes.shape[0] != ctx.stacked_dim:
        raise ValueError("probes must be a stacked_dim x s matrix")
    if op is None:
        op = info_operator(ctx, weights)
    if precond is None:
        precond = block_preconditioner(info_block_diag(ctx, weights))

    first = pcg_solve(op, probes, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, precond=precond)
    pooled = pool_matvec(ctx, first.solution)
    second = pcg_solve(op, pooled, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, precond=precond)
    w = second.solution

    xp = ctx.features[ctx.pool_idx]
    h_rows = ctx.probs[ctx.pool_idx]
    v3 = to_matrix(probes, ctx.dim, ctx.num_free)
    w3 = to_matrix(w, ctx.dim, ctx.num_free)
    gamma = _gamma_batch(xp, h_rows, v3)
    xw = np.einsum("np,pks->nks", xp, w3)
    g = -np.einsum("nks,nks->n", gamma, xw) / probes.shape[1]

    return GradientEstimate(
        gradients=g,
        solved_probes=first.solution,
        pooled=pooled,
        workspace=w,
        cg_iterations=int(first.iterations.sum() + second.iterations.sum()),
        cg_converged=bool(first.converged.all() and second.converged.all()),
    )


def hutchinson_objective(pooled, probes):
    """Trace estimate of the objective from the shared workspace.

    ``pooled`` must be H_pool Sigma^{-1} V for the same probe matrix V;
    averaging the columnwise inner products estimates
    trace(Sigma^{-1} H_pool) without extra solves.
    """
    probes = np.asarray(probes, dtype=np.float64)
    pooled = np.asarray(pooled, dtype=np.float64)
    return float(np.mean(np.einsum("ij,ij->j", probes, pooled)))


def mirror_step(z, g, beta):
    """Multiplicative update z * exp(-beta g), renormalized to the simplex.

    The exponent is shifted by the smallest gradient entry, which cancels
    in the normalization and keeps exp() from overflowing.
    """
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if z.shape != g.shape:
        raise ValueError("z and g must have the same length")
    scaled = z * np.exp(-beta * (g - g.min()))
    return scaled / scaled.sum()


def _record(trace, obj, g, cg_iters, cg_ok, z):
    trace.objectives.append(float(obj))
    trace.grad_inf_norms.append(float(np.abs(g).max()))
    trace.cg_iterations.append(int(cg_iters))
    trace.cg_converged.append(bool(cg_ok))
    trace.z_min.append(float(z.min()))
    trace.z_sum_err.append(abs(float(z.sum()) - 1.0))


def _stop(trace, cfg):
    objs = trace.objectives
    if len(objs) < 2:
        return False
    prev, cur = objs[-2], objs[-1]
    return abs(cur - prev) <= cfg.obj_rel_tol * abs(prev)


def solve_fast(ctx: FisherContext, budget, cfg: RelaxConfig):
    """Matrix-free relaxation solve; returns (budget * z, trace).

    Each iteration draws fresh probes, rebuilds the block-diagonal
    preconditioner, estimates gradients through two CG solves, and takes
    an entropic step with beta0 / ||g||_inf.  The stopping objective is
    estimated with a separate probe set drawn once up front, so the
    relative-change test is not dominated by probe noise.
    """
    npool = ctx.pool_size
    if not 1 <= budget <= npool:
        raise ValueError(f"budget {budget} outside [1, {npool}]")
    rng = np.random.default_rng(cfg.seed)
    obj_probes = rademacher(ctx.stacked_dim, cfg.num_probes, rng=rng)
    z = np.full(npool, 1.0 / npool)
    trace = RelaxTrace()

    for _ in range(cfg.max_iters):
        sigma_weights = budget * z if cfg.scale_by_budget else z
        op = info_operator(ctx, sigma_weights)
        precond = block_preconditioner(info_block_diag(ctx, sigma_weights))
        probes = rademacher(ctx.stacked_dim, cfg.num_probes, rng=rng)
        est = estimate_gradients(ctx, sigma_weights, probes, cfg, op=op, precond=precond)
        obj_solve = pcg_solve(
            op, obj_probes, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, precond=precond
        )
        obj = hutchinson_objective(pool_matvec(ctx, obj_solve.solution), obj_probes)
        _record(
            trace,
            obj,
            est.gradients,
            est.cg_iterations + int(obj_solve.iterations.sum()),
            est.cg_converged and bool(obj_solve.converged.all()),
            z,
        )
        trace.iterations += 1
        if _stop(trace, cfg):
            trace.stopped_early = True
            break
        beta = cfg.beta0 / max(float(np.abs(est.gradients).max()), 1e-300)
        z = mirror_step(z, est.gradients, beta)

    return budget * z, trace


def solve_exact(ctx: FisherContext, budget, cfg: RelaxConfig, backtrack=True, cap=256):
    """Dense-oracle relaxation solve with exact gradients and objective.

    With ``backtrack`` the step size is halved until the (convex)
    objective does not increase, so the recorded objective sequence is
    monotone nonincreasing.
    """
    npool = ctx.pool_size
    if not 1 <= budget <= npool:
        raise ValueError(f"budget {budget} outside [1, {npool}]")
    z = np.full(npool, 1.0 / npool)
    trace = RelaxTrace()

    for _ in range(cfg.max_iters):
        sigma_weights = budget * z if cfg.scale_by_budget else z
        g = exact_gradient(ctx, sigma_weights, cap=cap)
        obj = exact_objective(ctx, sigma_weights, cap=cap)
        _record(trace, obj, g, 0, True, z)
        trace.iterations += 1
        if _stop(trace, cfg):
            trace.stopped_early = True
            break
        beta = cfg.beta0 / max(float(np.abs(g).max()), 1e-300)
        z_next = mirror_step(z, g, beta)
        if backtrack:
            for _ in range(40):
                w_next = budget * z_next if cfg.scale_by_budget else z_next
                if exact_objective(ctx, w_next, cap=cap) <= obj * (1.0 + 1e-12):
                    break
                beta *= 0.5
                z_next = mirror_step(z, g, beta)
        z = z_next

    return budget * z, trace
