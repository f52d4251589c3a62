"""Seeded oracle suites behind the ``verify`` subcommand.

Each check pits a fast code path against an independent dense oracle on
randomly generated instances and reports worst-case errors.  The same
functions back the acceptance test suite, so the CLI and pytest agree on
what "correct" means.
"""

from __future__ import annotations

import numpy as np

from .fisher import (
    FisherContext,
    block_preconditioner,
    dense_hessian,
    dense_info_matrix,
    hessian_matvec,
    info_block_diag,
    info_operator,
)
from .linalg import pcg_solve, solve_trace_shift, symmetrize
from .relax import RelaxConfig, estimate_gradients, exact_gradient
from .rounding import (
    RoundConfig,
    candidate_scores,
    init_round_state,
    rank_one_update,
    round_blockdiag,
    round_exact,
)

__all__ = [
    "SUITES",
    "check_hutchinson",
    "check_matvec",
    "check_preconditioner",
    "check_prop1",
    "check_sherman_morrison",
    "check_trace_shift",
    "enumerate_sign_vectors",
    "random_context",
    "run_suite",
]


def random_context(rng, n_points, dim, classes, n_labeled):
    """Random operator inputs: unit-scale features, open-simplex probabilities."""
    feats = rng.normal(size=(n_points, dim))
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = feats / norms * rng.uniform(0.5, 1.5, size=(n_points, 1))
    probs = rng.dirichlet(np.ones(classes), size=n_points)[:, : classes - 1]
    order = rng.permutation(n_points)
    return FisherContext(feats, probs, np.sort(order[:n_labeled]), np.sort(order[n_labeled:]))


def enumerate_sign_vectors(dim):
    """All 2^dim sign vectors as a dim x 2^dim float matrix."""
    n = 2**dim
    bits = (np.arange(n)[None, :] >> np.arange(dim)[:, None]) & 1
    return 2.0 * bits.astype(np.float64) - 1.0


def check_matvec(instances=200, seed=20240501):
    """Fast per-point matvec against the dense Kronecker oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 9))
        k = int(rng.integers(1, 6))
        x = rng.normal(size=d)
        h = rng.dirichlet(np.ones(k + 1))[:k]
        v = rng.normal(size=d * k)
        fast = hessian_matvec(x, h, v)
        ref = dense_hessian(x, h) @ v
        denom = np.linalg.norm(ref)
        err = np.linalg.norm(fast - ref) / denom if denom > 0 else np.linalg.norm(fast)
        worst = max(worst, err)
    passed = worst <= 1e-12
    return {"name": "matvec", "passed": passed, "details": f"max relative error {worst:.3e} over {instances} instances"}


def check_hutchinson(seed=20240502, tol=1e-8):
    """Full +/-1 enumeration with tight CG must reproduce the exact gradient."""
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, n_points=16, dim=5, classes=3, n_labeled=4)
    z = np.full(ctx.pool_size, 1.0 / ctx.pool_size)
    probes = enumerate_sign_vectors(ctx.stacked_dim)
    cfg = RelaxConfig(cg_tol=1e-10, cg_max_iter=2000)
    est = estimate_gradients(ctx, z, probes, cfg)
    ref = exact_gradient(ctx, z)
    rel = np.abs(est.gradients - ref) / np.abs(ref)
    worst = float(rel.max())
    return {
        "name": "hutchinson",
        "passed": worst <= tol,
        "details": f"max per-point relative error {worst:.3e} over {ctx.pool_size} pool points",
    }


def check_sherman_morrison(instances=100, seed=20240503):
    """Rank-one block update against dense inversion of the updated matrix."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 7))
        g = rng.normal(size=(d, d + 2))
        a = g @ g.T + 0.1 * np.eye(d)
        a_inv = symmetrize(np.linalg.inv(a))
        gamma = float(rng.uniform(0.05, 3.0))
        x = rng.normal(size=d)
        updated = rank_one_update(a_inv, gamma, x)
        ref = np.linalg.inv(a + gamma * np.outer(x, x))
        err = np.abs(updated - ref).max() / np.abs(ref).max()
        worst = max(worst, err)
    return {
        "name": "sherman_morrison",
        "passed": worst <= 1e-10,
        "details": f"max relative error {worst:.3e} over {instances} updates",
    }


def _blockdiag_traces(state, ctx):
    """Dense oracle r_i = sum_k trace[(B_k + eta s_ik x x')^{-1} Sigma_k]."""
    xp = ctx.features[ctx.pool_idx]
    h = ctx.probs[ctx.pool_idx]
    s_all = h * (1.0 - h)
    r = np.zeros(ctx.pool_size)
    for j in range(ctx.num_free):
        b_mat = np.linalg.inv(state.b_inv[j])
        for i in range(ctx.pool_size):
            m = b_mat + state.eta * s_all[i, j] * np.outer(xp[i], xp[i])
            r[i] += float(np.trace(np.linalg.solve(m, state.sigma_blocks[j])))
    return r


def check_prop1(instances=50, seed=20240504, tol=1e-8):
    """Score identity r_i = trace(B^{-1}Sigma) - eta * score_i, each round step.

    Also checks argmax(score) == argmin(r) and that the dense rounding
    oracle on block-truncated matrices replays the block-diagonal
    solver's full selection sequence.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(2, 5))
        c = int(rng.integers(2, 5))  # K = c-1 <= 3
        n = int(rng.integers(12, 41))
        n_lab = int(rng.integers(2, 5))
        ctx = random_context(rng, n, d, c, n_lab)
        budget = int(rng.integers(2, 5))
        z_scaled = budget * rng.dirichlet(np.ones(ctx.pool_size))
        eta = float(rng.uniform(0.3, 3.0))
        cfg = RoundConfig(np.array([eta]), budget)

        res = round_blockdiag(ctx, z_scaled, cfg, eta, keep_history=True)
        state = init_round_state(ctx, z_scaled, eta, budget)
        blocked = []
        for t in range(budget):
            state.b_inv = res.b_inv_history[t]
            scores = candidate_scores(state, ctx)
            base = sum(
                float(np.trace(state.b_inv[j] @ state.sigma_blocks[j]))
                for j in range(ctx.num_free)
            )
            r = _blockdiag_traces(state, ctx)
            resid = np.abs(r - (base - eta * scores)).max() / max(abs(base), 1.0)
            worst = max(worst, float(resid))
            mask_scores = scores.copy()
            mask_r = r.copy()
            if blocked:
                mask_scores[blocked] = -np.inf
                mask_r[blocked] = np.inf
            if int(np.argmax(mask_scores)) != int(np.argmin(mask_r)):
                return {
                    "name": "prop1",
                    "passed": False,
                    "details": f"argmax(score) != argmin(trace) at step {t}",
                }
            pos = int(np.argmax(mask_scores))
            blocked.append(pos)
            if res.selected[t] != int(ctx.pool_idx[pos]):
                return {
                    "name": "prop1",
                    "passed": False,
                    "details": "replayed selection disagrees with solver",
                }

        exact = round_exact(ctx, z_scaled, eta, budget, block_diagonal=True)
        if exact.selected != res.selected:
            return {
                "name": "prop1",
                "passed": False,
                "details": f"dense block-truncated sequence {exact.selected} != {res.selected}",
            }
    return {
        "name": "prop1",
        "passed": worst <= tol,
        "details": f"max identity residual {worst:.3e} over {instances} instances",
    }


def check_trace_shift(seed=20240505, tol=1e-10):
    """Normalizer contract on both rounding variants plus zero-spectrum exactness."""
    for m in (1, 4, 9, 40):
        nu = solve_trace_shift(np.zeros(m), eta=1.7)
        if nu != np.sqrt(m):
            return {
                "name": "nu",
                "passed": False,
                "details": f"zero spectrum of size {m} gave {nu!r}, expected sqrt({m})",
            }
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 25, 3, 3, 3)
    budget = 5
    z_scaled = budget * rng.dirichlet(np.ones(ctx.pool_size))
    eta = 1.1
    worst = 0.0
    res_fast = round_blockdiag(ctx, z_scaled, RoundConfig(np.array([eta]), budget), eta)
    res_dense = round_exact(ctx, z_scaled, eta, budget)
    for res in (res_fast, res_dense):
        for nu, eigs in zip(res.nus, res.eig_history):
            resid = abs(float(np.sum((nu + eta * eigs) ** -2.0)) - 1.0)
            worst = max(worst, resid)
    return {
        "name": "nu",
        "passed": worst <= tol,
        "details": f"max |sum (nu + eta lam)^-2 - 1| = {worst:.3e}",
    }


def check_preconditioner(instances=20, seed=20240506, n_points=200, dim=10, classes=5):
    """Block-Jacobi preconditioning: conditioning and CG iteration counts.

    The transformed matrix must beat the raw condition number in at least
    18 of 20 instances, and preconditioned CG must never need more
    iterations than plain CG on the same system.
    """
    rng = np.random.default_rng(seed)
    cond_wins = 0
    iter_ok = 0
    for _ in range(instances):
        ctx = random_context(rng, n_points, dim, classes, n_labeled=20)
        z = rng.dirichlet(np.ones(ctx.pool_size))
        sigma = dense_info_matrix(ctx, z, cap=512)
        blocks = info_block_diag(ctx, z)
        inv_sqrt_blocks = []
        for j in range(ctx.num_free):
            lam, q = np.linalg.eigh(symmetrize(blocks[j]))
            inv_sqrt_blocks.append((q * np.maximum(lam, 1e-300) ** -0.5) @ q.T)
        d = ctx.dim
        big = np.zeros_like(sigma)
        for j in range(ctx.num_free):
            sl = slice(j * d, (j + 1) * d)
            big[sl, sl] = inv_sqrt_blocks[j]
        scaled = big @ sigma @ big
        ev_raw = np.linalg.eigvalsh(sigma)
        ev_pre = np.linalg.eigvalsh(symmetrize(scaled))
        if ev_pre[-1] / ev_pre[0] <= ev_raw[-1] / ev_raw[0]:
            cond_wins += 1

        op = info_operator(ctx, z)
        rhs = rng.normal(size=ctx.stacked_dim)
        plain = pcg_solve(op, rhs, tol=1e-6, max_iter=5000)
        pre = pcg_solve(op, rhs, tol=1e-6, max_iter=5000, precond=block_preconditioner(blocks))
        if int(pre.iterations[0]) <= int(plain.iterations[0]):
            iter_ok += 1
    passed = cond_wins >= instances - 2 and iter_ok == instances
    return {
        "name": "preconditioner",
        "passed": passed,
        "details": (
            f"condition number improved in {cond_wins}/{instances}, "
            f"iteration count never worse in {iter_ok}/{instances}"
        ),
    }


SUITES = {
    "matvec": check_matvec,
    "hutchinson": check_hutchinson,
    "sm": check_sherman_morrison,
    "prop1": check_prop1,
    "nu": check_trace_shift,
    "precond": check_preconditioner,
}


def run_suite(name, out=print):
    """Run one named suite (or ``all``); returns True when everything passed."""
    if name == "all":
        checks = list(SUITES.values())
    elif name in SUITES:
        checks = [SUITES[name]]
    else:
        raise KeyError(name)
    ok = True
    for fn in checks:
        res = fn()
        status = "PASS" if res["passed"] else "FAIL"
        out(f"[{status}] {res['name']}: {res['details']}")
        ok = ok and res["passed"]
    return ok
