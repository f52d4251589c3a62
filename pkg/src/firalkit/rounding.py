"""Rounding fractional selection weights into concrete point picks.

Given the relaxation output (pool weights scaled to the budget), a
follow-the-regularized-leader loop picks one point per step.  The
block-diagonal variant keeps only the per-class d x d diagonal blocks of
every information matrix, which turns each candidate evaluation into a
pair of small quadratic forms joined by a rank-one-update denominator;
the dense variant runs the same loop on full stacked matrices and serves
as the oracle.  On block-diagonal inputs the two produce identical
selection sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DenominatorNonpositiveError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    SizeCapError,
)
from .fisher import FisherContext, block_hessian_sum, dense_hessian, info_block_diag
from .linalg import cholesky_factor, cholesky_solve, spd_repair, solve_trace_shift, symmetrize

__all__ = [
    "RoundConfig",
    "RoundResult",
    "RoundState",
    "candidate_scores",
    "default_eta_grid",
    "init_round_state",
    "rank_one_update",
    "round_blockdiag",
    "round_exact",
    "tune_eta",
]


def default_eta_grid(stacked_dim, budget):
    """Log-spaced learning-rate grid centered on sqrt(d*K) / b."""
    base = np.sqrt(stacked_dim) / budget
    return base * np.array([0.1, 0.3, 1.0, 3.0, 10.0, 30.0])


@dataclass
class RoundConfig:
    eta_grid: np.ndarray
    budget: int
    allow_repeats: bool = False

    def __post_init__(self):
        self.eta_grid = np.atleast_1d(np.asarray(self.eta_grid, dtype=np.float64))
        if self.eta_grid.size == 0:
            raise ValueError("eta_grid must be nonempty")
        if np.any(self.eta_grid <= 0.0):
            raise ValueError("eta values must be positive")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


def rank_one_update(a_inv, gamma, x):
    """Inverse of (A + gamma * x x') from the inverse of A.

    Valid only while 1 + gamma * x'A^{-1}x stays positive, i.e. while the
    update keeps the matrix positive definite.
    """
    a_inv = np.asarray(a_inv, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    u = a_inv @ x
    denom = 1.0 + gamma * float(x @ u)
    if denom <= 0.0:
        raise DenominatorNonpositiveError(
            f"1 + gamma x'A^(-1)x = {denom:.3e}; update breaks positive definiteness"
        )
    return symmetrize(a_inv - (gamma / denom) * np.outer(u, u))


def _inv_spd(block):
    l_factor = cholesky_factor(block)
    return symmetrize(cholesky_solve(l_factor, np.eye(block.shape[0])))


def _inv_sqrt_spd(block):
    lam, q = np.linalg.eigh(block)
    if lam.min() <= 0.0:
        raise SingularMatrixError("block not positive definite after repair")
    return symmetrize((q * (lam**-0.5)) @ q.T)


@dataclass
class RoundState:
    """Mutable loop state of the block-diagonal rounding solve."""

    selected: list
    b_inv: np.ndarray
    h_acc: np.ndarray
    sigma_blocks: np.ndarray
    sigma_inv_sqrt: np.ndarray
    ho_blocks: np.ndarray
    eta: float
    budget: int
    nus: list = field(default_factory=list)
    eig_history: list = field(default_factory=list)


@dataclass
class RoundResult:
    selected: list
    nus: list
    eig_history: list
    h_blocks: np.ndarray
    eta: float
    b_inv_history: list = field(default_factory=list)
    h_acc_history: list = field(default_factory=list)
    a_history: list = field(default_factory=list)
    sigma_blocks: np.ndarray | None = None
    ho_blocks: np.ndarray | None = None


def init_round_state(ctx: FisherContext, z_scaled, eta, budget):
    """Build the per-class matrices the selection loop maintains.

    ``z_scaled`` must already carry the budget scaling (the relaxation
    output).  Initializes B_1 = sqrt(d*K) * Sigma_k + (eta/b) * Ho_k per
    class, with Sigma the labeled-plus-weighted-pool block diagonal.
    """
    z_scaled = np.asarray(z_scaled, dtype=np.float64)
    k, d = ctx.num_free, ctx.dim
    try:
        sigma_blocks = np.stack(
            [spd_repair(blk) for blk in info_block_diag(ctx, z_scaled)]
        )
    except NotPositiveDefiniteError as exc:
        raise SingularMatrixError(
            "weighted information block stayed singular after ridge repair"
        ) from exc
    sigma_inv_sqrt = np.stack([_inv_sqrt_spd(sigma_blocks[j]) for j in range(k)])
    ho_blocks = block_hessian_sum(ctx, ctx.labeled_idx)
    root = np.sqrt(ctx.stacked_dim)
    b_inv = np.stack(
        [
            _inv_spd(spd_repair(root * sigma_blocks[j] + (eta / budget) * ho_blocks[j]))
            for j in range(k)
        ]
    )
    return RoundState(
        selected=[],
        b_inv=b_inv,
        h_acc=np.zeros((k, d, d)),
        sigma_blocks=sigma_blocks,
        sigma_inv_sqrt=sigma_inv_sqrt,
        ho_blocks=ho_blocks,
        eta=float(eta),
        budget=int(budget),
    )


def candidate_scores(state: RoundState, ctx: FisherContext):
    """Selection score of every pool point; bigger is better.

    Per class k the score adds s * x'B^{-1} Sigma B^{-1}x over
    1 + eta * s * x'B^{-1}x with s = h_k (1 - h_k), which is exactly how
    much the rank-one update of the candidate lowers trace(B^{-1} Sigma),
    so the argmax matches the argmin of the dense rounding objective.
    """
    xp = ctx.features[ctx.pool_idx]
    h = ctx.probs[ctx.pool_idx]
    s_all = h * (1.0 - h)
    scores = np.zeros(ctx.pool_size)
    for j in range(ctx.num_free):
        u = xp @ state.b_inv[j]
        num = np.einsum("id,de,ie->i", u, state.sigma_blocks[j], u, optimize=True)
        den = 1.0 + state.eta * s_all[:, j] * np.einsum("id,id->i", u, xp)
        scores += s_all[:, j] * num / den
    return scores


def _pick(scores, pool_idx, blocked):
    """Argmax with ties broken toward the lowest point index."""
    values = scores.copy()
    if blocked:
        values[list(blocked)] = -np.inf
    best = values.max()
    if not np.isfinite(best):
        raise ValueError("no eligible candidates remain")
    ties = np.flatnonzero(values == best)
    return int(ties[np.argmin(pool_idx[ties])])


def round_blockdiag(ctx: FisherContext, z_scaled, cfg: RoundConfig, eta, keep_history=False):
    """Block-diagonal rounding loop; returns the picks in selection order.

    Each step scores candidates, selects the argmax, accumulates the
    picked point's blocks plus a 1/b share of the labeled blocks,
    recomputes the normalizing shift nu from the rescaled spectrum, and
    rebuilds the per-class B inverses by Cholesky.
    """
    budget = cfg.budget
    if not cfg.allow_repeats and budget > ctx.pool_size:
        raise ValueError("budget exceeds pool size with repeats disabled")
    state = init_round_state(ctx, z_scaled, eta, budget)
    result = RoundResult(
        selected=state.selected,
        nus=state.nus,
        eig_history=state.eig_history,
        h_blocks=state.h_acc,
        eta=float(eta),
        sigma_blocks=state.sigma_blocks,
        ho_blocks=state.ho_blocks,
    )
    blocked = set()
    positions = {int(g): p for p, g in enumerate(ctx.pool_idx)}

    for _ in range(budget):
        if keep_history:
            result.b_inv_history.append(state.b_inv.copy())
        scores = candidate_scores(state, ctx)
        pos = _pick(scores, ctx.pool_idx, blocked)
        gidx = int(ctx.pool_idx[pos])
        state.selected.append(gidx)
        if not cfg.allow_repeats:
            blocked.add(positions[gidx])

        x = ctx.features[gidx]
        s_vec = ctx.probs[gidx] * (1.0 - ctx.probs[gidx])
        xxt = np.outer(x, x)
        for j in range(ctx.num_free):
            state.h_acc[j] += state.ho_blocks[j] / budget + s_vec[j] * xxt

        eigs = np.concatenate(
            [
                np.linalg.eigvalsh(
                    symmetrize(
                        state.sigma_inv_sqrt[j] @ state.h_acc[j] @ state.sigma_inv_sqrt[j]
                    )
                )
                for j in range(ctx.num_free)
            ]
        )
        eigs = np.maximum(eigs, 0.0)
        nu = solve_trace_shift(eigs, eta)
        state.nus.append(nu)
        state.eig_history.append(eigs)
        for j in range(ctx.num_free):
            b_new = (
                nu * state.sigma_blocks[j]
                + eta * state.h_acc[j]
                + (eta / budget) * state.ho_blocks[j]
            )
            state.b_inv[j] = _inv_spd(spd_repair(b_new))
        if keep_history:
            result.h_acc_history.append(state.h_acc.copy())

    return result


def _truncate_to_blocks(m, d, k):
    out = np.zeros_like(m)
    for j in range(k):
        sl = slice(j * d, (j + 1) * d)
        out[sl, sl] = m[sl, sl]
    return out


def round_exact(
    ctx: FisherContext,
    z_scaled,
    eta,
    budget,
    allow_repeats=False,
    block_diagonal=False,
    cap=128,
):
    """Dense rounding oracle on full stacked matrices.

    Follows the regularized-leader recursion literally: candidates are
    scored by the trace of an inverse, matrices live in the
    Sigma^{+-1/2}-transformed space, and nu is found from the full
    spectrum after every pick.  With ``block_diagonal`` every information
    matrix is truncated to its per-class diagonal blocks first, which
    reproduces the block-diagonal solver's selection sequence.
    """
    dt = ctx.stacked_dim
    if dt > cap:
        raise SizeCapError(f"stacked dim {dt} exceeds the dense rounding cap {cap}")
    if not allow_repeats and budget > ctx.pool_size:
        raise ValueError("budget exceeds pool size with repeats disabled")
    z_scaled = np.asarray(z_scaled, dtype=np.float64)
    d, k = ctx.dim, ctx.num_free

    hess = np.stack(
        [dense_hessian(ctx.features[i], ctx.probs[i], cap=cap) for i in ctx.pool_idx]
    )
    ho = np.zeros((dt, dt))
    for i in ctx.labeled_idx:
        ho += dense_hessian(ctx.features[i], ctx.probs[i], cap=cap)
    if block_diagonal:
        hess = np.stack([_truncate_to_blocks(h, d, k) for h in hess])
        ho = _truncate_to_blocks(ho, d, k)

    sigma = symmetrize(ho + np.einsum("i,ijk->jk", z_scaled, hess))
    try:
        sigma = spd_repair(sigma)
    except NotPositiveDefiniteError as exc:
        raise SingularMatrixError(
            "budget-scaled information matrix stayed singular after ridge repair"
        ) from exc
    lam, q = np.linalg.eigh(sigma)
    if lam.min() <= 0.0:
        raise SingularMatrixError("information matrix has a nonpositive eigenvalue")
    inv_sqrt = symmetrize((q * (lam**-0.5)) @ q.T)

    ho_t = symmetrize(inv_sqrt @ ho @ inv_sqrt)
    hess_t = np.einsum("ab,ibc,cd->iad", inv_sqrt, hess, inv_sqrt, optimize=True)
    hess_t = 0.5 * (hess_t + np.transpose(hess_t, (0, 2, 1)))

    a_mat = np.sqrt(dt) * np.eye(dt)
    acc = np.zeros((dt, dt))
    selected = []
    nus = []
    eig_history = []
    a_history = [a_mat.copy()]
    blocked = set()

    for _ in range(budget):
        base = a_mat + (eta / budget) * ho_t
        mats = base[None, :, :] + eta * hess_t
        traces = np.trace(np.linalg.inv(mats), axis1=1, axis2=2)
        if blocked:
            traces[list(blocked)] = np.inf
        best = traces.min()
        ties = np.flatnonzero(traces == best)
        pos = int(ties[np.argmin(ctx.pool_idx[ties])])
        gidx = int(ctx.pool_idx[pos])
        selected.append(gidx)
        if not allow_repeats:
            blocked.add(pos)

        acc = symmetrize(acc + ho_t / budget + hess_t[pos])
        eigs = np.maximum(np.linalg.eigvalsh(acc), 0.0)
        nu = solve_trace_shift(eigs, eta)
        nus.append(nu)
        eig_history.append(eigs)
        a_mat = nu * np.eye(dt) + eta * acc
        a_history.append(a_mat.copy())

    h_blocks = block_hessian_sum(ctx, np.asarray(selected, dtype=np.int64))
    h_blocks += block_hessian_sum(ctx, ctx.labeled_idx)  # budget shares sum to one Ho
    return RoundResult(
        selected=selected,
        nus=nus,
        eig_history=eig_history,
        h_blocks=h_blocks,
        eta=float(eta),
        a_history=a_history,
    )


def tune_eta(ctx: FisherContext, z_scaled, cfg: RoundConfig, rounder=None):
    """Pick the learning rate whose selection best conditions every class.

    Runs the rounding loop for each grid value and keeps the eta
    maximizing min over classes of the smallest eigenvalue of the
    accumulated per-class blocks; ties go to the smaller eta.
    """
    if rounder is None:
        rounder = lambda eta: round_blockdiag(ctx, z_scaled, cfg, eta)
    records = []
    best_eta = None
    best_val = -np.inf
    for eta in np.sort(cfg.eta_grid):
        res = rounder(float(eta))
        min_eig = min(
            float(np.linalg.eigvalsh(res.h_blocks[j])[0]) for j in range(ctx.num_free)
        )
        records.append({"eta": float(eta), "min_eig": min_eig, "result": res})
        if min_eig > best_val:
            best_val = min_eig
            best_eta = float(eta)
    return best_eta, records
