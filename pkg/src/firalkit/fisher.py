"""Fisher-information operators for the pinned-reference logistic model.

The per-point information matrix is the Kronecker product
``[diag(h) - h h'] (x) (x x')`` where h holds the c-1 free-class
probabilities, so a matvec never needs the dense matrix: reshape the
operand into a d x (c-1) matrix V and use

    gamma  <- V' x
    alpha  <- gamma' h
    gamma  <- (gamma - alpha) * h     (elementwise)
    result <- vec(outer(x, gamma))

which costs O(d (c-1)) per point.  Pooled operators batch this schedule
over all points with one matmul per step.  Stacked vectors use column
order: entry k*d + p of v is V[p, k].

The dense builders in this module exist as correctness oracles and are
gated behind size caps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeCapError
from .linalg import LinearOperator, cholesky_solve, ridge_cholesky, symmetrize

__all__ = [
    "FisherContext",
    "block_hessian_sum",
    "block_preconditioner",
    "dense_hessian",
    "dense_info_matrix",
    "dense_pool_matrix",
    "hessian_matvec",
    "info_block_diag",
    "info_matvec",
    "info_operator",
    "pool_matvec",
    "pool_operator",
    "to_matrix",
    "to_vector",
]


@dataclass
class FisherContext:
    """Frozen per-round inputs shared by every information operator.

    ``probs`` holds the free-class probabilities of *all* points (one row
    each), computed once from the current classifier.  ``labeled_idx`` and
    ``pool_idx`` partition the points the operators may touch and must be
    disjoint.
    """

    features: np.ndarray
    probs: np.ndarray
    labeled_idx: np.ndarray
    pool_idx: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labeled_idx = np.asarray(self.labeled_idx, dtype=np.int64)
        self.pool_idx = np.asarray(self.pool_idx, dtype=np.int64)
        n = self.features.shape[0]
        if self.probs.shape[0] != n:
            raise ValueError("probs and features disagree on the number of points")
        for name, idx in (("labeled_idx", self.labeled_idx), ("pool_idx", self.pool_idx)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"{name} contains out-of-range indices")
        if np.intersect1d(self.labeled_idx, self.pool_idx).size:
            raise ValueError("labeled and pool index sets overlap")

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_free(self):
        """Number of free classes (c - 1), i.e. the block count."""
        return self.probs.shape[1]

    @property
    def stacked_dim(self):
        return self.dim * self.num_free

    @property
    def pool_size(self):
        return self.pool_idx.size


def to_matrix(v, dim, num_free):
    """View a stacked vector (or matrix of columns) as d x K (x cols)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != dim * num_free:
        raise ValueError(f"stacked length {v.shape[0]} != {dim} * {num_free}")
    if v.ndim == 1:
        return np.reshape(v, (dim, num_free), order="F")
    return np.reshape(v, (dim, num_free, v.shape[1]), order="F")


def to_vector(m):
    """Inverse of :func:`to_matrix`; columns stack class by class."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 2:
        return np.reshape(m, -1, order="F")
    return np.reshape(m, (m.shape[0] * m.shape[1], m.shape[2]), order="F")


def _gamma_batch(x, h, v3):
    """Steps 1-3 of the matvec schedule for a batch of points.

    x: (n, d) rows, h: (n, K) rows, v3: (d, K, s) stacked columns.
    Returns (n, K, s).  Plain einsum keeps the reduction order identical
    for any batch size, so single-point and pooled paths agree bitwise.
    """
    g = np.einsum("np,pks->nks", x, v3)
    alpha = np.einsum("nks,nk->ns", g, h)
    return (g - alpha[:, None, :]) * h[:, :, None]


def _scatter_batch(x, gamma):
    """Step 4 summed over the batch: out[p,k,s] = sum_n x[n,p] gamma[n,k,s]."""
    return np.einsum("np,nks->pks", x, gamma)


def _batched_matvec(x, h, weights, v):
    single = np.asarray(v).ndim == 1
    d = x.shape[1]
    k = h.shape[1]
    v3 = to_matrix(v, d, k)
    if single:
        v3 = v3[:, :, None]
    gamma = _gamma_batch(x, h, v3)
    if weights is not None:
        x = x * weights[:, None]
    out = to_vector(_scatter_batch(x, gamma))
    return out[:, 0] if single else out


def hessian_matvec(x, h, v):
    """Information matvec for a single point, without forming the matrix.

    Equals ``dense_hessian(x, h) @ v`` up to roundoff; intermediate storage
    is the K+1 scalars of the schedule plus the output.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1:
        raise ValueError("x and h must be vectors")
    return _batched_matvec(x[None, :], h[None, :], None, v)


def dense_hessian(x, h, cap=512):
    """Dense Kronecker oracle [diag(h) - h h'] (x) (x x'), size capped."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.size * h.size > cap:
        raise SizeCapError(f"stacked dim {x.size * h.size} exceeds the oracle cap {cap}")
    return np.kron(np.diag(h) - np.outer(h, h), np.outer(x, x))


def pool_matvec(ctx: FisherContext, v):
    """Sum of information matvecs over the unlabeled pool."""
    if ctx.pool_size == 0:
        raise ValueError("pool is empty")
    return _batched_matvec(
        ctx.features[ctx.pool_idx], ctx.probs[ctx.pool_idx], None, v
    )


def info_matvec(ctx: FisherContext, pool_weights, v):
    """Matvec of the labeled information plus the weighted pool information.

    ``pool_weights`` has one nonnegative entry per pool point; labeled
    points always enter with weight one.
    """
    pool_weights = np.asarray(pool_weights, dtype=np.float64)
    if pool_weights.shape != (ctx.pool_size,):
        raise ValueError("pool_weights length must match the pool")
    out = _batched_matvec(
        ctx.features[ctx.pool_idx], ctx.probs[ctx.pool_idx], pool_weights, v
    )
    if ctx.labeled_idx.size:
        out = out + _batched_matvec(
            ctx.features[ctx.labeled_idx], ctx.probs[ctx.labeled_idx], None, v
        )
    return out


def pool_operator(ctx: FisherContext):
    return LinearOperator(ctx.stacked_dim, lambda v: pool_matvec(ctx, v))


def info_operator(ctx: FisherContext, pool_weights):
    pool_weights = np.asarray(pool_weights, dtype=np.float64)
    return LinearOperator(ctx.stacked_dim, lambda v: info_matvec(ctx, pool_weights, v))


def _block_sum(x, h, weights):
    """Per-class blocks sum_i w_i h_ik (1 - h_ik) x_i x_i', shape (K, d, d)."""
    k = h.shape[1]
    d = x.shape[1]
    s = h * (1.0 - h)
    if weights is not None:
        s = s * weights[:, None]
    blocks = np.empty((k, d, d))
    for j in range(k):
        blocks[j] = symmetrize((x * s[:, j : j + 1]).T @ x)
    return blocks


def info_block_diag(ctx: FisherContext, pool_weights):
    """Per-class diagonal blocks of the weighted information matrix.

    Block k is sum over labeled points of h_k (1-h_k) x x' plus the same
    sum over pool points scaled by ``pool_weights``; it equals the k-th
    d x d diagonal block of the dense matrix and is what the CG
    preconditioner factors.
    """
    pool_weights = np.asarray(pool_weights, dtype=np.float64)
    if pool_weights.shape != (ctx.pool_size,):
        raise ValueError("pool_weights length must match the pool")
    blocks = _block_sum(
        ctx.features[ctx.pool_idx], ctx.probs[ctx.pool_idx], pool_weights
    )
    if ctx.labeled_idx.size:
        blocks += _block_sum(
            ctx.features[ctx.labeled_idx], ctx.probs[ctx.labeled_idx], None
        )
    return blocks


def block_hessian_sum(ctx: FisherContext, idx, weights=None):
    """Per-class blocks of the (optionally weighted) Hessian sum over ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.zeros((ctx.num_free, ctx.dim, ctx.dim))
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    return _block_sum(ctx.features[idx], ctx.probs[idx], w)


def block_preconditioner(blocks):
    """Callable applying the inverse of a block-diagonal SPD matrix.

    Each d x d block is Cholesky-factored once (with ridge repair); the
    returned function maps a stacked vector or matrix of columns through
    the per-class solves.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    k, d, _ = blocks.shape
    factors = [ridge_cholesky(blocks[j]) for j in range(k)]

    def apply(v):
        single = np.asarray(v).ndim == 1
        v3 = to_matrix(v, d, k)
        if single:
            v3 = v3[:, :, None]
        out = np.empty_like(v3)
        for j in range(k):
            out[:, j, :] = cholesky_solve(factors[j], v3[:, j, :])
        res = to_vector(out)
        return res[:, 0] if single else res

    return apply


def dense_pool_matrix(ctx: FisherContext, cap=512):
    """Dense oracle for the pool information matrix."""
    return _dense_sum(ctx, ctx.pool_idx, None, cap)


def dense_info_matrix(ctx: FisherContext, pool_weights, cap=512):
    """Dense oracle for labeled-plus-weighted-pool information."""
    pool_weights = np.asarray(pool_weights, dtype=np.float64)
    out = _dense_sum(ctx, ctx.pool_idx, pool_weights, cap)
    if ctx.labeled_idx.size:
        out += _dense_sum(ctx, ctx.labeled_idx, None, cap)
    return symmetrize(out)


def _dense_sum(ctx, idx, weights, cap):
    dt = ctx.stacked_dim
    if dt > cap:
        raise SizeCapError(f"stacked dim {dt} exceeds the oracle cap {cap}")
    out = np.zeros((dt, dt))
    for pos, i in enumerate(idx):
        h = dense_hessian(ctx.features[i], ctx.probs[i], cap=cap)
        out += h if weights is None else weights[pos] * h
    return out
