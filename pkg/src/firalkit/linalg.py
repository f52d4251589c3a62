"""Dense small-matrix kernels, the preconditioned CG driver, and probe sampling.

All routines operate on float64 numpy arrays.  Per-class blocks are small
(d x d), so factorizations are dense; the only iterative piece is the
conjugate gradient driver, which accepts matrix right-hand sides and runs
the standard single-vector recurrence independently on every column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    BreakdownError,
    ConvergenceError,
    NotPositiveDefiniteError,
    SizeCapError,
)

__all__ = [
    "LinearOperator",
    "PcgResult",
    "cholesky_factor",
    "cholesky_solve",
    "pcg_solve",
    "rademacher",
    "ridge_cholesky",
    "solve_trace_shift",
    "spd_repair",
    "sym_eigvals",
    "symmetrize",
]


def _as_square(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def symmetrize(a):
    """Return (a + a.T) / 2, which is exactly symmetric in floating point."""
    a = _as_square(a)
    return 0.5 * (a + a.T)


def _require_symmetric(a, name="a"):
    scale = float(np.abs(a).max()) if a.size else 0.0
    if scale == 0.0:
        return
    if float(np.abs(a - a.T).max()) > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")


def cholesky_factor(a):
    """Lower-triangular L with L @ L.T equal to ``a``.

    Raises
    ------
    NotPositiveDefiniteError
        When a pivot is not positive.  This is how a near-singular
        per-class block announces itself; callers that can tolerate it
        retry with a ridge (see :func:`ridge_cholesky`).
    """
    a = _as_square(a)
    _require_symmetric(a)
    try:
        l_factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix of dim {a.shape[0]} is not positive definite") from exc
    if not np.isfinite(l_factor).all():
        # LAPACK passes NaN/inf through instead of failing a pivot.
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    return l_factor


def spd_repair(a):
    """Return ``a`` unchanged if SPD, else with a trace-scaled ridge added.

    The ridge is eps * I with eps = 1e-8 * trace(a) / d, enough to repair
    matrices that are singular only through accumulated roundoff or a
    tiny labeled set.  Raises NotPositiveDefiniteError if even the
    ridged matrix fails to factor.
    """
    a = _as_square(a)
    try:
        cholesky_factor(a)
        return a
    except NotPositiveDefiniteError:
        d = a.shape[0]
        eps = 1e-8 * float(np.trace(a)) / d
        if eps <= 0.0:
            eps = 1e-12
        repaired = symmetrize(a) + eps * np.eye(d)
        cholesky_factor(repaired)
        return repaired


def ridge_cholesky(a):
    """Cholesky factor of ``a``, retrying once with the standard ridge."""
    return cholesky_factor(spd_repair(a))


def cholesky_solve(l_factor, rhs):
    """Solve A x = rhs given the lower Cholesky factor of A.

    ``rhs`` may be a vector or a matrix of column right-hand sides.
    """
    l_factor = np.asarray(l_factor, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if l_factor.ndim != 2 or l_factor.shape[0] != l_factor.shape[1]:
        raise ValueError("factor must be a square lower-triangular matrix")
    if rhs.shape[0] != l_factor.shape[0]:
        raise ValueError(
            f"rhs length {rhs.shape[0]} does not match factor dim {l_factor.shape[0]}"
        )
    return scipy.linalg.cho_solve((l_factor, True), rhs, check_finite=False)


def sym_eigvals(a, cap=4096):
    """Eigenvalues of a symmetric matrix, sorted ascending."""
    a = _as_square(a)
    _require_symmetric(a)
    if a.shape[0] > cap:
        raise SizeCapError(f"matrix dim {a.shape[0]} exceeds the eigenvalue cap {cap}")
    try:
        return np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("symmetric eigenvalue iteration failed") from exc


def rademacher(dim, cols, seed=None, rng=None):
    """A dim x cols matrix of independent +/-1 entries as float64.

    Deterministic for a fixed ``seed``; pass ``rng`` instead to draw from
    an existing generator stream.
    """
    if dim < 1 or cols < 1:
        raise ValueError("dim and cols must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    return 2.0 * rng.integers(0, 2, size=(dim, cols)).astype(np.float64) - 1.0


def solve_trace_shift(eigvals, eta):
    """Find the unique nu with sum_j (nu + eta * lam_j)^(-2) = 1.

    ``eigvals`` is the full spectrum (all class blocks concatenated) and
    must be nonnegative up to roundoff; tiny negatives are clipped.  The
    left-hand side is strictly decreasing in nu on (-eta*min(lam), inf),
    from +inf to 0, so the root exists and is unique.  Note the root is
    negative whenever eta * lam is large for every j.
    """
    lam = np.maximum(np.asarray(eigvals, dtype=np.float64).ravel(), 0.0)
    if lam.size == 0:
        raise ValueError("eigvals must be nonempty")
    if eta <= 0:
        raise ValueError("eta must be positive")
    m = lam.size
    lo_asym = -eta * float(lam.min())
    lam_max = float(lam.max())

    # Uniform spectrum has the closed form nu = sqrt(m) - eta * lam.
    if float(lam.min()) == lam_max:
        return float(np.sqrt(m)) - eta * lam_max

    def f(nu):
        return float(np.sum((nu + eta * lam) ** -2.0)) - 1.0

    # hi: each term <= 1/m there, so f(hi) <= 0.
    hi = float(np.sqrt(m)) + eta * lam_max
    # lo: walk toward the asymptote until f >= 0 (f -> +inf there).
    gap = 0.5 * (hi - lo_asym)
    lo = lo_asym + gap
    while f(lo) < 0.0:
        gap *= 0.5
        lo = lo_asym + gap

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) >= 0.0:
            lo = mid
        else:
            hi = mid

    # Newton polish; f' = -2 sum (nu + eta lam)^-3.
    nu = 0.5 * (lo + hi)
    for _ in range(4):
        terms = nu + eta * lam
        if np.any(terms <= 0.0):
            break
        resid = float(np.sum(terms**-2.0)) - 1.0
        deriv = -2.0 * float(np.sum(terms**-3.0))
        step = resid / deriv
        if not np.isfinite(step):
            break
        nu_new = nu - step
        if nu_new <= lo_asym:
            break
        nu = nu_new
        if abs(resid) < 1e-14:
            break
    return float(nu)


class LinearOperator:
    """A symmetric operator on stacked per-class vectors, applied matrix-free.

    ``matvec`` must accept a vector of length ``dim`` or a matrix with
    ``dim`` rows and return the same shape.
    """

    def __init__(self, dim, matvec):
        self.dim = int(dim)
        self._matvec = matvec

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise ValueError(f"operand has leading dim {v.shape[0]}, expected {self.dim}")
        return self._matvec(v)


@dataclass
class PcgResult:
    """Outcome of a (possibly multi-column) PCG solve.

    ``iterations``, ``relative_residual`` and ``converged`` have one entry
    per right-hand-side column.  ``relative_residual`` is the true residual
    norm over the rhs norm, not the recurrence estimate.
    """

    solution: np.ndarray
    iterations: np.ndarray
    relative_residual: np.ndarray
    converged: np.ndarray


def _col_dots(a, b):
    return np.einsum("ij,ij->j", a, b)


def pcg_solve(op, rhs, tol=0.1, max_iter=500, precond=None):
    """Solve op(x) = rhs per column by preconditioned conjugate gradients.

    Each column runs the standard Hestenes-Stiefel recurrence
    independently (the columns are merely advanced in lockstep).  A column
    stops once its true relative residual is at or below ``tol``; if the
    recurrence residual drifts, the solve restarts from the recomputed
    residual, so the reported residual honors the tolerance whenever
    ``converged`` is set.

    Parameters
    ----------
    op : LinearOperator or callable
        SPD operator accepting a matrix of column vectors.
    rhs : array, shape (dim,) or (dim, s)
    tol : float
        Relative residual target, in (0, 1).
    precond : callable, optional
        Applies an SPD approximate inverse to a matrix of columns.

    Raises
    ------
    BreakdownError
        If p'Ap <= 0 is encountered, i.e. the operator is not SPD.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    apply_op = op if callable(op) else op.__call__
    vector_input = np.asarray(rhs, dtype=np.float64).ndim == 1
    b = np.asarray(rhs, dtype=np.float64)
    if vector_input:
        b = b[:, None]
    apply_m = precond if precond is not None else (lambda r: r)

    dim, ncols = b.shape
    bnorm = np.linalg.norm(b, axis=0)
    x = np.zeros_like(b)
    iters = np.zeros(ncols, dtype=np.int64)
    relres = np.zeros(ncols, dtype=np.float64)
    converged = bnorm == 0.0  # zero rhs: x = 0 in zero iterations

    while True:
        work = np.flatnonzero(~converged & (iters < max_iter))
        if work.size == 0:
            break
        _cg_cycle(apply_op, apply_m, b, x, work, iters, tol, bnorm, max_iter)
        # Verify stopped columns against the true residual.
        true_norm = np.linalg.norm(b[:, work] - apply_op(x[:, work]), axis=0)
        ok = true_norm <= tol * bnorm[work]
        converged[work] = ok
        relres[work] = true_norm / bnorm[work]
        # Columns that failed verification but still have budget loop again.

    solution = x[:, 0] if vector_input else x
    return PcgResult(solution, iters, relres, converged)


def _cg_cycle(apply_op, apply_m, b, x, cols, iters, tol, bnorm, max_iter):
    """Advance the recurrence on ``cols`` until each hits tol or max_iter."""
    live = cols.copy()
    r = b[:, live] - apply_op(x[:, live])
    z = apply_m(r)
    p = z.copy()
    rz = _col_dots(r, z)
    while live.size:
        ap = apply_op(p)
        pap = _col_dots(p, ap)
        if np.any(pap <= 0.0):
            raise BreakdownError("p'Ap <= 0 in CG; operator is not positive definite")
        alpha = rz / pap
        x[:, live] += alpha * p
        r = r - alpha * ap
        iters[live] += 1
        rnorm = np.linalg.norm(r, axis=0)
        leave = (rnorm <= tol * bnorm[live]) | (iters[live] >= max_iter)
        if np.any(leave):
            keep = ~leave
            live = live[keep]
            if live.size == 0:
                break
            r = r[:, keep]
            p = p[:, keep]
            rz = rz[keep]
        z = apply_m(r)
        rz_next = _col_dots(r, z)
        p = z + (rz_next / rz) * p
        rz = rz_next
