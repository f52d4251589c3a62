"""Dense kernels, trace-shift root finding, and the PCG driver."""

import numpy as np
import pytest

from firalkit.errors import BreakdownError, NotPositiveDefiniteError, SizeCapError
from firalkit.linalg import (
    LinearOperator,
    cholesky_factor,
    cholesky_solve,
    pcg_solve,
    rademacher,
    solve_trace_shift,
    spd_repair,
    sym_eigvals,
)


def random_spd(rng, d, cond_boost=0.1):
    g = rng.normal(size=(d, d + 3))
    return g @ g.T + cond_boost * np.eye(d)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky_factor(np.eye(3)), np.eye(3))

    def test_two_by_two_known_factor(self):
        # [[4,2],[2,3]] factors as [[2,0],[1,sqrt(2)]]; verified by multiplying back.
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        l = cholesky_factor(a)
        np.testing.assert_allclose(l, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-15)
        np.testing.assert_allclose(l @ l.T, a, rtol=1e-15)

    def test_indefinite_raises(self):
        # eigenvalues 3 and -1
        with pytest.raises(NotPositiveDefiniteError):
            cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_reconstruction_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = random_spd(rng, int(rng.integers(1, 12)))
            l = cholesky_factor(a)
            assert np.abs(l @ l.T - a).max() <= 1e-12 * np.abs(a).max()

    def test_spd_repair_fixes_singular(self):
        a = np.zeros((3, 3))
        repaired = spd_repair(a)
        cholesky_factor(repaired)  # must not raise


class TestCholeskySolve:
    def test_identity(self):
        l = cholesky_factor(np.eye(3))
        np.testing.assert_array_equal(cholesky_solve(l, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_diagonal(self):
        l = cholesky_factor(np.diag([4.0, 2.0]))
        np.testing.assert_allclose(cholesky_solve(l, [8.0, 2.0]), [2.0, 1.0], rtol=1e-15)

    def test_against_dense_inverse(self):
        rng = np.random.default_rng(1)
        a = random_spd(rng, 6)
        rhs = rng.normal(size=6)
        expected = np.linalg.inv(a) @ rhs
        got = cholesky_solve(cholesky_factor(a), rhs)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)

    def test_dimension_mismatch(self):
        l = cholesky_factor(np.eye(3))
        with pytest.raises(ValueError):
            cholesky_solve(l, np.ones(4))


class TestSymEigvals:
    def test_diagonal_sorted(self):
        np.testing.assert_allclose(sym_eigvals(np.diag([3.0, 1.0, 2.0])), [1.0, 2.0, 3.0])

    def test_two_by_two_characteristic_polynomial(self):
        # Roots of lam^2 - (a+c) lam + (ac - b^2) for [[2,1],[1,2]].
        roots = np.sort(np.roots([1.0, -4.0, 3.0]))
        np.testing.assert_allclose(sym_eigvals(np.array([[2.0, 1.0], [1.0, 2.0]])), roots, rtol=1e-12)

    def test_identity(self):
        np.testing.assert_allclose(sym_eigvals(np.eye(5)), np.ones(5))

    def test_trace_and_determinant(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = random_spd(rng, int(rng.integers(2, 10)))
            ev = sym_eigvals(a)
            assert abs(ev.sum() - np.trace(a)) <= 1e-10 * abs(np.trace(a))
            det_chol = np.prod(np.diag(cholesky_factor(a))) ** 2
            assert abs(np.prod(ev) - det_chol) <= 1e-8 * det_chol

    def test_size_cap(self):
        with pytest.raises(SizeCapError):
            sym_eigvals(np.eye(5), cap=4)


class TestRademacher:
    def test_deterministic(self):
        np.testing.assert_array_equal(rademacher(4, 2, seed=7), rademacher(4, 2, seed=7))

    def test_entries_are_signs(self):
        m = rademacher(17, 5, seed=3)
        np.testing.assert_array_equal(np.abs(m), np.ones_like(m))

    def test_mean_near_zero(self):
        # 4 sigma = 4 / sqrt(1000) ~ 0.126; the stated bound is 0.1.
        m = rademacher(1000, 1, seed=11)
        assert abs(m.mean()) < 0.1


class TestTraceShift:
    def test_zero_spectrum(self):
        # 4 / nu^2 = 1
        assert solve_trace_shift(np.zeros(4), eta=5.0) == 2.0
        assert solve_trace_shift(np.zeros(1), eta=0.3) == 1.0

    def test_residual_at_root(self):
        lam = np.array([1.0, 2.0])
        nu = solve_trace_shift(lam, eta=1.0)
        assert abs(np.sum((nu + lam) ** -2.0) - 1.0) <= 1e-12

    def test_negative_root(self):
        # Large eta*lam pushes the unique root below zero.
        lam = np.array([5.0, 10.0])
        nu = solve_trace_shift(lam, eta=1.0)
        assert nu < 0.0
        assert abs(np.sum((nu + lam) ** -2.0) - 1.0) <= 1e-12

    def test_monotone_in_each_eigenvalue(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            lam = rng.uniform(0.0, 3.0, size=6)
            eta = float(rng.uniform(0.2, 2.0))
            nu = solve_trace_shift(lam, eta)
            bumped = lam.copy()
            j = int(rng.integers(6))
            bumped[j] += rng.uniform(0.1, 1.0)
            assert solve_trace_shift(bumped, eta) <= nu + 1e-12


def _identity_op(dim):
    return LinearOperator(dim, lambda v: v.copy())


class TestPcg:
    def test_identity_operator_one_iteration(self):
        rhs = np.array([1.0, -2.0, 0.5])
        res = pcg_solve(_identity_op(3), rhs, tol=0.1)
        np.testing.assert_allclose(res.solution, rhs, rtol=1e-15)
        assert list(res.iterations) == [1]
        assert res.converged.all()

    def test_zero_rhs_zero_iterations(self):
        rhs = np.zeros((4, 2))
        rhs[:, 1] = [1.0, 0.0, 0.0, 0.0]
        res = pcg_solve(_identity_op(4), rhs, tol=0.1)
        np.testing.assert_array_equal(res.solution[:, 0], np.zeros(4))
        assert res.iterations[0] == 0
        assert res.converged.all()

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(5)
        a = random_spd(rng, 12)
        rhs = rng.normal(size=12)
        res = pcg_solve(LinearOperator(12, lambda v: a @ v), rhs, tol=1e-8, max_iter=500)
        np.testing.assert_allclose(res.solution, np.linalg.solve(a, rhs), rtol=1e-6, atol=1e-9)

    def test_tight_tolerance_componentwise(self):
        # Solutions built with O(1) components so componentwise-relative is meaningful.
        rng = np.random.default_rng(6)
        for _ in range(5):
            d = int(rng.integers(5, 51))
            q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            a = (q * rng.uniform(1.0, 10.0, size=d)) @ q.T
            a = 0.5 * (a + a.T)
            x_true = rng.uniform(0.5, 1.5, size=d) * rng.choice([-1.0, 1.0], size=d)
            rhs = a @ x_true
            res = pcg_solve(LinearOperator(d, lambda v, a=a: a @ v), rhs, tol=1e-10, max_iter=2000)
            ref = np.linalg.solve(a, rhs)
            np.testing.assert_allclose(res.solution, ref, rtol=1e-8)
            assert res.converged.all()
            assert (res.relative_residual <= 1e-10).all()

    def test_breakdown_on_indefinite(self):
        a = np.diag([1.0, -1.0])
        with pytest.raises(BreakdownError):
            pcg_solve(LinearOperator(2, lambda v: a @ v), np.array([0.3, 1.0]), tol=1e-6)

    def test_max_iter_flag(self):
        rng = np.random.default_rng(7)
        a = random_spd(rng, 30, cond_boost=1e-6)
        rhs = rng.normal(size=30)
        res = pcg_solve(LinearOperator(30, lambda v: a @ v), rhs, tol=1e-12, max_iter=2)
        assert not res.converged.all()
        assert res.iterations.max() == 2

    def test_operator_dim_check(self):
        with pytest.raises(ValueError):
            _identity_op(3)(np.ones(4))

    def test_linearity_and_symmetry_of_operator_contract(self):
        rng = np.random.default_rng(8)
        a = random_spd(rng, 9)
        op = LinearOperator(9, lambda v: a @ v)
        u, v = rng.normal(size=9), rng.normal(size=9)
        np.testing.assert_allclose(op(2.0 * u + 3.0 * v), 2.0 * op(u) + 3.0 * op(v), rtol=1e-12)
        assert abs(u @ op(v) - op(u) @ v) <= 1e-12 * abs(u @ op(v))
