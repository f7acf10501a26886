import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_spd
from sqnls.errors import DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor
from sqnls.numerics import chol_downdate, chol_update, cholesky, qr_factor_tall, solve_triangular


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def assert_valid_factor(R):
    assert np.all(np.tril(R, -1) == 0.0)
    assert np.all(np.diag(R) > 0)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_scalar(self):
        np.testing.assert_array_equal(cholesky([[4.0]]), [[2.0]])

    def test_random_spd_reconstructs(self):
        A = random_spd(np.random.default_rng(0), 8)
        R = cholesky(A)
        assert_valid_factor(R)
        assert rel(R.T @ R, A) <= 1e-12

    def test_matches_numpy(self):
        A = random_spd(np.random.default_rng(1), 6)
        np.testing.assert_allclose(cholesky(A), np.linalg.cholesky(A).T, rtol=1e-12, atol=1e-12)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, -1.0]))

    def test_tiny_pivot_relative_to_trace_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1e6, 1e-10]))

    def test_scale_invariance(self):
        A = np.diag([1e-20, 2e-20])
        np.testing.assert_allclose(cholesky(A), np.diag(np.sqrt([1e-20, 2e-20])))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_empty(self):
        assert cholesky(np.zeros((0, 0))).shape == (0, 0)


class TestQR:
    def test_diagonal_case(self):
        M = np.vstack([2.0 * np.eye(2), np.zeros((3, 2))])
        np.testing.assert_allclose(qr_factor_tall(M), 2.0 * np.eye(2))

    def test_single_column(self):
        np.testing.assert_allclose(qr_factor_tall(np.array([[1.0], [1.0]])), [[math.sqrt(2)]])

    def test_gram_matches(self):
        M = np.random.default_rng(2).standard_normal((10, 3))
        R = qr_factor_tall(M)
        assert_valid_factor(R)
        assert rel(R.T @ R, M.T @ M) <= 1e-12

    def test_rank_deficient(self):
        M = np.ones((5, 2))
        with pytest.raises(RankDeficient):
            qr_factor_tall(M)

    def test_wide_rejected(self):
        with pytest.raises(ValueError):
            qr_factor_tall(np.ones((2, 3)))

    @pytest.mark.parametrize("cond", [1e2, 1e4, 1e6])
    def test_agrees_with_cholesky_of_gram(self, cond):
        rng = np.random.default_rng(int(cond))
        U, _ = np.linalg.qr(rng.standard_normal((30, 8)))
        V, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        sv = np.logspace(0, math.log10(cond), 8)
        M = (U * sv) @ V.T
        assert rel(qr_factor_tall(M), cholesky(M.T @ M)) <= 1e-8


class TestUpdateDowndate:
    def test_scalar_update(self):
        np.testing.assert_allclose(chol_update([[1.0]], [1.0]), [[math.sqrt(2)]])

    def test_zero_vector(self):
        R = cholesky(random_spd(np.random.default_rng(3), 4))
        np.testing.assert_array_equal(chol_update(R, np.zeros(4)), R)

    def test_random_update(self):
        rng = np.random.default_rng(4)
        R = cholesky(random_spd(rng, 6))
        v = rng.standard_normal(6)
        R2 = chol_update(R, v)
        assert_valid_factor(R2)
        A = R.T @ R
        assert np.linalg.norm(R2.T @ R2 - (A + np.outer(v, v))) <= 1e-12 * np.linalg.norm(A)

    def test_scalar_downdate(self):
        np.testing.assert_allclose(chol_downdate([[math.sqrt(2)]], [1.0]), [[1.0]])

    def test_infeasible_downdate(self):
        with pytest.raises(DowndateFailure):
            chol_downdate([[1.0]], [2.0])

    def test_downdate_does_not_modify_input(self):
        R = np.array([[1.0, 0.5], [0.0, 1.0]])
        before = R.copy()
        with pytest.raises(DowndateFailure):
            chol_downdate(R, np.array([0.5, 5.0]))
        np.testing.assert_array_equal(R, before)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            chol_update(np.eye(2), np.ones(3))

    @settings(max_examples=60, deadline=None)
    @given(m=st.integers(1, 32), seed=st.integers(0, 2**32 - 1),
           logcond=st.floats(0.0, 6.0))
    def test_round_trip(self, m, seed, logcond):
        rng = np.random.default_rng(seed)
        R = cholesky(random_spd(rng, m, cond=10**logcond))
        v = rng.standard_normal(m)
        back = chol_downdate(chol_update(R, v), v)
        assert_valid_factor(back)
        assert rel(back, R) <= 1e-10


class TestSolve:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(solve_triangular(np.eye(3), b), b)

    def test_scalar(self):
        np.testing.assert_allclose(solve_triangular([[2.0]], [6.0]), [3.0])

    @pytest.mark.parametrize("transpose", [False, True])
    def test_residual(self, transpose):
        rng = np.random.default_rng(5)
        R = cholesky(random_spd(rng, 7))
        b = rng.standard_normal(7)
        x = solve_triangular(R, b, transpose=transpose)
        A = R.T if transpose else R
        assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)

    def test_singular(self):
        with pytest.raises(SingularFactor):
            solve_triangular(np.diag([1.0, 0.0]), np.ones(2))

    def test_empty_factor(self):
        assert solve_triangular(np.zeros((0, 0)), np.zeros(0)).shape == (0,)
