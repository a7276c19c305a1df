import numpy as np
import pytest

from doubleweight import linalg
from doubleweight.exceptions import DegenerateFitError, NotPositiveDefiniteError


class TestSolveSpd:
    def test_identity_system(self):
        x = linalg.solve_spd(np.eye(2), np.array([3.0, -1.0]))
        assert np.allclose(x, [3.0, -1.0], atol=0)

    def test_diagonal_solve(self):
        a = np.array([[4.0, 0.0], [0.0, 9.0]])
        x = linalg.solve_spd(a, np.array([8.0, 27.0]))
        assert np.allclose(x, [2.0, 3.0], atol=0)

    def test_hand_inverted_2x2(self):
        # inverse of [[2,1],[1,2]] is (1/3)[[2,-1],[-1,2]]; b=(3,3) -> (1,1)
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        x = linalg.solve_spd(a, np.array([3.0, 3.0]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-14)

    def test_not_positive_definite(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(NotPositiveDefiniteError):
            linalg.solve_spd(a, np.array([1.0, 1.0]))

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            linalg.solve_spd(a, np.array([1.0, 1.0]))

    def test_nan_rejected(self):
        a = np.array([[1.0, np.nan], [np.nan, 1.0]])
        with pytest.raises(ValueError):
            linalg.solve_spd(a, np.array([1.0, 1.0]))

    def test_random_spd_roundtrip(self):
        rng = np.random.default_rng(0)
        for dim in (1, 2, 5, 10, 20):
            m = rng.normal(size=(dim + 5, dim))
            a = m.T @ m
            b = rng.normal(size=dim)
            x = linalg.solve_spd(a, b)
            assert np.max(np.abs(a @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))


class TestWeightedGram:
    def test_ones_column(self):
        xtwx, xtwy = linalg.weighted_gram(
            np.ones((3, 1)), np.ones(3), np.array([1.0, 2.0, 3.0])
        )
        assert np.allclose(xtwx, [[3.0]], atol=0)
        assert np.allclose(xtwy, [6.0], atol=0)

    def test_zero_weights(self):
        xtwx, xtwy = linalg.weighted_gram(
            np.ones((3, 2)), np.zeros(3), np.array([1.0, 2.0, 3.0])
        )
        assert np.all(xtwx == 0)
        assert np.all(xtwy == 0)

    def test_direct_summation_oracle(self):
        x = np.array([[1.0, 0.0], [1.0, 1.0]])
        w = np.array([2.0, 1.0])
        y = np.array([1.0, 3.0])
        xtwx, xtwy = linalg.weighted_gram(x, w, y)
        assert np.allclose(xtwx, [[3.0, 1.0], [1.0, 1.0]])
        assert np.allclose(xtwy, [5.0, 3.0])

    def test_bit_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 7)) * 100
        w = rng.random(40)
        xtwx, _ = linalg.weighted_gram(x, w, np.zeros(40))
        assert np.array_equal(xtwx, xtwx.T)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            linalg.weighted_gram(np.ones((2, 1)), np.array([1.0, -1.0]), np.ones(2))


class TestSolveLeastSquares:
    def test_weighted_mean(self):
        beta, dropped = linalg.solve_least_squares(
            np.ones((3, 1)), np.ones(3), np.array([1.0, 2.0, 3.0])
        )
        assert beta == pytest.approx([2.0])
        assert dropped == ()

    def test_exact_line(self):
        x = np.column_stack([np.ones(4), np.arange(4.0)])
        y = 2.0 + 3.0 * np.arange(4.0)
        beta, _ = linalg.solve_least_squares(x, np.ones(4), y)
        assert np.allclose(beta, [2.0, 3.0], atol=1e-12)
        assert np.allclose(x @ beta, y, atol=1e-12)

    def test_duplicated_row_equals_double_weight(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        w = np.ones(6)
        w[0] = 2.0
        beta_w, _ = linalg.solve_least_squares(x, w, y)
        x2 = np.vstack([x, x[:1]])
        y2 = np.append(y, y[0])
        beta_dup, _ = linalg.solve_least_squares(x2, np.ones(7), y2)
        assert np.allclose(beta_w, beta_dup, atol=1e-10)

    def test_all_zero_weights(self):
        with pytest.raises(DegenerateFitError):
            linalg.solve_least_squares(np.ones((3, 1)), np.zeros(3), np.ones(3))

    def test_collinear_drops_trailing(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(20, 2))
        x = np.column_stack([base, base[:, 0] + base[:, 1]])
        y = rng.normal(size=20)
        beta, dropped = linalg.solve_least_squares(x, np.ones(20), y)
        assert dropped == (2,)
        assert beta[2] == 0.0

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        w = rng.random(30)
        b1, _ = linalg.solve_least_squares(x, w, y)
        b2, _ = linalg.solve_least_squares(x, w * 37.5, y)
        assert np.max(np.abs(b1 - b2)) <= 1e-12 * max(1, np.max(np.abs(b1)))
