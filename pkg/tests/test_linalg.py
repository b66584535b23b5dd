import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from onlinehuber.errors import DegenerateWeightsError, InvalidInputError, SingularMatrixError
from onlinehuber.linalg import gram, inv_spd, solve_spd, weighted_gram_and_moment


def loop_gram(X, w=None):
    n, p = X.shape
    w = np.ones(n) if w is None else w
    G = np.zeros((p, p))
    for i in range(n):
        for j in range(p):
            for k in range(p):
                G[j, k] += w[i] * X[i, j] * X[i, k]
    return G


class TestGram:
    def test_identity(self):
        np.testing.assert_array_equal(gram([[1, 0], [0, 1]]), np.eye(2))

    def test_single_row(self):
        np.testing.assert_array_equal(gram([[1, 2]]), [[1, 2], [2, 4]])

    def test_integer_matrix_against_loop(self):
        X = np.random.default_rng(3).integers(-9, 10, (3, 2)).astype(float)
        np.testing.assert_array_equal(gram(X), loop_gram(X))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            gram([[1.0, np.nan]])

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.tuples(st.integers(1, 200), st.integers(1, 6)),
                  elements=st.floats(-10, 10)),
           st.integers(0, 200))
    def test_concat_additivity_and_symmetry(self, X, cut):
        cut = min(cut, X.shape[0])
        G = gram(X)
        assert np.array_equal(G, G.T)
        if 0 < cut < X.shape[0]:
            parts = gram(X[:cut]) + gram(X[cut:])
            scale = max(1.0, np.abs(G).max())
            assert np.abs(parts - G).max() <= 1e-12 * scale


class TestSolveSpd:
    def test_identity(self):
        b = np.array([3.0, -1.0, 2.5])
        np.testing.assert_allclose(solve_spd(np.eye(3), b), b)

    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd([[4, 0], [0, 9]], [8, 27]), [2, 3])

    def test_two_by_two_multiplies_back(self):
        A = np.array([[2.0, 1.0], [1.0, 2.0]])
        x = solve_spd(A, [3, 3])
        np.testing.assert_allclose(x, [1, 1], atol=1e-15)
        np.testing.assert_allclose(A @ x, [3, 3], atol=1e-14)

    def test_singular_reports_pivot(self):
        A = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(SingularMatrixError) as exc:
            solve_spd(A, [1, 1, 1])
        assert exc.value.pivot_index == 1

    def test_indefinite_reports_pivot(self):
        with pytest.raises(SingularMatrixError) as exc:
            solve_spd([[1.0, 2.0], [2.0, 1.0]], [1, 1])
        assert exc.value.pivot_index == 1

    def test_tiny_pivot_below_threshold(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
        with pytest.raises(SingularMatrixError):
            solve_spd(A, [1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_recovers_x_for_well_conditioned(self, p, seed):
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
        eig = np.exp(rng.uniform(0, np.log(1e6), p))
        eig[0] = 1.0
        A = (Q * eig) @ Q.T
        A = (A + A.T) / 2
        x = rng.standard_normal(p)
        got = solve_spd(A, A @ x)
        assert np.linalg.norm(got - x) <= 1e-10 * max(np.linalg.norm(x), 1e-300) + 1e-14

    def test_inverse(self):
        A = np.array([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(inv_spd(A) @ A, np.eye(2), atol=1e-15)


class TestWeightedGram:
    def test_unit_weights_reduce_to_gram(self):
        rng = np.random.default_rng(0)
        X, y = rng.standard_normal((6, 3)), rng.standard_normal(6)
        G, m = weighted_gram_and_moment(X, y, np.ones(6))
        np.testing.assert_allclose(G, gram(X), rtol=1e-15)
        np.testing.assert_allclose(m, X.T @ y, rtol=1e-15)

    def test_one_hot(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        y = np.array([7.0, 8.0, 9.0])
        G, m = weighted_gram_and_moment(X, y, [1, 0, 0])
        np.testing.assert_array_equal(G, np.outer(X[0], X[0]))
        np.testing.assert_array_equal(m, X[0] * 7.0)

    def test_random_against_loop(self):
        rng = np.random.default_rng(11)
        X, y, w = rng.standard_normal((4, 2)), rng.standard_normal(4), rng.uniform(0, 2, 4)
        G, m = weighted_gram_and_moment(X, y, w)
        np.testing.assert_allclose(G, loop_gram(X, w), rtol=1e-14)
        np.testing.assert_allclose(m, sum(w[i] * y[i] * X[i] for i in range(4)), rtol=1e-14)

    def test_zero_weights(self):
        with pytest.raises(DegenerateWeightsError):
            weighted_gram_and_moment(np.eye(2), [1, 1], [0, 0])

    def test_negative_weights(self):
        with pytest.raises(InvalidInputError):
            weighted_gram_and_moment(np.eye(2), [1, 1], [1, -1])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            weighted_gram_and_moment(np.eye(2), [1, 1, 1], [1, 1])
