import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onlinehuber.errors import DegenerateScaleError, InvalidInputError, SingularMatrixError
from onlinehuber.huber import (HuberConfig, fit_huber, huber_objective, irls_weight, mad_scale,
                               ols, psi, rho)
from onlinehuber.simgen import SimSpec, gen_batch

K = 1.345


def golden_section(f, lo, hi, tol=1e-10):
    g = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if f(c) < f(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    return (a + b) / 2


class TestLoss:
    def test_rho_zero(self):
        assert rho(0.0, K) == 0.0

    def test_rho_continuous_at_k(self):
        k = 1.7
        inner = 0.5 * k * k
        outer = k * k - 0.5 * k * k
        assert rho(k, k) == pytest.approx(inner)
        assert inner == pytest.approx(outer)
        assert rho(np.nextafter(k, 0), k) == pytest.approx(inner)

    def test_rho_linear_branch(self):
        assert rho(10.0, 1.0) == 9.5
        assert rho(-10.0, 1.0) == 9.5

    def test_psi_values(self):
        assert psi(0.0, K) == 0.0
        assert psi(2 * K, K) == K
        assert psi(-2 * K, K) == -K

    @pytest.mark.parametrize("u", [-3.0, -0.4, 0.7, 5.0])
    def test_psi_is_central_difference_of_rho(self, u):
        h = 1e-6
        fd = (rho(u + h, K) - rho(u - h, K)) / (2 * h)
        assert abs(psi(u, K) - fd) <= 1e-6

    def test_irls_weight(self):
        assert irls_weight(0.0, K) == 1.0
        assert irls_weight(K / 2, K) == 1.0
        assert irls_weight(4 * K, K) == pytest.approx(0.25, rel=1e-15)
        assert irls_weight(-4 * K, K) == pytest.approx(0.25, rel=1e-15)

    def test_weight_times_u_is_psi(self):
        u = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(irls_weight(u, K) * u, psi(u, K), atol=1e-15)


class TestMadScale:
    def test_three_points(self):
        assert mad_scale([-1.0, 0.0, 1.0]) == pytest.approx(1 / 0.6745)

    def test_symmetric(self):
        c = 2.5
        assert mad_scale([-c, c, -c, c]) == pytest.approx(c / 0.6745)

    def test_gaussian_consistency(self):
        z = np.random.default_rng(5).standard_normal(100_000)
        assert abs(mad_scale(z) - 1.0) < 0.02

    def test_zero_mad(self):
        with pytest.raises(DegenerateScaleError):
            mad_scale([1.0, 1.0, 1.0, 5.0])

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            mad_scale([1.0])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(k=0), dict(k=-1), dict(rel_tol=0), dict(rel_tol=1),
                                    dict(max_iter=0), dict(scale=0.0), dict(k_mode="x")])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            HuberConfig(**kw)

    def test_threshold(self):
        assert HuberConfig(k=2.0).threshold(3.0) == 6.0
        assert HuberConfig(k=2.0, k_mode="fixed").threshold(3.0) == 2.0


def _data(seed=0, n=200, p=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ np.arange(1, p + 1) + rng.standard_t(3, n)
    return X, y


class TestFitHuber:
    def test_noiseless_recovers_theta(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 4))
        theta = np.array([0.3, -7.0, 2.0, 11.0])
        fit = fit_huber(X, X @ theta)
        np.testing.assert_allclose(fit.coef, theta, atol=1e-10)
        assert fit.converged and fit.iterations <= 2

    def test_intercept_only_matches_golden_section(self):
        y = np.array([0.0, 0.0, 0.0, 0.0, 100.0])
        X = np.ones((5, 1))
        cfg = HuberConfig(k=1.0, k_mode="fixed", scale=1.0)
        fit = fit_huber(X, y, cfg)
        target = golden_section(lambda t: np.sum(rho(y - t, 1.0)), -10, 110)
        assert fit.converged
        assert abs(fit.coef[0] - target) <= 1e-6
        assert abs(target - 0.25) <= 1e-6

    def test_huge_k_is_ols(self):
        X, y = _data(1)
        fit = fit_huber(X, y, HuberConfig(k=1e8, k_mode="fixed", scale=1.0))
        np.testing.assert_allclose(fit.coef, ols(X, y), atol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(10, 80), st.integers(1, 5))
    def test_huge_k_is_ols_property(self, seed, n, p):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n + p, p))
        y = rng.standard_normal(n + p) * 3
        fit = fit_huber(X, y, HuberConfig(k=1e8, k_mode="fixed", scale=1.0))
        closed = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(fit.coef, closed, atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_descent_with_fixed_scale(self, seed):
        X, y = _data(seed)
        cfg = HuberConfig(k=1.0, k_mode="scaled", scale=1.5)
        k = cfg.threshold(1.5)
        objs = [huber_objective(X, y, ols(X, y), k)]
        fit_huber(X, y, cfg, callback=lambda it, c, s, kk: objs.append(huber_objective(X, y, c, k)))
        assert len(objs) > 2
        for a, b in zip(objs, objs[1:]):
            assert b <= a * (1 + 1e-12)

    def test_minimizes_objective_locally(self):
        X, y = _data(9)
        cfg = HuberConfig(k=1.2, k_mode="fixed", scale=1.0)
        fit = fit_huber(X, y, cfg)
        base = huber_objective(X, y, fit.coef, 1.2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = rng.standard_normal(X.shape[1]) * 1e-3
            assert huber_objective(X, y, fit.coef + d, 1.2) >= base - 1e-15

    def test_equivariance(self):
        X, y = _data(4)
        delta = np.array([0.5, -2.0, 3.0])
        a = fit_huber(X, y)
        b = fit_huber(X, y + X @ delta)
        np.testing.assert_allclose(b.coef, a.coef + delta, atol=1e-8)
        assert b.scale == pytest.approx(a.scale, rel=1e-8)

    def test_robust_to_case3_outliers(self):
        wins = 0
        for r in range(200):
            d = gen_batch(SimSpec(n_t=1000, b=1, error_case=3, seed=77, replication=r), 1)
            th = np.array([1.0, -1.0, 2.0, -2.0])
            wins += np.linalg.norm(fit_huber(d.X, d.y).coef - th) < np.linalg.norm(ols(d.X, d.y) - th)
        assert wins >= 190

    def test_nonconvergence_is_reported(self):
        X, y = _data(3)
        fit = fit_huber(X, y, HuberConfig(max_iter=1))
        assert fit.iterations == 1 and not fit.converged

    def test_converged_flag_respects_tolerance(self):
        X, y = _data(6)
        seen = []
        cfg = HuberConfig(rel_tol=1e-6)
        fit = fit_huber(X, y, cfg, callback=lambda it, c, s, k: seen.append(c.copy()))
        assert fit.converged and fit.iterations <= cfg.max_iter
        last = np.max(np.abs(seen[-1] - seen[-2]) / np.maximum(1, np.abs(seen[-1])))
        assert last <= 1e-6

    def test_collinear_design(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(30)
        with pytest.raises(SingularMatrixError):
            fit_huber(np.column_stack([x, 2 * x]), rng.standard_normal(30))

    def test_too_few_rows(self):
        with pytest.raises(InvalidInputError):
            fit_huber(np.ones((2, 2)), [1.0, 2.0])

    def test_degenerate_scale(self):
        X = np.ones((6, 1))
        y = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 9.0])
        # five of six residuals equal after the first step: MAD collapses to zero
        with pytest.raises(DegenerateScaleError):
            fit_huber(X, y, init=[1.0])
