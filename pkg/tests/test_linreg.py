import numpy as np
import pytest

from widebnn.errors import DimensionMismatch
from widebnn.linreg import (
    LinRegProblem,
    fit_loglog_slope,
    linreg_posterior,
    linreg_predictive,
    ntk_rescale,
    rate_sweep,
    uniform_design_rule,
)
from widebnn.metrics import GaussianDist, kl_gaussian, w2_gaussian
from widebnn.numkit import GaussianStream


def toy_problem(m=5, n=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    return LinRegProblem(x, y)


class TestProblem:
    def test_validation(self):
        with pytest.raises(DimensionMismatch):
            LinRegProblem(np.zeros((3, 2)), np.zeros(4))
        with pytest.raises(ValueError):
            LinRegProblem(np.zeros((2, 0)), np.zeros(2))

    def test_empty_rows_allowed(self):
        prob = LinRegProblem(np.zeros((0, 4)), np.zeros(0))
        assert prob.m == 0 and prob.n == 4


class TestPosterior:
    def test_methods_agree(self):
        prob = toy_problem()
        direct = linreg_posterior(prob, method="direct")
        woodbury = linreg_posterior(prob, method="woodbury")
        assert np.allclose(direct.mean, woodbury.mean)
        assert np.allclose(direct.cov, woodbury.cov, atol=1e-12)

    def test_textbook_form(self):
        # Sigma_n = (n I + X^T X)^{-1}, mu_n = Sigma_n X^T y.
        prob = toy_problem(seed=1)
        post = linreg_posterior(prob)
        cov = np.linalg.inv(prob.n * np.eye(prob.n) + prob.X.T @ prob.X)
        assert np.allclose(post.cov, cov, atol=1e-12)
        assert np.allclose(post.mean, cov @ prob.X.T @ prob.y)

    def test_no_data_returns_prior(self):
        prob = LinRegProblem(np.zeros((0, 6)), np.zeros(0))
        post = linreg_posterior(prob)
        assert np.allclose(post.mean, 0.0)
        assert np.allclose(post.cov, np.eye(6) / 6)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            linreg_posterior(toy_problem(), method="svd")


class TestNtkRescale:
    def test_kl_invariant_w2_scales(self):
        prob = toy_problem(m=4, n=9, seed=2)
        post = linreg_posterior(prob)
        prior = GaussianDist(np.zeros(9), np.eye(9) / 9)
        scaled_post = ntk_rescale(post, 9)
        scaled_prior = GaussianDist(np.zeros(9), np.eye(9))
        assert np.isclose(kl_gaussian(post, prior),
                          kl_gaussian(scaled_post, scaled_prior), rtol=1e-10)
        assert np.isclose(9 * w2_gaussian(post, prior),
                          w2_gaussian(scaled_post, scaled_prior), rtol=1e-10)

    def test_dimension_check(self):
        post = linreg_posterior(toy_problem(n=12))
        with pytest.raises(DimensionMismatch):
            ntk_rescale(post, 5)


class TestPredictive:
    def test_monte_carlo_consistency(self):
        # Predictive of f(x) = x^T w must equal the pushforward of the
        # weight posterior through x.
        prob = toy_problem(m=3, n=4, seed=3)
        s2 = 0.3
        t = np.random.default_rng(4).standard_normal((6, 4))
        pred = linreg_predictive(prob, s2, t, alpha=1.0)
        # Direct weight-space posterior with noise s2 and prior (1/n) I.
        prec = prob.n * np.eye(4) + prob.X.T @ prob.X / s2
        cov_w = np.linalg.inv(prec)
        mu_w = cov_w @ prob.X.T @ prob.y / s2
        assert np.allclose(pred.mean, t @ mu_w)
        assert np.allclose(pred.cov, t @ cov_w @ t.T, atol=1e-12)

    def test_prior_predictive_when_no_data(self):
        prob = LinRegProblem(np.zeros((0, 3)), np.zeros(0))
        t = np.eye(3)
        pred = linreg_predictive(prob, 0.1, t, alpha=1.0)
        assert np.allclose(pred.cov, np.eye(3) / 3)
        assert np.allclose(pred.mean, 0.0)


class TestRateSweep:
    def test_rows_and_identities(self):
        rows = rate_sweep([16, 32, 64, 128], m=8, seed=0)
        assert [r.n for r in rows] == [16, 32, 64, 128]
        for r in rows:
            # Rescaling identities (also enforced internally by dual checks).
            assert np.isclose(r.kl_ntk, r.kl, rtol=1e-8)
            assert np.isclose(r.w2_ntk_sq, r.n * r.w2_sq, rtol=1e-8)
            assert r.w2_sq > 0 and r.kl > 0

    def test_w2_shrinks_kl_persists(self):
        rows = rate_sweep([16, 64, 256, 1024, 4096], m=8, seed=1)
        w2 = [r.w2_sq for r in rows]
        assert all(a > b for a, b in zip(w2, w2[1:]))
        # n ||mu_n||^2 stays order one: within a factor of 2 over the top rows.
        tail = [r.n_mu_norm_sq for r in rows[-3:]]
        assert max(tail) / min(tail) < 2.0

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            rate_sweep([32, 16], m=8)
        with pytest.raises(ValueError):
            rate_sweep([4], m=8)

    def test_trace_term_bounds_with_extreme_eigenvalues(self):
        # trace_term = sum_i g(lambda_i / n) / n with g increasing, so the
        # per-eigenvalue envelope uses lambda_max above and lambda_min below:
        # (m/n) g(lambda_min/n) <= trace_term <= (m/n) g(lambda_max/n).
        rng = np.random.default_rng(5)
        for _ in range(10):
            m, n = 6, 64
            x = rng.standard_normal((m, n))
            lam = np.linalg.eigvalsh(x @ x.T)
            g = lambda k: (1.0 - (1.0 + k) ** -0.5) ** 2  # noqa: E731
            trace_term = np.sum(g(lam / n)) / n
            assert trace_term <= (m / n) * g(lam.max() / n) + 1e-15
            assert trace_term >= (m / n) * g(lam.min() / n) - 1e-15

    def test_reported_lambda_min_bound_is_a_lower_bound(self):
        # The RateRow.trace_bound field uses lambda_min, which bounds the
        # trace term from below, not above, for any non-degenerate spectrum.
        rows = rate_sweep([16, 64, 256], m=8, seed=2)
        for r in rows:
            assert r.trace_bound <= r.trace_term + 1e-15


class TestSlopeFit:
    def test_exact_power_law(self):
        ns = [16, 32, 64, 128, 256, 512]
        vals = [3.0 * n ** -0.5 for n in ns]
        assert np.isclose(fit_loglog_slope(ns, vals), -0.5)

    def test_discard_requires_points(self):
        with pytest.raises(ValueError):
            fit_loglog_slope([16, 32, 64], [1, 2, 3], discard=2)


class TestDesignRule:
    def test_uniform_range_and_determinism(self):
        x1 = uniform_design_rule(4, 100, GaussianStream(0, 2))
        x2 = uniform_design_rule(4, 100, GaussianStream(0, 2))
        assert np.array_equal(x1, x2)
        assert x1.shape == (4, 100)
        assert x1.min() >= -1.0 and x1.max() <= 1.0
        assert abs(x1.mean()) < 0.1
