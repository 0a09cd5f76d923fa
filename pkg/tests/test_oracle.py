import math

import numpy as np
import pytest
from conftest import make_problem
from scipy import integrate, stats

from vbqtl import (DataError, FitConfig, Hyperparameters, ModelSpec,
                   OracleConfig, elbo_tightness, fit,
                   log_marginal_likelihood_mc, log_marginal_response,
                   mc_posterior_summary, omega_mean_mc, ppi_mc,
                   standardize_inputs)


def quadrature_log_marginal(y, gamma, sigma_inv, X, eta, kappa):
    """Reference: integrate the precision numerically after marginalizing the
    coefficients analytically, y | tau ~ N(0, (I + sigma^2 X_g X_g^T) / tau)."""
    active = np.nonzero(gamma)[0]
    n = y.shape[0]
    cov0 = np.eye(n)
    if active.size:
        Xg = X[:, active]
        cov0 = cov0 + (1.0 / sigma_inv) * Xg @ Xg.T
    sign, logdet0 = np.linalg.slogdet(cov0)
    assert sign > 0
    quad = float(y @ np.linalg.solve(cov0, y))

    def log_integrand(tau):
        return (
            -0.5 * n * math.log(2 * math.pi) + 0.5 * n * math.log(tau)
            - 0.5 * logdet0 - 0.5 * tau * quad
            + stats.gamma.logpdf(tau, a=eta, scale=1.0 / kappa)
        )

    # integrate in linear space around the integrand's peak for stability
    grid = np.linspace(1e-8, 60.0, 4000)
    peak = max(log_integrand(t) for t in grid)
    val, _ = integrate.quad(lambda t: math.exp(log_integrand(t) - peak),
                            0, np.inf, limit=400)
    return peak + math.log(val)


class TestLogMarginalResponse:
    def test_single_point_null(self):
        got = log_marginal_response(np.array([0.0]), np.array([0]), 1.0,
                                    np.zeros((1, 1)), 1.0, 1.0)
        ref = math.log(math.gamma(1.5) / math.sqrt(2 * math.pi))
        assert abs(got - ref) < 1e-12

    def test_null_case_ignores_design(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=12)
        g = np.zeros(3, dtype=int)
        base = log_marginal_response(y, g, 1.0, rng.normal(size=(12, 3)), 1.5, 2.0)
        other = log_marginal_response(y, g, 99.0, rng.normal(size=(12, 3)), 1.5, 2.0)
        assert base == other

    def test_matches_quadrature(self):
        rng = np.random.default_rng(5)
        ds = standardize_inputs(rng.normal(size=(10, 3)),
                                rng.normal(size=(10, 1)))
        y = ds.Y[:, 0]
        for gamma in ([0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]):
            for sigma_inv in (0.5, 2.0):
                got = log_marginal_response(y, np.array(gamma), sigma_inv,
                                            ds.X, 1.3, 0.8)
                ref = quadrature_log_marginal(y, np.array(gamma), sigma_inv,
                                              ds.X, 1.3, 0.8)
                assert abs(got - ref) <= 1e-6 * abs(ref)


class TestMonteCarloEvidence:
    def test_deterministic(self):
        spec, _ = make_problem(15, 3, 2, seed=1)
        cfg = OracleConfig(n_draws=2000, seed=9)
        e1 = log_marginal_likelihood_mc(spec.dataset, spec.hyper, cfg)
        e2 = log_marginal_likelihood_mc(spec.dataset, spec.hyper, cfg)
        assert e1 == e2

    def test_degenerate_prior_matches_null(self):
        # prior mass forced to the empty model
        rng = np.random.default_rng(2)
        ds = standardize_inputs(rng.normal(size=(15, 1)), rng.normal(size=(15, 1)))
        hyper = Hyperparameters(a=np.full(1, 1e-8), b=np.ones(1),
                                eta=np.ones(1), kappa=np.ones(1),
                                lambda_=1.0, nu=1.0)
        est, se = log_marginal_likelihood_mc(ds, hyper, OracleConfig(n_draws=4000, seed=0))
        null = log_marginal_response(ds.Y[:, 0], np.zeros(1, dtype=int), 1.0,
                                     ds.X, 1.0, 1.0)
        assert abs(est - null) < max(3 * se, 1e-4)

    def test_enumeration_cap(self):
        spec, _ = make_problem(15, 4, 1, seed=0)
        with pytest.raises(DataError, match="max_p"):
            log_marginal_likelihood_mc(spec.dataset, spec.hyper,
                                       OracleConfig(n_draws=10, max_p=3))

    def test_explicit_subsets_p2(self):
        # independent cross-check: list the 4 inclusion patterns by hand
        rng = np.random.default_rng(7)
        ds = standardize_inputs(rng.normal(size=(12, 2)), rng.normal(size=(12, 1)))
        hyper = Hyperparameters.default(2, 1)
        cfg = OracleConfig(n_draws=400, seed=3)
        summary = mc_posterior_summary(ds, hyper, cfg)
        rng2 = np.random.default_rng(3)
        sigma_inv = rng2.gamma(1.0, 1.0, size=400)
        omega = rng2.beta(1.0, 1.0, size=(400, 2))
        per_draw = np.empty(400)
        for i in range(400):
            masses = []
            for g in ([0, 0], [1, 0], [0, 1], [1, 1]):
                g = np.array(g)
                lik = log_marginal_response(ds.Y[:, 0], g, sigma_inv[i], ds.X,
                                            1.0, 1.0)
                prior = float(np.sum(np.where(g, np.log(omega[i]),
                                              np.log1p(-omega[i]))))
                masses.append(lik + prior)
            per_draw[i] = np.logaddexp.reduce(masses)
        expected = np.logaddexp.reduce(per_draw) - math.log(400)
        np.testing.assert_allclose(summary.log_evidence, expected, rtol=1e-12)


class TestPosteriorSummaries:
    def test_ppi_normalization_per_draw(self):
        spec, _ = make_problem(15, 3, 2, seed=4)
        summary = mc_posterior_summary(spec.dataset, spec.hyper,
                                       OracleConfig(n_draws=500, seed=1))
        for s in range(3):
            recombined = np.logaddexp(summary.log_mass_response_active[:, :, s],
                                      summary.log_mass_response_inactive[:, :, s])
            np.testing.assert_allclose(recombined, summary.log_mass_response,
                                       atol=1e-12)

    def test_strong_effect_detected(self):
        rng = np.random.default_rng(0)
        n = 250
        X = rng.normal(size=(n, 3))
        y = 0.4 * X[:, [0]] + math.sqrt(1 - 0.135) * rng.normal(size=(n, 1))
        ds = standardize_inputs(X, y)
        hyper = Hyperparameters.default(3, 1)
        cfg = OracleConfig(n_draws=4000, seed=0)
        assert ppi_mc(ds, hyper, cfg, 0, 0) >= 0.99
        assert ppi_mc(ds, hyper, cfg, 1, 0) < 0.5
        assert ppi_mc(ds, hyper, cfg, 2, 0) < 0.5

    def test_duplicate_columns_exchangeable(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=20)
        x = (x - x.mean()) / x.std(ddof=1)
        X = np.column_stack([x, x])
        y = x[:, None] + 0.3 * rng.normal(size=(20, 1))
        from vbqtl.model import Dataset
        ds = Dataset(n=20, p=2, d=1, X=X, Y=y - y.mean(),
                     column_norms_sq=np.full(2, 19.0))
        hyper = Hyperparameters.default(2, 1)
        cfg = OracleConfig(n_draws=20000, seed=0)
        p0 = ppi_mc(ds, hyper, cfg, 0, 0)
        p1 = ppi_mc(ds, hyper, cfg, 1, 0)
        assert abs(p0 - p1) < 0.02

    def test_monotone_information(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(60, 3))
        noise = rng.normal(size=(60, 1))
        cfg = OracleConfig(n_draws=3000, seed=0)
        hyper = Hyperparameters.default(3, 1)
        prev = -1.0
        for effect in (0.1, 0.2, 0.4, 0.8):
            ds = standardize_inputs(X, effect * X[:, [1]] + noise)
            cur = ppi_mc(ds, hyper, cfg, 1, 0)
            assert cur >= prev - 1e-9
            prev = cur

    def test_zero_data_shrinks_omega(self):
        rng = np.random.default_rng(3)
        ds = standardize_inputs(rng.normal(size=(20, 2)), np.zeros((20, 1)))
        hyper = Hyperparameters.default(2, 1)
        got = omega_mean_mc(ds, hyper, OracleConfig(n_draws=4000, seed=0), 0)
        assert got < 0.5  # below the flat-prior mean

    def test_omega_deterministic(self):
        spec, _ = make_problem(15, 2, 2, seed=8)
        cfg = OracleConfig(n_draws=1000, seed=2)
        assert (omega_mean_mc(spec.dataset, spec.hyper, cfg, 0)
                == omega_mean_mc(spec.dataset, spec.hyper, cfg, 0))


class TestTightness:
    def test_lower_bound_dominance(self):
        spec, _ = make_problem(50, 4, 3, seed=10, n_signals=1)
        result = fit(spec, FitConfig(maxit=200))
        report = elbo_tightness(spec.dataset, spec.hyper, result,
                                OracleConfig(n_draws=10000, seed=0))
        assert report.log_evidence + 3 * report.mc_standard_error >= report.elbo
        assert report.relative_gap > -1e-6

    def test_gap_sign_convention(self):
        spec, _ = make_problem(50, 4, 3, seed=10, n_signals=1)
        result = fit(spec, FitConfig(maxit=200))
        report = elbo_tightness(spec.dataset, spec.hyper, result,
                                OracleConfig(n_draws=5000, seed=0))
        # both quantities negative; gap positive iff ELBO <= log evidence
        expected = (report.log_evidence - report.elbo) / abs(report.log_evidence)
        assert report.relative_gap == expected
        assert report.log10_relative_gap == pytest.approx(
            math.log10(abs(expected)))
