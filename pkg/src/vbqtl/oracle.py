"""Exact closed-form and simple-Monte-Carlo reference posterior quantities.

For small p the marginal likelihood p(y) is computed by enumerating all 2^p
inclusion patterns per response (the regression coefficients and precisions
integrate out in closed form) and Monte-Carlo averaging over draws of the
inverse slab scale and the activation proportions. The same shared draws give
posterior inclusion probabilities and posterior means of the activation
proportions, used to validate the variational engine.

All accumulation happens in log space; the probability-space formulas
underflow already for moderate sample sizes.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln, logsumexp

from .errors import DataError, NumericalError
from .model import Dataset, Hyperparameters

__all__ = [
    "OracleConfig",
    "MonteCarloSummary",
    "log_marginal_response",
    "mc_posterior_summary",
    "log_marginal_likelihood_mc",
    "ppi_mc",
    "omega_mean_mc",
    "elbo_tightness",
    "TightnessReport",
]


@dataclass(frozen=True)
class OracleConfig:
    n_draws: int = 50_000
    seed: int = 0
    max_p: int = 15

    def __post_init__(self):
        if self.n_draws < 1:
            raise DataError("n_draws must be >= 1")
        if self.max_p > 25:
            raise DataError("max_p above 25 would enumerate more than 2^25 subsets")


def _log_const(n, eta_t, kappa_t):
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        + gammaln(n / 2.0 + eta_t)
        + eta_t * math.log(kappa_t)
        - gammaln(eta_t)
    )


def log_marginal_response(y_t, gamma_t, sigma_inv, X, eta_t, kappa_t):
    """log p(y_t | gamma_t, sigma^{-2}), coefficients and precision integrated out."""
    y_t = np.asarray(y_t, dtype=float)
    gamma_t = np.asarray(gamma_t)
    n = y_t.shape[0]
    active = np.nonzero(gamma_t)[0]
    q = active.size
    yy = float(y_t @ y_t)
    const = _log_const(n, eta_t, kappa_t)
    if q == 0:
        return const - (n / 2.0 + eta_t) * math.log(kappa_t + 0.5 * yy)
    Xg = np.asarray(X, dtype=float)[:, active]
    V = Xg.T @ Xg + sigma_inv * np.eye(q)
    eigs = np.linalg.eigvalsh(V)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > 1e12:
        raise NumericalError("V is numerically singular (condition estimate > 1e12)")
    chol = cho_factor(V)
    xty = Xg.T @ y_t
    s2 = yy - float(xty @ cho_solve(chol, xty))
    logdet = float(np.sum(np.log(eigs)))
    return (
        const
        - 0.5 * logdet
        - (n / 2.0 + eta_t) * math.log(kappa_t + 0.5 * s2)
        + 0.5 * q * math.log(sigma_inv)
    )


class _SubsetBasis:
    """Eigen-decompositions of X_g^T X_g for every inclusion pattern g, allowing
    the per-draw likelihoods to be evaluated for a whole vector of sigma^{-2}
    draws at once."""

    def __init__(self, X, Y, eta, kappa):
        n, p = X.shape
        d = Y.shape[1]
        self.n, self.p, self.d = n, p, d
        n_sub = 1 << p
        codes = np.arange(n_sub)
        self.patterns = (codes[:, None] >> np.arange(p)[None, :]) & 1  # n_sub x p
        self.q = self.patterns.sum(axis=1)
        self.yy = (Y**2).sum(axis=0)
        self.const = np.array([_log_const(n, eta[t], kappa[t]) for t in range(d)])
        self.exponent = n / 2.0 + eta
        self.kappa = np.asarray(kappa, dtype=float)
        self.eigvals = []
        self.w2 = []  # d x q matrices of squared rotated cross-products
        for g in range(n_sub):
            active = np.nonzero(self.patterns[g])[0]
            if active.size == 0:
                self.eigvals.append(None)
                self.w2.append(None)
                continue
            Xg = X[:, active]
            evals, evecs = np.linalg.eigh(Xg.T @ Xg)
            self.eigvals.append(evals)
            self.w2.append((Y.T @ Xg @ evecs) ** 2)

    def log_lik(self, t, sigma_inv):
        """Matrix of log p(y_t | g, sigma_inv_i), shape (len(sigma_inv), n_sub)."""
        sigma_inv = np.asarray(sigma_inv, dtype=float)
        out = np.empty((sigma_inv.size, len(self.eigvals)))
        for g, evals in enumerate(self.eigvals):
            if evals is None:
                out[:, g] = self.const[t] - self.exponent[t] * math.log(
                    self.kappa[t] + 0.5 * self.yy[t]
                )
                continue
            shifted = evals[None, :] + sigma_inv[:, None]  # I x q
            logdet = np.log(shifted).sum(axis=1)
            quad = (self.w2[g][t][None, :] / shifted).sum(axis=1)
            s2 = self.yy[t] - quad
            out[:, g] = (
                self.const[t]
                - 0.5 * logdet
                - self.exponent[t] * np.log(self.kappa[t] + 0.5 * s2)
                + 0.5 * self.q[g] * np.log(sigma_inv)
            )
        return out


@dataclass(frozen=True)
class MonteCarloSummary:
    """Shared-draw Monte Carlo posterior summaries from one enumeration pass."""

    log_evidence: float
    mc_standard_error: float
    ppi: np.ndarray         # p x d
    omega_mean: np.ndarray  # p
    log_mass_per_draw: np.ndarray          # I, log joint mass of each draw
    log_mass_response: np.ndarray          # I x d
    log_mass_response_active: np.ndarray   # I x d x p, gamma_st = 1 restricted
    log_mass_response_inactive: np.ndarray  # I x d x p, gamma_st = 0 restricted


def _check_p(dataset, config):
    if dataset.p > config.max_p:
        raise DataError(
            f"p={dataset.p} exceeds the enumeration cap max_p={config.max_p}"
        )


def mc_posterior_summary(dataset: Dataset, hyper: Hyperparameters,
                         config: OracleConfig = OracleConfig()) -> MonteCarloSummary:
    """One full enumeration pass: evidence, all inclusion probabilities and all
    activation-proportion means, from the same draws."""
    _check_p(dataset, config)
    p, d, I = dataset.p, dataset.d, config.n_draws
    rng = np.random.default_rng(config.seed)
    sigma_inv = rng.gamma(shape=hyper.lambda_, scale=1.0 / hyper.nu, size=I)
    omega = rng.beta(hyper.a, hyper.b, size=(I, p))
    # draws can underflow to exactly 0 or 1 under extreme Beta priors, which
    # would propagate 0 * (-inf) through the prior mass matmul
    omega = np.clip(omega, 1e-300, 1.0 - 1e-16)
    basis = _SubsetBasis(dataset.X, dataset.Y, hyper.eta, hyper.kappa)
    patterns = basis.patterns
    log_om = np.log(omega)
    log_1m = np.log1p(-omega)
    log_prior = log_om @ patterns.T + log_1m @ (1 - patterns).T  # I x n_sub

    m = np.empty((I, d))
    m1 = np.empty((I, d, p))
    m0 = np.empty((I, d, p))
    chunk = max(1, 4_000_000 // patterns.shape[0])
    for t in range(d):
        for lo in range(0, I, chunk):
            hi = min(lo + chunk, I)
            mass = basis.log_lik(t, sigma_inv[lo:hi]) + log_prior[lo:hi]
            m[lo:hi, t] = logsumexp(mass, axis=1)
            for s in range(p):
                on = patterns[:, s] == 1
                m1[lo:hi, t, s] = logsumexp(mass[:, on], axis=1)
                m0[lo:hi, t, s] = logsumexp(mass[:, ~on], axis=1)

    total = m.sum(axis=1)  # log of per-draw joint mass over all responses
    log_norm = logsumexp(total)
    log_evidence = float(log_norm - math.log(I))

    # leave-one-out jackknife standard error of the log evidence
    with np.errstate(divide="ignore"):
        loo = log_norm + np.log1p(-np.exp(np.minimum(total - log_norm, -1e-16)))
    loo -= math.log(I - 1) if I > 1 else 0.0
    se = float(np.sqrt((I - 1) / I * np.sum((loo - loo.mean()) ** 2))) if I > 1 else np.inf

    ppi = np.empty((p, d))
    for t in range(d):
        for s in range(p):
            num = logsumexp(total - m[:, t] + m1[:, t, s])
            ppi[s, t] = math.exp(num - log_norm)
    omega_mean = np.array(
        [math.exp(logsumexp(log_om[:, s] + total) - log_norm) for s in range(p)]
    )
    return MonteCarloSummary(
        log_evidence=log_evidence,
        mc_standard_error=se,
        ppi=np.clip(ppi, 0.0, 1.0),
        omega_mean=omega_mean,
        log_mass_per_draw=total,
        log_mass_response=m,
        log_mass_response_active=m1,
        log_mass_response_inactive=m0,
    )


def log_marginal_likelihood_mc(dataset, hyper, config=OracleConfig()):
    """Simple Monte Carlo estimate of log p(y) with a jackknife standard error."""
    summary = mc_posterior_summary(dataset, hyper, config)
    return summary.log_evidence, summary.mc_standard_error


def ppi_mc(dataset, hyper, config, s, t):
    """Monte Carlo posterior inclusion probability p(gamma_st = 1 | y)."""
    return float(mc_posterior_summary(dataset, hyper, config).ppi[s, t])


def omega_mean_mc(dataset, hyper, config, s):
    """Monte Carlo posterior mean of the activation proportion omega_s."""
    return float(mc_posterior_summary(dataset, hyper, config).omega_mean[s])


@dataclass(frozen=True)
class TightnessReport:
    log_evidence: float
    mc_standard_error: float
    elbo: float
    relative_gap: float        # (log p - ELBO) / |log p|; positive iff ELBO <= log p
    log10_relative_gap: float  # log10 of the gap magnitude, as commonly plotted


def elbo_tightness(dataset, hyper, fit_result, config=OracleConfig()) -> TightnessReport:
    """Relative gap between the Monte Carlo marginal log-likelihood and the
    converged lower bound. Sign convention: positive when the bound is valid."""
    log_p, se = log_marginal_likelihood_mc(dataset, hyper, config)
    elbo = float(fit_result.elbo_trace[-1])
    gap = (log_p - elbo) / abs(log_p)
    log10_gap = math.log10(abs(gap)) if gap != 0 else -math.inf
    return TightnessReport(
        log_evidence=log_p,
        mc_standard_error=se,
        elbo=elbo,
        relative_gap=gap,
        log10_relative_gap=log10_gap,
    )
