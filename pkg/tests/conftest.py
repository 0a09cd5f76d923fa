import numpy as np
import pytest

from vbqtl import Hyperparameters, ModelSpec, standardize_inputs
from vbqtl.cavi import VariationalState
from vbqtl.model import digamma


def make_problem(n, p, d, seed=0, p_star=None, n_signals=0, effect=1.0):
    """Random standardized problem with optional planted effects."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros((p, d))
    if n_signals:
        rows = rng.choice(p, size=n_signals, replace=False)
        cols = rng.integers(0, d, size=n_signals)
        beta[rows, cols] = effect * rng.choice([-1.0, 1.0], size=n_signals)
    Y = X @ beta + rng.normal(size=(n, d))
    ds = standardize_inputs(X, Y)
    hyper = Hyperparameters.default(p, d, p_star=p_star)
    return ModelSpec(dataset=ds, hyper=hyper, p_star=p_star), beta


def make_random_state(spec, seed=0):
    """VariationalState with random parameters whose caches satisfy the
    required identities, for testing individual update formulas."""
    ds, h = spec.dataset, spec.hyper
    rng = np.random.default_rng(seed)
    p, d = ds.p, ds.d
    eta_star = h.eta + rng.uniform(0.5, 3.0, d)
    kappa_star = h.kappa + rng.uniform(0.5, 3.0, d)
    lambda_star = h.lambda_ + rng.uniform(0.5, 3.0)
    nu_star = h.nu + rng.uniform(0.5, 3.0)
    a_star = h.a + rng.uniform(0.1, 2.0, p)
    b_star = h.b + rng.uniform(0.1, 2.0, p)
    state = VariationalState(
        M=rng.normal(scale=0.5, size=(p, d)),
        S2=rng.uniform(0.01, 0.5, size=(p, d)),
        Gamma1=rng.uniform(0.0, 1.0, size=(p, d)),
        eta_star=eta_star,
        kappa_star=kappa_star,
        lambda_star=float(lambda_star),
        nu_star=float(nu_star),
        a_star=a_star,
        b_star=b_star,
        tau1=eta_star / kappa_star,
        sigma_inv1=float(lambda_star / nu_star),
        e_log_tau=digamma(eta_star) - np.log(kappa_star),
        e_log_sigma_inv=float(digamma(lambda_star) - np.log(nu_star)),
        e_log_omega=digamma(a_star) - digamma(a_star + b_star),
        e_log_1m_omega=digamma(b_star) - digamma(a_star + b_star),
    )
    state.refresh_residual(ds.X, ds.Y)
    return state


@pytest.fixture
def small_spec():
    spec, _ = make_problem(40, 5, 3, seed=1)
    return spec
