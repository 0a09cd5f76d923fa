"""Model data types, input standardization and the multiplicity-correcting prior calculus.

The model regresses each of d centered responses on the same p standardized
covariates, with a spike-and-slab prior on every coefficient and a shared
per-covariate Beta prior on the proportion of responses a covariate affects.
Setting the Beta hyperparameters via :func:`corrected_hyperparameters` makes
the prior probability that a covariate is active equal to p_star / p, which
adjusts for multiplicity as p grows.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DataError

__all__ = [
    "Dataset",
    "Hyperparameters",
    "ModelSpec",
    "standardize_inputs",
    "corrected_hyperparameters",
    "prior_activation_probability",
    "prior_odds_ratio",
    "digamma",
    "log_gamma",
    "log_beta",
]


@dataclass(frozen=True)
class Dataset:
    """Standardized design matrix and centered responses.

    X columns have mean 0 and unbiased sample variance 1, so that
    ||X_s||^2 = n - 1 for every column; Y columns have mean 0.
    """

    n: int
    p: int
    d: int
    X: np.ndarray
    Y: np.ndarray
    column_norms_sq: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 2 or self.p < 1 or self.d < 1:
            raise DataError(f"invalid dimensions n={self.n}, p={self.p}, d={self.d}")
        if self.X.shape != (self.n, self.p) or self.Y.shape != (self.n, self.d):
            raise DataError("matrix shapes do not match declared dimensions")


@dataclass(frozen=True)
class Hyperparameters:
    """Prior parameters: Beta(a, b) for omega, Gamma(eta, kappa) for tau,
    Gamma(lambda_, nu) for the inverse slab scale sigma^{-2}."""

    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    kappa: np.ndarray
    lambda_: float
    nu: float

    def __post_init__(self):
        for name in ("a", "b", "eta", "kappa"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise DataError(f"hyperparameter {name!r} must be a positive finite vector")
        for name in ("lambda_", "nu"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise DataError(f"hyperparameter {name!r} must be positive and finite")

    @classmethod
    def default(cls, p, d, p_star=None):
        """Unit Gamma priors for the precisions; Beta prior either flat (a=b=1)
        or multiplicity-corrected when p_star is given."""
        if p_star is None:
            a = np.ones(p)
            b = np.ones(p)
        else:
            a, b = corrected_hyperparameters(p, d, p_star)
        return cls(a=a, b=b, eta=np.ones(d), kappa=np.ones(d), lambda_=1.0, nu=1.0)


@dataclass(frozen=True)
class ModelSpec:
    """A dataset together with its prior specification."""

    dataset: Dataset
    hyper: Hyperparameters
    p_star: float | None = None

    def __post_init__(self):
        ds, h = self.dataset, self.hyper
        if h.a.shape != (ds.p,) or h.b.shape != (ds.p,):
            raise DataError("Beta hyperparameter vectors must have length p")
        if h.eta.shape != (ds.d,) or h.kappa.shape != (ds.d,):
            raise DataError("Gamma hyperparameter vectors must have length d")
        if self.p_star is not None and not (0 < self.p_star < ds.p):
            raise DataError(f"p_star must lie in (0, p), got {self.p_star}")


def _check_finite(mat, name):
    bad = ~np.isfinite(mat)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataError(f"non-finite entry in {name} at row {i}, column {j}")


def standardize_inputs(raw_X, raw_Y):
    """Center Y columns and standardize X columns to mean 0, unbiased variance 1.

    Raises DataError on constant X columns (they cannot be standardized and
    silently dropping them would desynchronize indices for the caller).
    """
    X = np.array(raw_X, dtype=float)
    Y = np.array(raw_Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise DataError("X and Y must be 2-dimensional")
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    _check_finite(X, "X")
    _check_finite(Y, "Y")
    n, p = X.shape
    d = Y.shape[1]
    if n < 2:
        raise DataError("need at least 2 samples")
    X -= X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    zero = np.nonzero(sd == 0)[0]
    if zero.size:
        raise DataError(f"constant column {zero[0]} in X")
    X /= sd
    Y -= Y.mean(axis=0)
    norms = np.full(p, float(n - 1))
    return Dataset(n=n, p=p, d=d, X=X, Y=Y, column_norms_sq=norms)


def corrected_hyperparameters(p, d, p_star):
    """Beta hyperparameters a_s = 1, b_s = d (p - p_star) / p_star, which make
    the prior activation probability of each covariate equal to p_star / p."""
    if not (0 < p_star < p):
        raise DataError(f"p_star must lie in (0, p={p}), got {p_star}")
    a = np.ones(p)
    b = np.full(p, d * (p - p_star) / p_star)
    return a, b


def prior_activation_probability(a_s, b_s, d):
    """Prior probability that a covariate is associated with at least one of
    the d responses: 1 - prod_j (b+d-j) / prod_j (a+b+d-j), in log space."""
    if a_s <= 0 or b_s <= 0 or d < 1:
        raise DataError("require a_s > 0, b_s > 0, d >= 1")
    if a_s == 1:
        # the product telescopes exactly; avoids log-gamma round-off for huge b
        return d / (b_s + d)
    log_ratio = (
        log_gamma(b_s + d) - log_gamma(b_s)
        - log_gamma(a_s + b_s + d) + log_gamma(a_s + b_s)
    )
    return -np.expm1(log_ratio)


def prior_odds_ratio(a_s, b_s, d, q_s):
    """Prior odds for a covariate to be associated with q_s - 1 rather than
    q_s of the d responses: (b_s + d - q_s) / (a_s + q_s - 1)."""
    if not 1 <= q_s <= d:
        raise DataError(f"q_s must lie in 1..{d}, got {q_s}")
    return (b_s + d - q_s) / (a_s + q_s - 1)


def _require_positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DataError(f"{name} requires strictly positive finite arguments")
    return x


def digamma(x):
    """Digamma function Psi(x) for x > 0."""
    return special.psi(_require_positive(x, "digamma"))


def log_gamma(x):
    """log Gamma(x) for x > 0."""
    return special.gammaln(_require_positive(x, "log_gamma"))


def log_beta(a, b):
    """log B(a, b) = log Gamma(a) + log Gamma(b) - log Gamma(a + b)."""
    return special.betaln(_require_positive(a, "log_beta"), _require_positive(b, "log_beta"))
