"""Permutation-based Bayesian false discovery rate estimation.

An empirical null is built by refitting the model on datasets whose outcome
rows are jointly permuted (preserving cross-response correlation); the FDR at
a threshold is the median permuted exceedance count divided by the observed
one, with the null proportion conservatively fixed at 1. Thresholds matching
a target rate come from a monotone cubic interpolant of the isotonic-regressed
curve.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, isotonic_regression

from . import cavi
from .errors import DataError, VbqtlError
from .model import Dataset, ModelSpec

__all__ = [
    "PermutationRun",
    "FdrCurve",
    "Declarations",
    "default_threshold_grid",
    "permute_and_refit",
    "empirical_fdr_curve",
    "threshold_for_fdr",
    "adaptive_column_thresholds",
    "declare_associations",
]


def default_threshold_grid(k=50):
    """Equispaced thresholds on (0.01, 0.99)."""
    return np.linspace(0.01, 0.99, k)


@dataclass(frozen=True)
class PermutationRun:
    B: int
    thresholds: np.ndarray
    observed_counts: np.ndarray                 # K
    permuted_counts: np.ndarray = field(repr=False)  # B x K
    seed: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise DataError("need at least one permutation")
        taus = np.asarray(self.thresholds, dtype=float)
        if taus.ndim != 1 or np.any(np.diff(taus) <= 0) or taus[0] <= 0 or taus[-1] >= 1:
            raise DataError("thresholds must be strictly increasing within (0, 1)")


def _exceedance_counts(ppi, thresholds):
    flat = np.asarray(ppi).ravel()
    return np.array([int(np.count_nonzero(flat > tau)) for tau in thresholds])


def _permuted_spec(spec: ModelSpec, perm):
    ds = spec.dataset
    permuted = Dataset(
        n=ds.n, p=ds.p, d=ds.d, X=ds.X, Y=ds.Y[perm],
        column_norms_sq=ds.column_norms_sq,
    )
    return replace(spec, dataset=permuted)


def _refit_counts(args):
    spec, config, thresholds, seed, b = args
    if b == 0:
        target = spec
    else:
        perm = np.random.default_rng([int(seed), int(b)]).permutation(spec.dataset.n)
        target = _permuted_spec(spec, perm)
    try:
        result = cavi.fit(target, config)
    except VbqtlError as exc:
        raise type(exc)(f"permutation {b}: {exc}") from exc
    return b, _exceedance_counts(result.ppi, thresholds)


def permute_and_refit(spec: ModelSpec, config: cavi.FitConfig, B, seed=0,
                      thresholds=None, n_workers=1) -> PermutationRun:
    """Fit the observed data plus B outcome-row-permuted copies and record
    threshold-grid exceedance counts for each. Deterministic per seed;
    permutation refits are independent and may run in worker processes."""
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = np.asarray(thresholds, dtype=float)
    jobs = [(spec, config, thresholds, seed, b) for b in range(B + 1)]
    counts = {}
    if n_workers and n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for b, c in pool.map(_refit_counts, jobs):
                counts[b] = c
    else:
        for job in jobs:
            b, c = _refit_counts(job)
            counts[b] = c
    permuted = np.vstack([counts[b] for b in range(1, B + 1)])
    return PermutationRun(
        B=B,
        thresholds=thresholds,
        observed_counts=counts[0],
        permuted_counts=permuted,
        seed=seed,
    )


@dataclass(frozen=True)
class FdrCurve:
    thresholds: np.ndarray
    fdr: np.ndarray
    no_discoveries: np.ndarray  # True where the observed exceedance count is 0


def empirical_fdr_curve(run: PermutationRun) -> FdrCurve:
    """FDR(tau_k) = median over permutations of permuted exceedances, divided
    by observed exceedances, clipped to [0, 1]. Zero observed exceedances give
    an estimate of 0 with the no-discoveries flag set."""
    observed = np.asarray(run.observed_counts, dtype=float)
    med = np.median(run.permuted_counts, axis=0)
    none = observed == 0
    fdr = np.zeros_like(observed)
    np.divide(med, observed, out=fdr, where=~none)
    return FdrCurve(
        thresholds=np.asarray(run.thresholds, dtype=float),
        fdr=np.clip(fdr, 0.0, 1.0),
        no_discoveries=none,
    )


def threshold_for_fdr(curve, target):
    """Smallest threshold whose interpolated FDR is at or below the target.

    The raw curve is isotonic-regressed (non-increasing in tau) and then
    interpolated with a monotone cubic. Returns None when the target is
    unattainable on the grid.
    """
    if isinstance(curve, FdrCurve):
        taus, fdr = curve.thresholds, curve.fdr
    else:
        pairs = list(curve)
        taus = np.array([t for t, _ in pairs], dtype=float)
        fdr = np.array([f for _, f in pairs], dtype=float)
    if taus.size < 4:
        raise DataError("need at least 4 grid points to fit the spline")
    iso = isotonic_regression(fdr, increasing=False).x
    interp = PchipInterpolator(taus, iso)
    if iso[-1] > target:
        return None
    if iso[0] <= target:
        return float(taus[0])
    # monotone non-increasing interpolant: bracket the crossing
    grid = np.linspace(taus[0], taus[-1], 2048)
    vals = interp(grid)
    above = np.nonzero(vals > target)[0]
    lo = grid[above[-1]]
    hi = grid[min(above[-1] + 1, grid.size - 1)]
    if interp(hi) > target:
        return float(taus[-1])
    return float(brentq(lambda x: interp(x) - target, lo, hi))


def adaptive_column_thresholds(ppi, tau):
    """Per-response thresholds rescaled by the ratio of the column median PPI
    to the global median, for externally produced per-response PPI matrices."""
    ppi = np.asarray(ppi, dtype=float)
    global_med = float(np.median(ppi))
    if global_med == 0:
        raise DataError("global median PPI is zero; adaptive thresholds undefined")
    return np.median(ppi, axis=0) / global_med * tau


@dataclass(frozen=True)
class Declarations:
    pairs: list                      # (s, t) pairs with PPI above threshold
    pairs_per_covariate: np.ndarray  # length p
    active_covariates: np.ndarray    # indices with at least one declared pair


def declare_associations(ppi, tau_hat) -> Declarations:
    """All pairs with PPI strictly above the threshold, plus a per-covariate
    activity summary."""
    ppi = np.asarray(ppi)
    hits = np.argwhere(ppi > tau_hat)
    per_cov = np.zeros(ppi.shape[0], dtype=int)
    np.add.at(per_cov, hits[:, 0], 1)
    return Declarations(
        pairs=[(int(s), int(t)) for s, t in hits],
        pairs_per_covariate=per_cov,
        active_covariates=np.nonzero(per_cov)[0],
    )
