"""Synthetic genotype / outcome generator with planted association patterns.

Genotypes are drawn under Hardy-Weinberg equilibrium by thresholding latent
Gaussian variables, so within-block dependence can be controlled through the
latent correlation matrix (autocorrelated, equicorrelated, or an empirical
matrix repaired to the nearest positive-definite correlation matrix). Effect
sizes derive from per-association Beta-distributed variance fractions, giving
smaller effects more weight and an inverse relation between minor allele
frequency and effect magnitude.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DataError
from .model import Dataset, standardize_inputs

__all__ = [
    "Block",
    "SimulationSpec",
    "SimulatedData",
    "nearest_positive_definite",
    "simulate_genotypes",
    "assign_association_pattern",
    "simulate_effects",
    "generate_dataset",
]

_STRUCTURES = ("independent", "autocorrelated", "equicorrelated", "empirical")


@dataclass(frozen=True)
class Block:
    """Dependence structure for a contiguous group of covariates or responses.

    `p_add_weight` multiplies the base pleiotropy probability for response
    blocks, so correlated responses can be made jointly more or less likely to
    share an association.
    """

    size: int
    structure: str = "independent"
    rho: float = 0.0
    corr: np.ndarray | None = None
    p_add_weight: float = 1.0

    def __post_init__(self):
        if self.size < 1:
            raise DataError("block size must be >= 1")
        if self.structure not in _STRUCTURES:
            raise DataError(f"unknown block structure {self.structure!r}")
        if self.structure in ("autocorrelated", "equicorrelated") and not -1 < self.rho < 1:
            raise DataError("rho must lie in (-1, 1)")
        if self.structure == "empirical":
            if self.corr is None or np.asarray(self.corr).shape != (self.size, self.size):
                raise DataError("empirical block needs a size x size correlation matrix")
        if self.p_add_weight < 0:
            raise DataError("p_add_weight must be nonnegative")


@dataclass(frozen=True)
class SimulationSpec:
    n: int
    p: int
    d: int
    p0: int
    d0: int
    maf_range: tuple = (0.05, 0.5)
    covariate_blocks: list = None
    response_blocks: list = None
    p_add: float = 0.0
    target_pve: float = 0.1
    effect_shape: tuple = (2.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p0 <= self.p and 0 <= self.d0 <= self.d):
            raise DataError("require 0 <= p0 <= p and 0 <= d0 <= d")
        if self.p0 >= 1 and self.d0 < 1:
            raise DataError("p0 >= 1 requires d0 >= 1")
        if not 0 <= self.p_add <= 1:
            raise DataError("p_add must lie in [0, 1]")
        if not 0 < self.target_pve < 1:
            raise DataError("target_pve must lie in (0, 1)")
        if not 0 < self.maf_range[0] <= self.maf_range[1] <= 0.5:
            raise DataError("maf_range must satisfy 0 < low <= high <= 0.5")
        if self.covariate_blocks is None:
            object.__setattr__(self, "covariate_blocks", [Block(self.p)])
        if self.response_blocks is None:
            object.__setattr__(self, "response_blocks", [Block(self.d)])
        if sum(b.size for b in self.covariate_blocks) != self.p:
            raise DataError("covariate block sizes must sum to p")
        if sum(b.size for b in self.response_blocks) != self.d:
            raise DataError("response block sizes must sum to d")


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    genotypes: np.ndarray = field(repr=False)  # raw n x p matrix with entries 0/1/2
    beta_true: np.ndarray = field(repr=False)
    gamma_true: np.ndarray = field(repr=False)
    maf: np.ndarray = field(repr=False)
    residual_sd: np.ndarray = field(repr=False)


def nearest_positive_definite(C, tol=1e-7, maxit=100, eig_floor=1e-8):
    """Closest (Frobenius) positive-definite correlation matrix, by alternating
    projections onto the PSD cone and the unit-diagonal affine set."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DataError("input must be a square matrix")
    Y = 0.5 * (C + C.T)
    delta = np.zeros_like(Y)
    for _ in range(maxit):
        R = Y - delta
        evals, evecs = np.linalg.eigh(R)
        X_psd = (evecs * np.maximum(evals, 0.0)) @ evecs.T
        delta = X_psd - R
        Y_new = X_psd.copy()
        np.fill_diagonal(Y_new, 1.0)
        if np.linalg.norm(Y_new - Y, "fro") < tol:
            Y = Y_new
            break
        Y = Y_new
    evals, evecs = np.linalg.eigh(Y)
    if evals[0] < eig_floor:
        A = (evecs * np.maximum(evals, eig_floor)) @ evecs.T
        scale = np.sqrt(np.diag(A))
        Y = A / np.outer(scale, scale)
        np.fill_diagonal(Y, 1.0)
    return 0.5 * (Y + Y.T)


def _block_correlation(block: Block):
    if block.structure == "independent":
        return None
    if block.structure == "autocorrelated":
        idx = np.arange(block.size)
        return block.rho ** np.abs(idx[:, None] - idx[None, :])
    if block.structure == "equicorrelated":
        C = np.full((block.size, block.size), block.rho)
        np.fill_diagonal(C, 1.0)
        return C
    return nearest_positive_definite(block.corr)


def _latent_gaussian(n, blocks, seed_seq):
    """Latent standard-Gaussian matrix with the block dependence structure;
    each block uses its own spawned stream so blocks are order-independent."""
    children = seed_seq.spawn(len(blocks))
    cols = []
    for block, child in zip(blocks, children):
        rng = np.random.default_rng(child)
        Z = rng.standard_normal((n, block.size))
        C = _block_correlation(block)
        if C is not None:
            try:
                L = np.linalg.cholesky(C)
            except np.linalg.LinAlgError as exc:
                raise DataError("block correlation matrix is not positive definite") from exc
            Z = Z @ L.T
        cols.append(Z)
    return np.hstack(cols)


def simulate_genotypes(spec: SimulationSpec):
    """Genotypes 0/1/2 under Hardy-Weinberg equilibrium with latent-Gaussian
    block dependence, plus the drawn minor allele frequencies."""
    seed_seq = np.random.SeedSequence([int(spec.seed), 0])
    rng = np.random.default_rng(seed_seq)
    maf = rng.uniform(spec.maf_range[0], spec.maf_range[1], size=spec.p)
    Z = _latent_gaussian(spec.n, spec.covariate_blocks, seed_seq)
    u = ndtr(Z)
    c0 = (1.0 - maf) ** 2
    c1 = c0 + 2.0 * maf * (1.0 - maf)
    G = (u > c0[None, :]).astype(np.int8) + (u > c1[None, :]).astype(np.int8)
    return G, maf


def assign_association_pattern(spec: SimulationSpec):
    """Binary p x d association mask: each active covariate links to one
    uniformly drawn active response, plus Bernoulli(p_add x block weight)
    links to every other active response."""
    if spec.p0 > spec.p or spec.d0 > spec.d:
        raise DataError("active counts exceed dimensions")
    rng = np.random.default_rng([int(spec.seed), 1])
    gamma = np.zeros((spec.p, spec.d), dtype=np.int8)
    if spec.p0 == 0:
        return gamma
    active_cov = rng.choice(spec.p, size=spec.p0, replace=False)
    active_resp = rng.choice(spec.d, size=spec.d0, replace=False)
    weights = np.concatenate(
        [np.full(b.size, b.p_add_weight) for b in spec.response_blocks]
    )
    p_extra = np.clip(spec.p_add * weights[active_resp], 0.0, 1.0)
    for s in active_cov:
        anchor = rng.choice(active_resp)
        gamma[s, anchor] = 1
        extra = rng.random(spec.d0) < p_extra
        for t, hit in zip(active_resp, extra):
            if hit and t != anchor:
                gamma[s, t] = 1
    return gamma


def simulate_effects(spec: SimulationSpec, gamma_true, maf):
    """Effect matrix and per-response residual standard deviations.

    Variance fractions are Beta(effect_shape) draws rescaled globally so their
    mean equals target_pve; magnitudes follow |beta| = sqrt(pve / (2m(1-m))),
    so rarer variants get larger effects. Responses have unit total variance.
    """
    gamma_true = np.asarray(gamma_true)
    assoc = np.argwhere(gamma_true != 0)
    beta = np.zeros(gamma_true.shape, dtype=float)
    residual_sd = np.ones(gamma_true.shape[1])
    if assoc.shape[0] == 0:
        return beta, residual_sd
    rng = np.random.default_rng([int(spec.seed), 2])
    raw = rng.beta(spec.effect_shape[0], spec.effect_shape[1], size=assoc.shape[0])
    pve = raw * (spec.target_pve / raw.mean())
    pve_per_response = np.zeros(gamma_true.shape[1])
    np.add.at(pve_per_response, assoc[:, 1], pve)
    if np.any(pve_per_response >= 0.95):
        t = int(np.argmax(pve_per_response))
        raise DataError(
            f"response {t} would have genetic variance fraction "
            f"{pve_per_response[t]:.3f} >= 0.95; reduce target_pve or sparsify the pattern"
        )
    var_x = 2.0 * maf * (1.0 - maf)
    signs = rng.choice([-1.0, 1.0], size=assoc.shape[0])
    beta[assoc[:, 0], assoc[:, 1]] = signs * np.sqrt(pve / var_x[assoc[:, 0]])
    residual_sd = np.sqrt(1.0 - pve_per_response)
    return beta, residual_sd


def generate_dataset(spec: SimulationSpec) -> SimulatedData:
    """Full simulation: genotypes, association pattern, effects, outcomes."""
    G, maf = simulate_genotypes(spec)
    gamma = assign_association_pattern(spec)
    beta, residual_sd = simulate_effects(spec, gamma, maf)
    rng = np.random.default_rng([int(spec.seed), 3])
    noise = rng.standard_normal((spec.n, spec.d)) * residual_sd[None, :]
    Gc = G - G.mean(axis=0)
    Y = Gc @ beta + noise
    dataset = standardize_inputs(G, Y)
    return SimulatedData(
        dataset=dataset,
        genotypes=G,
        beta_true=beta,
        gamma_true=gamma,
        maf=maf,
        residual_sd=residual_sd,
    )
