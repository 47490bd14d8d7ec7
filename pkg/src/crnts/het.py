"""Replicate-aggregating heteroskedastic surrogate over x only.

This is stochastic kriging: a GP on per-location sample means whose diagonal
carries the estimated noise of each mean, s_i^2 / n_i. Seeds are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError
from .gp import (
    LOG_2PI,
    EvaluationDataset,
    GaussianConditioner,
    HyperBounds,
    KernelSpec,
    cholesky_with_jitter,
    correlation_from_sqdist,
    is_degenerate,
    kernel,
    maximize_in_log_box,
    median_heuristic_spec,
    predictive,
)


@dataclass
class AggregatedDesign:
    x: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    standardization: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        self.means = np.asarray(self.means, dtype=float).reshape(-1)
        self.variances = np.asarray(self.variances, dtype=float).reshape(-1)
        k = len(self.means)
        if self.x.shape[0] != k or len(self.counts) != k or len(self.variances) != k:
            raise ValueError("aggregated design arrays differ in length")
        if (self.counts < 1).any():
            raise ValueError("replicate counts must be >= 1")
        if (self.variances < 0).any():
            raise ValueError("replicate variances must be >= 0")

    @classmethod
    def empty(cls, dim: int, standardization=(0.0, 1.0)) -> "AggregatedDesign":
        return cls(np.zeros((0, dim)), [], [], [], standardization)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def z(self) -> np.ndarray:
        m, s = self.standardization
        return (self.means - m) / s

    @property
    def noise(self) -> np.ndarray:
        """Variance of each group mean on the standardized scale."""
        s = self.standardization[1]
        return self.variances / self.counts / (s * s)


def aggregate_replicates(data: EvaluationDataset) -> AggregatedDesign:
    """Group responses by exact x; mean and unbiased variance per group.

    Singleton groups get the mean variance of the replicated groups, or the
    overall response variance when nothing is replicated.
    """
    if len(data) == 0:
        return AggregatedDesign.empty(data.dim, data.standardization)
    ux, inverse, counts = np.unique(data.x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.bincount(inverse, weights=data.y, minlength=len(ux))
    means = sums / counts
    resid = data.y - means[inverse]
    ss = np.bincount(inverse, weights=resid * resid, minlength=len(ux))
    variances = np.zeros(len(ux))
    replicated = counts > 1
    variances[replicated] = ss[replicated] / (counts[replicated] - 1)
    if replicated.any():
        fill = variances[replicated].mean()
    else:
        fill = float(np.var(data.y, ddof=1)) if len(data) > 1 else 0.0
    variances[~replicated] = fill
    return AggregatedDesign(ux, counts, means, variances, data.standardization)


class HetSurrogate:
    """Latent-mean posterior of the stochastic-kriging model."""

    def __init__(self, design: AggregatedDesign, spec: KernelSpec):
        self.design = design
        self.spec = spec
        C = kernel(design.x, design.x, spec)
        C[np.diag_indices_from(C)] += design.noise
        self.cond = GaussianConditioner(C, design.z, spec.variance)

    def predict(self, X, seeds=None, latent: bool = True) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, float))
        return predictive(self.cond, kernel(X, self.design.x, self.spec),
                          np.full(len(X), self.spec.variance), self.design)

    def posterior_cov(self, X, seeds=None) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, float))
        Ks = kernel(X, self.design.x, self.spec)
        V = self.cond.whiten(Ks)
        cov = kernel(X, X, self.spec) - V.T @ V
        m, s = self.design.standardization
        return m + s * self.cond.mean(Ks), s * s * cov

    def sample_marginal(self, X, seeds, rng: np.random.Generator) -> np.ndarray:
        mean, var = self.predict(X)
        return mean + np.sqrt(var) * rng.standard_normal(len(mean))

    def sample_joint(self, X, seeds, J: int, rng: np.random.Generator, method: str = "dense") -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if J <= 0:
            return np.zeros((0, len(X)))
        mean, cov = self.posterior_cov(X)
        cov = 0.5 * (cov + cov.T)
        L, _ = cholesky_with_jitter(cov, max(float(np.max(np.diag(cov), initial=0.0)), 1e-300))
        return mean[None, :] + rng.standard_normal((J, len(X))) @ L.T


def het_posterior(design: AggregatedDesign, spec: KernelSpec, Xstar) -> tuple[np.ndarray, np.ndarray]:
    """Latent-mean prediction: the variance excludes future-observation noise."""
    return HetSurrogate(design, spec).predict(Xstar)


def het_joint_sample(design: AggregatedDesign, spec: KernelSpec, xgrid, J: int, rng: np.random.Generator) -> np.ndarray:
    return HetSurrogate(design, spec).sample_joint(xgrid, None, J, rng)


def het_log_likelihood(design: AggregatedDesign, spec: KernelSpec) -> float:
    C = kernel(design.x, design.x, spec)
    C[np.diag_indices_from(C)] += design.noise
    return GaussianConditioner(C, design.z, spec.variance).log_likelihood()


def fit_het_hyperparameters(
    design: AggregatedDesign,
    family: str = "matern52",
    bounds: HyperBounds = HyperBounds(),
    rng: np.random.Generator | None = None,
    init: KernelSpec | None = None,
    n_starts: int = 5,
    maxfev: int = 200,
) -> KernelSpec:
    """Fit lengthscales and process variance; the noise is fixed by the replicates."""
    rng = np.random.default_rng(0) if rng is None else rng
    d = design.dim
    probe = EvaluationDataset(design.x, np.zeros(len(design), dtype=np.int64), design.means, (0.0, 1.0))
    if len(design) < 2 or is_degenerate(probe):
        return median_heuristic_spec(design.x, family, bounds, "degenerate data: heuristic hyperparameters")
    sq = [(design.x[:, None, k] - design.x[None, :, k]) ** 2 for k in range(d)]
    z = design.z
    noise = np.diag(design.noise)
    n = len(design)

    def objective(theta):
        p = np.exp(theta)
        sqdist = sum(s / (l * l) for s, l in zip(sq, p[:d]))
        C = p[d] * correlation_from_sqdist(sqdist, family) + noise
        try:
            L, _ = cholesky_with_jitter(C, p[d])
        except NumericalError:
            return -np.inf
        a = linalg.solve_triangular(L, z, lower=True, check_finite=False)
        return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)

    lower = np.log([*[bounds.lengthscale[0]] * d, bounds.variance[0]])
    upper = np.log([*[bounds.lengthscale[1]] * d, bounds.variance[1]])
    init_theta = None
    if init is not None and init.dim == d:
        init_theta = np.clip(np.log([*init.lengthscales, init.variance]), lower, upper)
    theta, _ = maximize_in_log_box(objective, lower, upper, rng, n_starts, init_theta, maxfev)
    if theta is None:
        return median_heuristic_spec(design.x, family, bounds, "all optimizer starts failed: heuristic hyperparameters")
    p = np.exp(theta)
    return KernelSpec(tuple(p[:d]), float(p[d]), 0.0, 0.5, family)

