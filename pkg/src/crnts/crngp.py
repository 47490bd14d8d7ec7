"""Common-random-number GP over augmented inputs (x, seed).

Covariance between (x, r) and (x', r') is k(x, x') when r == r' and
rho * k(x, x') otherwise. Seeds are categorical: they never enter a distance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import SizeError
from .gp import (
    EvaluationDataset,
    GaussianConditioner,
    HyperBounds,
    KernelSpec,
    cholesky_with_jitter,
    fit_hyperparameters,
    kernel,
    predictive,
)


@dataclass(frozen=True)
class AugmentedInput:
    x: tuple[float, ...]
    r: int

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "r", int(self.r))
        if self.r < 0:
            raise ValueError(f"seed must be nonnegative, got {self.r}")


@dataclass(frozen=True)
class SeedSet:
    seeds: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) < 1:
            raise ValueError("seed set must contain at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    def __len__(self) -> int:
        return len(self.seeds)

    def __iter__(self):
        return iter(self.seeds)

    def __contains__(self, seed) -> bool:
        return int(seed) in self.seeds


def stack_points(points: Iterable[AugmentedInput]) -> tuple[np.ndarray, np.ndarray]:
    points = list(points)
    X = np.array([p.x for p in points], dtype=float)
    seeds = np.array([p.r for p in points], dtype=np.int64)
    return X, seeds


def seed_similarity(s1, s2, rho: float) -> np.ndarray:
    s1 = np.asarray(s1).reshape(-1)
    s2 = np.asarray(s2).reshape(-1)
    return np.where(s1[:, None] == s2[None, :], 1.0, rho)


def crn_kernel(X1, s1, X2, s2, spec: KernelSpec) -> np.ndarray:
    return kernel(X1, X2, spec) * seed_similarity(s1, s2, spec.rho)


def crn_covariance(X, seeds, spec: KernelSpec) -> np.ndarray:
    """CRN covariance plus nugget on the diagonal (and jitter if needed)."""
    K = crn_kernel(X, seeds, X, seeds, spec)
    K[np.diag_indices_from(K)] += spec.nugget
    _, jitter = cholesky_with_jitter(K, spec.variance)
    if jitter:
        K[np.diag_indices_from(K)] += jitter
    return K


def fit_crn_hyperparameters(
    data: EvaluationDataset,
    family: str = "matern52",
    bounds: HyperBounds = HyperBounds(),
    rng: np.random.Generator | None = None,
    init: KernelSpec | None = None,
    **kwargs,
) -> KernelSpec:
    """Marginal-likelihood fit with rho estimated jointly with the other parameters."""
    same = data.seeds[:, None] == data.seeds[None, :]
    return fit_hyperparameters(
        data, family, bounds, rng,
        fit_rho=True,
        seed_similarity=lambda rho: np.where(same, 1.0, rho),
        init=init,
        **kwargs,
    )


def _unique_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(X) == 0:
        return X, np.zeros(0, dtype=np.int64)
    ux, inverse = np.unique(X, axis=0, return_inverse=True)
    return ux, inverse.reshape(-1)


def kron_factors(ux: np.ndarray, useeds: Sequence[int], spec: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factors of K_x over unique x's and of the unit-diagonal seed matrix.

    (L_x kron L_r)(L_x kron L_r)^T is the CRN prior covariance over the cross
    product, ordered x-major (index = ix * n_seeds + ir).
    """
    L_x, _ = cholesky_with_jitter(kernel(ux, ux, spec), spec.variance)
    L_r, _ = cholesky_with_jitter(seed_similarity(useeds, useeds, spec.rho))
    return L_x, L_r


class CrnSurrogate:
    """Frozen CRN-GP posterior: one Cholesky of the training covariance, reused."""

    def __init__(self, data: EvaluationDataset, spec: KernelSpec, kron_cap: int = 40000, dense_cap: int = 6000):
        self.data = data
        self.spec = spec
        self.kron_cap = kron_cap
        self.dense_cap = dense_cap
        C = crn_kernel(data.x, data.seeds, data.x, data.seeds, spec)
        C[np.diag_indices_from(C)] += spec.nugget
        self.cond = GaussianConditioner(C, data.z, spec.variance)

    def _cross(self, X, seeds) -> np.ndarray:
        return crn_kernel(X, seeds, self.data.x, self.data.seeds, self.spec)

    def predict(self, X, seeds, latent: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance; ``latent`` drops the nugget from the variance."""
        X = np.atleast_2d(np.asarray(X, float))
        seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
        prior = self.spec.variance + (0.0 if latent else self.spec.nugget)
        return predictive(self.cond, self._cross(X, seeds), np.full(len(X), prior), self.data)

    def posterior_cov(self, X, seeds) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and full covariance on the response scale."""
        X = np.atleast_2d(np.asarray(X, float))
        seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
        Ks = self._cross(X, seeds)
        V = self.cond.whiten(Ks)
        cov = crn_kernel(X, seeds, X, seeds, self.spec) - V.T @ V
        m, s = self.data.standardization
        return m + s * self.cond.mean(Ks), s * s * cov

    def sample_marginal(self, X, seeds, rng: np.random.Generator) -> np.ndarray:
        """Independent latent draws at each query (no joint correlation)."""
        mean, var = self.predict(X, seeds, latent=True)
        return mean + np.sqrt(var) * rng.standard_normal(len(mean))

    def sample_joint(self, X, seeds, J: int, rng: np.random.Generator, method: str = "auto") -> np.ndarray:
        """J joint latent-posterior draws over the query set, shape (J, m).

        Unconditional prior draws over queries plus training inputs are
        conditioned pathwise: draw + posterior_mean(data) - posterior_mean(draw
        seen as data). The prior draw uses the Kronecker factor over the cross
        product of unique x's and seeds ("kron"), or a dense Cholesky ("dense").
        """
        X = np.atleast_2d(np.asarray(X, float))
        seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
        m = len(X)
        if J <= 0 or m == 0:
            return np.zeros((max(J, 0), m))
        data = self.data
        n = len(data)
        allX = np.vstack([X, data.x]) if n else X
        allS = np.concatenate([seeds, data.seeds]) if n else seeds
        ux, ix = _unique_rows(allX)
        useeds, ir = np.unique(allS, return_inverse=True)
        product = len(ux) * len(useeds)
        if method == "auto":
            method = "kron" if product <= self.kron_cap else "dense"
        if method == "kron":
            if product > self.kron_cap:
                raise SizeError(f"virtual product grid of {product} points exceeds cap {self.kron_cap}")
            f = self._prior_kron(ux, useeds, ix, ir, J, rng)
        elif method == "dense":
            f = self._prior_dense(allX, allS, J, rng)
        else:
            raise ValueError(f"unknown sampling method {method!r}")

        mean_std = self.cond.mean(self._cross(X, seeds)) if n else np.zeros(m)
        draws = f[:, :m]
        if n:
            noise_sd = np.sqrt(self.spec.nugget + self.cond.jitter)
            pseudo = f[:, m:] + noise_sd * rng.standard_normal((J, n))
            Ks = self._cross(X, seeds)
            correction = Ks @ self.cond.solve(pseudo.T)
            draws = draws - correction.T
        mu, s = data.standardization
        return mu + s * (mean_std[None, :] + draws)

    def _prior_kron(self, ux, useeds, ix, ir, J, rng) -> np.ndarray:
        L_x, L_r = kron_factors(ux, useeds, self.spec)
        Z = rng.standard_normal((J, len(ux), len(useeds)))
        F = L_x @ Z @ L_r.T
        return F[:, ix, ir]

    def _prior_dense(self, allX, allS, J, rng) -> np.ndarray:
        keys = [(row.tobytes(), s) for row, s in zip(allX, allS)]
        first: dict = {}
        idx = np.array([first.setdefault(k, len(first)) for k in keys])
        order = np.zeros(len(first), dtype=np.int64)
        order[idx] = np.arange(len(idx))
        uX, uS = allX[order], allS[order]
        if len(uX) > self.dense_cap:
            raise SizeError(f"dense sampling over {len(uX)} points exceeds cap {self.dense_cap}")
        L, _ = cholesky_with_jitter(crn_kernel(uX, uS, uX, uS, self.spec), self.spec.variance)
        F = rng.standard_normal((J, len(uX))) @ L.T
        return F[:, idx]


def crn_posterior(data: EvaluationDataset, spec: KernelSpec, X, seeds) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance (nugget included) at augmented queries."""
    return CrnSurrogate(data, spec).predict(X, seeds)


def joint_sample(
    data: EvaluationDataset,
    spec: KernelSpec,
    X,
    seeds,
    J: int,
    rng: np.random.Generator,
    method: str = "auto",
) -> np.ndarray:
    return CrnSurrogate(data, spec).sample_joint(X, seeds, J, rng, method)
