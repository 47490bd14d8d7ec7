"""Zero-mean Gaussian-process regression on standardized responses.

Inputs live on the unit cube. Everything here is plain numpy/scipy linear
algebra; the CRN and heteroskedastic surrogates reuse the same conditioning
and fitting machinery with their own covariance builders.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import NumericalError

FAMILIES = ("matern52", "sqexp")
LOG_2PI = math.log(2.0 * math.pi)

JITTER_START = 1e-8
JITTER_STOP = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters.

    ``rho`` is the similarity between different seeds and is only consulted by
    the CRN covariance. ``warning`` is set when fitting fell back to heuristics.
    """

    lengthscales: tuple[float, ...]
    variance: float = 1.0
    nugget: float = 0.0
    rho: float = 0.5
    family: str = "matern52"
    warning: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in np.atleast_1d(self.lengthscales)))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not all(v > 0 for v in self.lengthscales):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not self.nugget >= 0:
            raise ValueError(f"nugget must be nonnegative, got {self.nugget}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


@dataclass
class EvaluationDataset:
    """Evaluated augmented inputs and their scalar discrepancies.

    ``x`` is (n, d) on the unit cube, ``seeds`` is (n,) integer. The
    standardization ``(mean, scale)`` defaults to the sample mean and standard
    deviation of ``y``; pass ``(0.0, 1.0)`` to work on the raw scale.
    """

    x: np.ndarray
    seeds: np.ndarray
    y: np.ndarray
    standardization: tuple[float, float] | None = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x.size == 0:
            self.x = self.x.reshape(0, self.x.shape[-1] if self.x.ndim == 2 else 0)
        self.seeds = np.asarray(self.seeds, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n = len(self.y)
        if self.x.shape[0] != n or len(self.seeds) != n:
            raise ValueError(
                f"inputs ({self.x.shape[0]}), seeds ({len(self.seeds)}) and responses ({n}) differ in length"
            )
        keys = {(row.tobytes(), int(s)) for row, s in zip(self.x, self.seeds)}
        if len(keys) != n:
            raise ValueError("duplicate augmented input in dataset")
        if self.standardization is None:
            mean = float(self.y.mean()) if n else 0.0
            scale = float(self.y.std()) if n > 1 else 1.0
            if not np.isfinite(scale) or scale <= 0:
                scale = 1.0
            self.standardization = (mean, scale)
        if not self.standardization[1] > 0:
            raise ValueError("standardization scale must be positive")

    @classmethod
    def empty(cls, dim: int) -> "EvaluationDataset":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def z(self) -> np.ndarray:
        mean, scale = self.standardization
        return (self.y - mean) / scale


def _check_x(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if dim else x.reshape(1, -1)
    return x


def correlation_from_sqdist(sqdist: np.ndarray, family: str) -> np.ndarray:
    if family == "sqexp":
        return np.exp(-0.5 * sqdist)
    r = np.sqrt(5.0 * np.maximum(sqdist, 0.0))
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


def scaled_sqdist(X1: np.ndarray, X2: np.ndarray, lengthscales: Sequence[float]) -> np.ndarray:
    ls = np.asarray(lengthscales, dtype=float)
    A = X1 / ls
    B = X2 / ls
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel(X1, X2, spec: KernelSpec) -> np.ndarray:
    """Process covariance sigma_f^2 * corr(X1, X2), without nugget."""
    X1 = _check_x(X1, spec.dim)
    X2 = _check_x(X2, spec.dim)
    return spec.variance * correlation_from_sqdist(scaled_sqdist(X1, X2, spec.lengthscales), spec.family)


def cholesky_with_jitter(K: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding diagonal jitter only if plain factorization fails.

    Jitter starts at 1e-8 * scale and grows tenfold up to 1e-4 * scale.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    jitter = 0.0
    while True:
        try:
            A = K if jitter == 0.0 else K + jitter * np.eye(n)
            return linalg.cholesky(A, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_STOP * scale * (1 + 1e-9):
                raise NumericalError(
                    f"covariance of size {n} not positive definite with jitter up to {JITTER_STOP * scale:g}"
                ) from None


def build_covariance(X, spec: KernelSpec) -> np.ndarray:
    """K_N + tau^2 I over the rows of X, plus jitter when needed to factorize."""
    X = _check_x(X, spec.dim)
    K = kernel(X, X, spec)
    K[np.diag_indices_from(K)] += spec.nugget
    _, jitter = cholesky_with_jitter(K, spec.variance)
    if jitter:
        K[np.diag_indices_from(K)] += jitter
    return K


class GaussianConditioner:
    """Cached Cholesky solve for conditioning a zero-mean Gaussian on data.

    ``C`` is the training covariance (noise included) and ``z`` the
    standardized responses.
    """

    def __init__(self, C: np.ndarray, z: np.ndarray, scale: float = 1.0):
        self.L, self.jitter = cholesky_with_jitter(C, scale)
        self.z = np.asarray(z, dtype=float)
        if len(self.z):
            self.alpha = linalg.cho_solve((self.L, True), self.z, check_finite=False)
        else:
            self.alpha = np.zeros(0)

    @property
    def n(self) -> int:
        return len(self.z)

    def mean(self, Ks: np.ndarray) -> np.ndarray:
        """Ks is (m, n): cross-covariance between queries and training points."""
        if self.n == 0:
            return np.zeros(Ks.shape[0])
        return Ks @ self.alpha

    def whiten(self, Ks: np.ndarray) -> np.ndarray:
        """V = L^{-1} Ks^T, so Ks C^{-1} Ks^T = V^T V."""
        if self.n == 0:
            return np.zeros((0, Ks.shape[0]))
        return linalg.solve_triangular(self.L, Ks.T, lower=True, check_finite=False)

    def solve(self, B: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.L, True), B, check_finite=False)

    def log_likelihood(self) -> float:
        n = self.n
        return float(-0.5 * self.z @ self.alpha - np.log(np.diag(self.L)).sum() - 0.5 * n * LOG_2PI)


def predictive(cond: GaussianConditioner, Ks: np.ndarray, prior_var: np.ndarray, data: EvaluationDataset):
    """Means and clamped variances, mapped back to the response scale."""
    mean_std = cond.mean(Ks)
    V = cond.whiten(Ks)
    var_std = np.maximum(prior_var - np.einsum("ij,ij->j", V, V), 0.0)
    m, s = data.standardization
    return m + s * mean_std, s * s * var_std


def posterior(data: EvaluationDataset, spec: KernelSpec, Xstar) -> tuple[np.ndarray, np.ndarray]:
    """Kriging mean and predictive variance (nugget included) at ``Xstar``.

    Seeds in ``data`` are ignored: this is the plain GP over x.
    """
    Xstar = _check_x(Xstar, spec.dim)
    prior_var = np.full(len(Xstar), spec.variance + spec.nugget)
    if len(data) == 0:
        m, s = data.standardization
        return np.full(len(Xstar), m), s * s * prior_var
    C = kernel(data.x, data.x, spec)
    C[np.diag_indices_from(C)] += spec.nugget
    cond = GaussianConditioner(C, data.z, spec.variance)
    return predictive(cond, kernel(Xstar, data.x, spec), prior_var, data)


def log_marginal_likelihood(data: EvaluationDataset, spec: KernelSpec) -> float:
    """Gaussian log evidence of the standardized responses under K_N + tau^2 I."""
    C = kernel(data.x, data.x, spec)
    C[np.diag_indices_from(C)] += spec.nugget
    return GaussianConditioner(C, data.z, spec.variance).log_likelihood()


@dataclass(frozen=True)
class HyperBounds:
    """Box constraints for fitting, on the standardized scale; lo == hi pins a value."""

    lengthscale: tuple[float, float] = (0.01, 2.0)
    variance: tuple[float, float] = (0.01, 100.0)
    nugget: tuple[float, float] = (1e-8, 1.0)
    rho: tuple[float, float] = (0.05, 0.95)


@dataclass
class _LogBox:
    names: list[str]
    lower: np.ndarray
    upper: np.ndarray
    free: np.ndarray = field(init=False)

    def __post_init__(self):
        self.free = self.upper > self.lower

    def full(self, theta_free: np.ndarray) -> np.ndarray:
        theta = self.lower.copy()
        theta[self.free] = np.clip(theta_free, self.lower[self.free], self.upper[self.free])
        return theta


def _latin_starts(n: int, lower: np.ndarray, upper: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = len(lower)
    u = (np.argsort(rng.random((n, d)), axis=0) + rng.random((n, d))) / n
    return lower + u * (upper - lower)


def maximize_in_log_box(
    objective: Callable[[np.ndarray], float],
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
    n_starts: int = 5,
    init: np.ndarray | None = None,
    maxfev: int = 200,
) -> tuple[np.ndarray | None, float]:
    """Multi-start bounded Nelder-Mead on a log-parameter box.

    Dimensions with lower == upper are held fixed. Returns ``(None, -inf)`` if
    no start produced a finite objective.
    """
    box = _LogBox([], np.asarray(lower, float), np.asarray(upper, float))
    if not box.free.any():
        value = objective(box.lower)
        return (box.lower.copy(), value) if np.isfinite(value) else (None, -np.inf)

    lo, hi = box.lower[box.free], box.upper[box.free]

    def neg(theta_free):
        value = objective(box.full(theta_free))
        return -value if np.isfinite(value) else 1e300

    starts = list(_latin_starts(n_starts, lo, hi, rng))
    if init is not None:
        starts.insert(0, np.clip(np.asarray(init, float)[box.free], lo, hi))
    best_theta, best_value = None, -np.inf
    for start in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(
                neg, start, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                options={"maxfev": maxfev, "xatol": 1e-3, "fatol": 1e-4},
            )
        if res.fun < 1e300 and -res.fun > best_value:
            best_theta, best_value = box.full(res.x), -float(res.fun)
    return best_theta, best_value


def median_heuristic_spec(x: np.ndarray, family: str, bounds: HyperBounds, warning: str) -> KernelSpec:
    d = x.shape[1]
    ls = np.full(d, 0.5)
    if len(x) > 1:
        for k in range(d):
            gaps = np.abs(x[:, None, k] - x[None, :, k])[np.triu_indices(len(x), 1)]
            gaps = gaps[gaps > 0]
            if gaps.size:
                ls[k] = np.median(gaps)
    ls = np.clip(ls, *bounds.lengthscale)
    return KernelSpec(
        lengthscales=tuple(ls),
        variance=float(np.clip(1.0, *bounds.variance)),
        nugget=float(np.clip(1e-6, *bounds.nugget)),
        rho=float(np.clip(0.5, *bounds.rho)),
        family=family,
        warning=warning,
    )


def is_degenerate(data: EvaluationDataset) -> bool:
    if len(data) < 2 or np.ptp(data.y) == 0:
        return True
    return len(np.unique(data.x, axis=0)) < 2


def fit_hyperparameters(
    data: EvaluationDataset,
    family: str = "matern52",
    bounds: HyperBounds = HyperBounds(),
    rng: np.random.Generator | None = None,
    *,
    fit_rho: bool = False,
    seed_similarity: Callable[[float], np.ndarray] | None = None,
    init: KernelSpec | None = None,
    n_starts: int = 5,
    maxfev: int = 200,
) -> KernelSpec:
    """Maximize the log marginal likelihood over log-hyperparameters.

    With ``fit_rho`` the covariance is multiplied elementwise by
    ``seed_similarity(rho)``, which is how the CRN surrogate reuses this.
    Degenerate data (fewer than two distinct inputs, or constant responses)
    and total optimizer failure return a median-heuristic spec with
    ``warning`` set.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if is_degenerate(data):
        return median_heuristic_spec(data.x, family, bounds, "degenerate data: heuristic hyperparameters")
    d = data.dim
    n = len(data)
    sq = [(data.x[:, None, k] - data.x[None, :, k]) ** 2 for k in range(d)]
    z = data.z
    eye = np.eye(n)

    lower = np.log([*[bounds.lengthscale[0]] * d, bounds.variance[0], bounds.nugget[0], bounds.rho[0]])
    upper = np.log([*[bounds.lengthscale[1]] * d, bounds.variance[1], bounds.nugget[1], bounds.rho[1]])
    if not fit_rho:
        rho_fixed = math.log(init.rho if init is not None else float(np.clip(0.5, *bounds.rho)))
        lower[-1] = upper[-1] = rho_fixed

    def objective(theta: np.ndarray) -> float:
        p = np.exp(theta)
        ls, var, nug, rho = p[:d], p[d], p[d + 1], p[d + 2]
        sqdist = sum(s / (l * l) for s, l in zip(sq, ls))
        C = var * correlation_from_sqdist(sqdist, family)
        if seed_similarity is not None:
            C *= seed_similarity(rho)
        C += nug * eye
        try:
            L, _ = cholesky_with_jitter(C, var)
        except NumericalError:
            return -np.inf
        a = linalg.solve_triangular(L, z, lower=True, check_finite=False)
        return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)

    init_theta = None
    if init is not None and init.dim == d:
        init_theta = np.clip(
            np.log([*init.lengthscales, init.variance, max(init.nugget, 1e-300), init.rho]), lower, upper
        )
    theta, _ = maximize_in_log_box(objective, lower, upper, rng, n_starts, init_theta, maxfev)
    if theta is None:
        return median_heuristic_spec(data.x, family, bounds, "all optimizer starts failed: heuristic hyperparameters")
    p = np.exp(theta)
    # pinned bounds come back exactly, not via exp(log(.))
    vals = []
    for i, (lo, hi) in enumerate([*[bounds.lengthscale] * d, bounds.variance, bounds.nugget, bounds.rho]):
        vals.append(lo if lo == hi else float(np.clip(p[i], lo, hi)))
    rho = vals[d + 2] if fit_rho else (init.rho if init is not None else float(np.clip(0.5, *bounds.rho)))
    return KernelSpec(tuple(vals[:d]), vals[d], vals[d + 1], rho, family)


def with_params(spec: KernelSpec, **changes) -> KernelSpec:
    return replace(spec, **changes)
