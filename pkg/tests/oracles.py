"""Independent reference implementations used as test oracles.

These deliberately avoid the package's code paths: explicit loops for the
kernels, ``numpy.linalg.solve``/``det`` instead of Cholesky.
"""
import math

import numpy as np


def k_scalar(a, b, ls, var, family):
    r2 = sum(((ai - bi) / li) ** 2 for ai, bi, li in zip(a, b, ls))
    if family == "sqexp":
        return var * math.exp(-0.5 * r2)
    r = math.sqrt(5.0 * r2)
    return var * (1.0 + r + r * r / 3.0) * math.exp(-r)


def k_matrix(X1, X2, ls, var, family):
    return np.array([[k_scalar(a, b, ls, var, family) for b in X2] for a in X1])


def crn_matrix(X1, s1, X2, s2, ls, var, rho, family):
    K = k_matrix(X1, X2, ls, var, family)
    for i in range(len(X1)):
        for j in range(len(X2)):
            if s1[i] != s2[j]:
                K[i, j] *= rho
    return K


def dense_posterior(K, Ks, Kss_diag, y, noise):
    """Mean and variance via a plain linear solve on (K + noise)."""
    C = K + np.diag(noise) if np.ndim(noise) else K + noise * np.eye(len(K))
    mean = Ks @ np.linalg.solve(C, y)
    var = Kss_diag - np.einsum("ij,ji->i", Ks, np.linalg.solve(C, Ks.T))
    return mean, var


def dense_log_likelihood(C, z):
    n = len(z)
    return -0.5 * z @ np.linalg.solve(C, z) - 0.5 * math.log(np.linalg.det(C)) - 0.5 * n * math.log(2 * math.pi)


def standardize(y):
    y = np.asarray(y, float)
    mean = y.mean()
    sd = y.std() if len(y) > 1 else 1.0
    sd = sd if sd > 0 else 1.0
    return mean, sd


def sample_cov_within(draws, mean, cov, n_se=5.0):
    """Entrywise check of sample mean/covariance against analytic values, Gaussian standard errors."""
    n = len(draws)
    emp = np.cov(draws, rowvar=False)
    d = np.diag(cov)
    se = np.sqrt((np.outer(d, d) + cov**2) / n)
    se_mean = np.sqrt(np.maximum(d, 1e-300) / n)
    return np.abs(emp - cov) <= n_se * se + 1e-12, np.abs(draws.mean(0) - mean) <= n_se * se_mean + 1e-12
