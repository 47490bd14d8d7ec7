import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crnts.crngp import (
    AugmentedInput,
    CrnSurrogate,
    SeedSet,
    crn_covariance,
    crn_posterior,
    fit_crn_hyperparameters,
    joint_sample,
    kron_factors,
    stack_points,
)
from crnts.errors import SizeError
from crnts.gp import EvaluationDataset, HyperBounds, KernelSpec, build_covariance
from oracles import crn_matrix, dense_posterior, sample_cov_within


@given(st.integers(1, 10), st.integers(1, 4), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_covariance_matches_elementwise_formula(n, n_seeds, rho, seed):
    r = np.random.default_rng(seed)
    X = r.random((n, 2))
    seeds = r.integers(0, n_seeds, n)
    spec = KernelSpec(tuple(r.uniform(0.1, 1, 2)), float(r.uniform(0.5, 3)), nugget=0.1, rho=rho)
    K = crn_covariance(X, seeds, spec)
    ref = crn_matrix(X, seeds, X, seeds, spec.lengthscales, spec.variance, rho, spec.family) + 0.1 * np.eye(n)
    np.testing.assert_allclose(K, ref, rtol=0, atol=1e-12)


def test_single_seed_reduces_to_plain_gp(rng):
    X = rng.random((7, 2))
    spec = KernelSpec((0.3, 0.6), 1.4, nugget=0.02, rho=0.3)
    assert np.array_equal(crn_covariance(X, np.full(7, 5), spec), build_covariance(X, spec))


def test_same_x_different_seeds():
    spec = KernelSpec((0.3, 0.6), 1.4, nugget=0.02, rho=0.3)
    X = np.array([[0.5, 0.5], [0.5, 0.5]])
    K = crn_covariance(X, [1, 2], spec)
    assert K[0, 1] == pytest.approx(0.3 * 1.4)
    assert K[0, 0] == pytest.approx(1.42)


def test_high_rho_block_factorizes():
    rho = 0.95
    spec = KernelSpec((0.3,), 1.0, nugget=0.0, rho=rho)
    K = crn_covariance([[0.4], [0.4]], [1, 2], spec)
    np.linalg.cholesky(K)
    eig = np.linalg.eigvalsh(K)
    assert np.linalg.cond(K) == pytest.approx(eig.max() / eig.min(), rel=1e-8)
    assert eig.max() / eig.min() == pytest.approx((1 + rho) / (1 - rho), rel=1e-8)


def test_augmented_input_and_seedset():
    X, s = stack_points([AugmentedInput((0.1, 0.2), 3), AugmentedInput((0.3, 0.4), 5)])
    assert X.shape == (2, 2) and list(s) == [3, 5]
    with pytest.raises(ValueError):
        SeedSet((1, 1))
    assert 3 in SeedSet((3, 4))


def three_point():
    X = np.array([[0.2, 0.3], [0.6, 0.6], [0.2, 0.3]])
    seeds = np.array([1, 1, 2])
    y = np.array([4.0, -2.0, 1.0])
    return EvaluationDataset(X, seeds, y)


def test_interpolation_at_training_point():
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.0, rho=0.6)
    mean, var = crn_posterior(data, spec, data.x, data.seeds)
    np.testing.assert_allclose(mean, data.y, atol=1e-8)
    np.testing.assert_allclose(var, 0.0, atol=1e-8)


def test_matches_dense_oracle(rng):
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.05, rho=0.6)
    Xs = np.array([[0.2, 0.3], [0.5, 0.1], [0.2, 0.3]])
    ss = np.array([1, 1, 99])
    mean, var = crn_posterior(data, spec, Xs, ss)
    m, s = data.standardization
    K = crn_matrix(data.x, data.seeds, data.x, data.seeds, spec.lengthscales, 1.0, 0.6, spec.family)
    Ks = crn_matrix(Xs, ss, data.x, data.seeds, spec.lengthscales, 1.0, 0.6, spec.family)
    mo, vo = dense_posterior(K, Ks, np.full(3, 1.05), data.z, 0.05)
    np.testing.assert_allclose(mean, m + s * mo, atol=1e-8)
    np.testing.assert_allclose(var, s * s * vo, atol=1e-8)


def test_fresh_seed_shrinks_toward_prior():
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.01, rho=0.5)
    x = data.x[:1]
    trained, _ = crn_posterior(data, spec, x, [1])
    fresh, _ = crn_posterior(data, spec, x, [77])
    m = data.standardization[0]
    assert abs(fresh[0] - m) < abs(trained[0] - m)


def test_small_rho_larger_fresh_seed_variance():
    data = three_point()
    x = data.x[:1]
    _, v_hi = crn_posterior(data, KernelSpec((0.4, 0.4), 1.0, nugget=0.01, rho=0.95), x, [77])
    _, v_lo = crn_posterior(data, KernelSpec((0.4, 0.4), 1.0, nugget=0.01, rho=0.05), x, [77])
    assert v_lo[0] > v_hi[0]


def test_kronecker_factor_reproduces_dense():
    ux = np.random.default_rng(2).random((4, 2))
    useeds = [11, 22, 33]
    spec = KernelSpec((0.3, 0.5), 1.7, nugget=0.0, rho=0.4)
    L_x, L_r = kron_factors(ux, useeds, spec)
    L = np.kron(L_x, L_r)
    X = np.repeat(ux, 3, axis=0)
    S = np.tile(useeds, 4)
    dense = crn_matrix(X, S, X, S, spec.lengthscales, spec.variance, 0.4, spec.family)
    np.testing.assert_allclose(L @ L.T, dense, atol=1e-10)


def test_prior_draws_centered():
    spec = KernelSpec((0.3, 0.5), 1.0, rho=0.4)
    X = np.random.default_rng(2).random((5, 2))
    draws = joint_sample(EvaluationDataset.empty(2), spec, X, [1, 2, 1, 2, 3], 10_000, np.random.default_rng(0))
    assert draws.shape == (10_000, 5)
    assert (np.abs(draws.mean(0)) < 3 * np.sqrt(1.0 / 10_000)).all()


@pytest.mark.parametrize("method", ["kron", "dense"])
def test_conditional_draws_pin_training_points(method):
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.0, rho=0.6)
    draws = joint_sample(data, spec, data.x, data.seeds, 20, np.random.default_rng(0), method)
    np.testing.assert_allclose(draws, np.broadcast_to(data.y, draws.shape), atol=1e-6)


@pytest.mark.parametrize("method", ["kron", "dense"])
def test_sample_covariance_matches_posterior(method):
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.05, rho=0.6)
    sur = CrnSurrogate(data, spec)
    Xq = np.repeat(np.array([[0.2, 0.3], [0.4, 0.5], [0.8, 0.1]]), 2, axis=0)
    sq = np.tile([1, 5], 3)
    mean, cov = sur.posterior_cov(Xq, sq)
    draws = sur.sample_joint(Xq, sq, 10_000, np.random.default_rng(4), method)
    ok_cov, ok_mean = sample_cov_within(draws, mean, cov)
    assert ok_cov.all() and ok_mean.all()


def test_size_caps():
    data = three_point()
    spec = KernelSpec((0.4, 0.4), 1.0, nugget=0.05, rho=0.6)
    sur = CrnSurrogate(data, spec, kron_cap=10, dense_cap=5)
    X = np.random.default_rng(0).random((6, 2))
    with pytest.raises(SizeError):
        sur.sample_joint(X, np.arange(6), 2, np.random.default_rng(0), "kron")
    with pytest.raises(SizeError):
        sur.sample_joint(X, np.arange(6), 2, np.random.default_rng(0), "auto")
    assert sur.sample_joint(X, np.arange(6), 0, np.random.default_rng(0)).shape == (0, 6)


def test_fit_rho_stays_in_bounds():
    r = np.random.default_rng(5)
    x = r.random((6, 2))
    X = np.repeat(x, 3, axis=0)
    seeds = np.tile([1, 2, 3], 6)
    offsets = {1: 0.0, 2: 0.5, 3: -0.5}
    y = np.sin(4 * X[:, 0]) + np.array([offsets[s] for s in seeds]) + 0.01 * r.normal(size=18)
    spec = fit_crn_hyperparameters(EvaluationDataset(X, seeds, y), rng=np.random.default_rng(0))
    lo, hi = HyperBounds().rho
    assert lo <= spec.rho <= hi
    assert spec.warning is None
