import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.special import gammaln
from scipy.stats import multivariate_normal

from mprim.dpm import (DpmComponent, DpmModel, McmcConfig, NormalWishartPrior, adjusted_rand_index,
                       component_assign, estimate_alpha, fit_dpm, model_from_partition, predictive_logdensity,
                       prune_threshold, run_chains)
from mprim.errors import DimensionMismatch, EmptyData, InvalidPrior, NonFiniteData

FAST = McmcConfig(iters=60, burnin=20, chains=2, seed=3)


def three_clouds(seed=0, n=100, sep=10.0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0], [sep, 0, 0], [0, sep, 0]], float)
    X = np.vstack([c + rng.normal(size=(n, 3)) for c in centers])
    return X, np.repeat(np.arange(3), n)


def random_model(rng, k=3, d=3):
    w = rng.dirichlet(np.ones(k))
    comps = []
    for j in range(k):
        A = rng.normal(size=(d, d))
        comps.append(DpmComponent(float(w[j]), rng.normal(scale=3, size=d), A @ A.T + np.eye(d)))
    return DpmModel(tuple(comps), 1.0)


def test_prior_validation():
    with pytest.raises(InvalidPrior):
        NormalWishartPrior(np.zeros(2), 0.0, 3.0, np.eye(2))
    with pytest.raises(InvalidPrior):
        NormalWishartPrior(np.zeros(2), 1.0, 0.5, np.eye(2))
    with pytest.raises(InvalidPrior):
        NormalWishartPrior(np.zeros(2), 1.0, 3.0, -np.eye(2))


def test_data_errors():
    with pytest.raises(EmptyData):
        fit_dpm(np.zeros((0, 3)))
    with pytest.raises(NonFiniteData):
        fit_dpm(np.array([[0.0, np.nan]]))


def test_single_datum():
    x = np.array([[1.0, 2.0, 3.0]])
    prior = NormalWishartPrior(np.zeros(3), 0.5, 5.0, np.eye(3))
    m = fit_dpm(x, prior, config=FAST)
    assert m.k == 1
    assert np.allclose(m.components[0].mean, x[0] / 1.5)


def test_identical_points():
    m = fit_dpm(np.ones((40, 2)), config=FAST)
    assert m.k == 1 and m.components[0].weight == 1.0


def test_three_clouds():
    X, truth = three_clouds()
    m = fit_dpm(X, config=McmcConfig(iters=150, burnin=50, chains=2, seed=0))
    assert m.k == 3
    assert adjusted_rand_index(m.labels, truth) >= 0.95


def test_partition_valid_every_chain():
    X, _ = three_clouds(1, 40)
    for ch in run_chains(X, config=FAST):
        assert ch.labels.shape == (len(X),) and ch.labels.min() == 0
        assert set(np.unique(ch.labels)) == set(range(ch.labels.max() + 1))
        assert np.all(ch.k_trace >= 1)


def test_exchangeability_smoke():
    X, truth = three_clouds(2)
    cfg = McmcConfig(iters=150, burnin=50, chains=2, seed=0)
    perm = np.random.default_rng(9).permutation(len(X))
    a = adjusted_rand_index(fit_dpm(X, config=cfg).labels, truth)
    b = adjusted_rand_index(fit_dpm(X[perm], config=cfg).labels, truth[perm])
    assert abs(a - b) < 0.05


def test_model_json_round_trip():
    m = random_model(np.random.default_rng(0))
    back = DpmModel.from_json(m.to_json())
    assert set(json.loads(m.to_json())) == {"alpha", "components"}
    x = np.random.default_rng(1).normal(size=(10, 3))
    assert np.allclose(predictive_logdensity(back, x), predictive_logdensity(m, x))


def test_predictive_examples():
    cov = np.diag([1.0, 2.0, 3.0])
    one = DpmModel((DpmComponent(1.0, np.zeros(3), cov),), 1.0)
    expected = -1.5 * math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
    assert predictive_logdensity(one, np.zeros(3)) == pytest.approx(expected, abs=1e-12)
    two = DpmModel((DpmComponent(0.5, np.zeros(3), cov), DpmComponent(0.5, np.zeros(3), cov)), 1.0)
    x = np.array([0.3, -1.0, 2.0])
    assert predictive_logdensity(two, x) == pytest.approx(predictive_logdensity(one, x), abs=1e-12)
    with pytest.raises(DimensionMismatch):
        predictive_logdensity(one, np.zeros(2))


def test_predictive_direct_sum():
    rng = np.random.default_rng(4)
    m = random_model(rng)
    X = rng.normal(scale=3, size=(100, 3))
    direct = np.log(sum(c.weight * multivariate_normal(c.mean, c.cov).pdf(X) for c in m.components))
    assert np.allclose(predictive_logdensity(m, X), direct, atol=1e-10)


def test_component_assign_examples():
    cov = np.eye(2)
    m = DpmModel((DpmComponent(0.5, np.array([-5.0, 0]), cov), DpmComponent(0.5, np.array([5.0, 0]), cov)), 1.0)
    assert component_assign(m, np.array([5.0, 0])) == 1
    assert component_assign(m, np.array([0.0, 3.0])) == 0
    rng = np.random.default_rng(5)
    r = random_model(rng)
    X = rng.normal(scale=3, size=(500, 3))
    brute = np.argmax([[c.weight * multivariate_normal(c.mean, c.cov).pdf(x) for c in r.components]
                       for x in X], axis=1)
    assert np.array_equal(component_assign(r, X), brute)


def _alpha_posterior_mean(k, n, a=1.0, b=1.0):
    # p(alpha | k) ~ Gamma(a, b) alpha^(k-1) (alpha + n) B(alpha + 1, n)
    def logp(al):
        return ((a - 1) * math.log(al) - b * al + (k - 1) * math.log(al) + math.log(al + n)
                + gammaln(al + 1) + gammaln(n) - gammaln(al + 1 + n))
    ref = logp(max(0.1, (k - 1) / math.log(n)))
    z = quad(lambda al: math.exp(logp(al) - ref), 1e-9, 200, limit=400)[0]
    return quad(lambda al: al * math.exp(logp(al) - ref), 1e-9, 200, limit=400)[0] / z


def test_estimate_alpha_matches_grid_posterior():
    for k in (1, 5):
        draws, mode = estimate_alpha([k] * 4000, 1000, seed=1)
        assert np.mean(draws[500:]) == pytest.approx(_alpha_posterior_mean(k, 1000), rel=0.1)
    draws, _ = estimate_alpha([1] * 2000, 10000, seed=2)
    assert np.median(draws) < 1.0  # below the prior mean a / b


def test_estimate_alpha_singletons_larger():
    n = 50
    small = [estimate_alpha([1], n, seed=s, alpha0=1.0)[0][0] for s in range(1000)]
    large = [estimate_alpha([n], n, seed=s, alpha0=1.0)[0][0] for s in range(1000)]
    assert np.median(large) > np.median(small)
    with pytest.raises(InvalidPrior):
        estimate_alpha([1], 10, gamma_prior=(0.0, 1.0))


@given(st.integers(0, 2**31 - 1), st.integers(10, 300))
def test_prune_weights_normalized(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    labels = rng.integers(0, rng.integers(1, 20), size=n)
    prior = NormalWishartPrior.from_data(X)
    m = model_from_partition(X, labels, prior, 1.0)
    w = np.array([c.weight for c in m.components])
    assert abs(w.sum() - 1.0) <= 1e-12
    sizes = np.bincount(m.labels)
    assert m.k == 1 or sizes.min() >= prune_threshold(n)
    assert sorted(i for c in m.components for i in c.members) == list(range(n))


@given(st.integers(0, 2**31 - 1))
def test_predictive_lipschitz(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    x = rng.normal(scale=3, size=3)
    d = rng.normal(size=3)
    d *= 1e-6 / np.linalg.norm(d)
    # gradient bound of log-mixture: max over components of |Sigma^-1 (x - mu)| near x
    L = max(np.linalg.norm(np.linalg.solve(c.cov, x - c.mean)) + np.linalg.norm(np.linalg.inv(c.cov), 2) * 1e-6
            for c in m.components)
    assert abs(predictive_logdensity(m, x) - predictive_logdensity(m, x + d)) <= L * 1e-6 * (1 + 1e-6) + 1e-12


@given(st.lists(st.integers(0, 4), min_size=2, max_size=40), st.integers(0, 2**31 - 1))
def test_ari_properties(a, seed):
    a = np.array(a)
    assert adjusted_rand_index(a, a) == pytest.approx(1.0)
    perm = np.random.default_rng(seed).permutation(5)
    assert adjusted_rand_index(a, perm[a]) == pytest.approx(1.0)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=2, max_size=60))
def test_ari_matches_reference(pairs):
    from sklearn.metrics import adjusted_rand_score
    a, b = np.array(pairs).T
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
