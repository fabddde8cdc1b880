from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from dynpanel.families import category_probs, logpdf, mean, simulate

RNG = np.random.default_rng(5)


def _oracle(family, y, eta, aux, n):
    if family == "gaussian":
        return stats.norm.logpdf(y, eta, aux)
    if family == "poisson":
        return stats.poisson.logpmf(y, np.exp(eta))
    if family == "negbin":
        mu = np.exp(eta)
        return stats.nbinom.logpmf(y, aux, aux / (aux + mu))
    if family == "bernoulli":
        return stats.bernoulli.logpmf(y, expit(eta))
    if family == "binomial":
        return stats.binom.logpmf(y, n, expit(eta))
    if family == "exponential":
        return stats.expon.logpdf(y, scale=np.exp(eta))
    if family == "gamma":
        return stats.gamma.logpdf(y, aux, scale=np.exp(eta) / aux)
    if family == "beta":
        mu = expit(eta)
        return stats.beta.logpdf(y, mu * aux, (1 - mu) * aux)
    raise AssertionError(family)


CASES = {
    "gaussian": np.array([-1.3, 0.0, 2.5]),
    "poisson": np.array([0.0, 3.0, 11.0]),
    "negbin": np.array([0.0, 4.0, 20.0]),
    "bernoulli": np.array([0.0, 1.0, 1.0]),
    "binomial": np.array([0.0, 4.0, 10.0]),
    "exponential": np.array([0.1, 1.0, 4.0]),
    "gamma": np.array([0.2, 1.5, 6.0]),
    "beta": np.array([0.05, 0.5, 0.93]),
}


@pytest.mark.parametrize("family", list(CASES))
def test_logpdf_matches_scipy(family):
    y = CASES[family]
    eta = np.array([-0.7, 0.3, 1.2])
    aux, n = 1.7, np.full(3, 10.0)
    lp, _, _ = logpdf(family, y, eta, aux, n)
    np.testing.assert_allclose(lp, _oracle(family, y, eta, aux, n), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("family", list(CASES))
def test_gradients_by_finite_difference(family):
    y = CASES[family]
    eta = np.array([-0.7, 0.3, 1.2])
    aux, n, h = 1.7, np.full(3, 10.0), 1e-6
    _, d_eta, d_aux = logpdf(family, y, eta, aux, n)
    fd = (logpdf(family, y, eta + h, aux, n)[0] - logpdf(family, y, eta - h, aux, n)[0]) / (2 * h)
    np.testing.assert_allclose(d_eta, fd, rtol=1e-6, atol=1e-7)
    if d_aux is not None:
        fd = (logpdf(family, y, eta, aux + h, n)[0] - logpdf(family, y, eta, aux - h, n)[0]) / (2 * h)
        np.testing.assert_allclose(d_aux, fd, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("family,aux", [("gaussian", 0.8), ("exponential", None), ("gamma", 2.5),
                                        ("beta", 4.0)])
def test_continuous_densities_integrate_to_one(family, aux):
    eta = 0.4
    lo, hi = {"gaussian": (-np.inf, np.inf), "beta": (0, 1)}.get(family, (0, np.inf))
    total, _ = integrate.quad(lambda v: np.exp(logpdf(family, np.array(v), np.array(eta), aux)[0]), lo, hi)
    assert total == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("family,aux", [("poisson", None), ("negbin", 2.0), ("bernoulli", None)])
def test_discrete_masses_sum_to_one(family, aux):
    y = np.arange(0, 400, dtype=float) if family != "bernoulli" else np.array([0.0, 1.0])
    lp = logpdf(family, y, np.full_like(y, 0.9), aux)[0]
    assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-10)


def test_categorical_logpdf_and_gradient():
    eta = np.array([[0.3, -1.0], [2.0, 0.5]])
    y = np.array([0, 2])
    lp, g, _ = logpdf("categorical", y, eta)
    p = category_probs(eta)
    np.testing.assert_allclose(lp, np.log(p[[0, 1], y]))
    h = 1e-6
    for k in range(2):
        e = np.zeros_like(eta)
        e[:, k] = h
        fd = (logpdf("categorical", y, eta + e)[0] - logpdf("categorical", y, eta - e)[0]) / (2 * h)
        np.testing.assert_allclose(g[:, k], fd, rtol=1e-6, atol=1e-8)


def test_softmax_shift_invariance():
    eta = RNG.normal(size=(5, 3))
    full = np.concatenate([np.zeros((5, 1)), eta], axis=1)
    shifted = full + RNG.normal(size=(5, 1))
    # the reference-coded probabilities equal softmax of any shifted full predictor
    np.testing.assert_allclose(category_probs(eta), np.exp(shifted) / np.exp(shifted).sum(1, keepdims=True))


@pytest.mark.parametrize("family,aux", [("gaussian", 0.5), ("poisson", None), ("negbin", 3.0),
                                        ("bernoulli", None), ("exponential", None), ("gamma", 2.0),
                                        ("beta", 5.0)])
def test_simulation_mean(family, aux):
    rng = np.random.default_rng(1)
    eta = np.full(200_000, 0.3)
    draws = simulate(family, eta, aux, None, rng)
    m = float(mean(family, np.array(0.3), aux))
    sd = draws.std()
    assert abs(draws.mean() - m) < 5 * sd / np.sqrt(draws.size)


def test_simulate_propagates_missing():
    out = simulate("poisson", np.array([0.1, np.nan]), None, None, np.random.default_rng(0))
    assert np.isfinite(out[0]) and np.isnan(out[1])
