from __future__ import annotations

import numpy as np
import pytest

from dynpanel.diagnostics import ess_bulk, rhat
from dynpanel.errors import NumericError
from dynpanel.nuts import NUTS, SamplerConfig, _State, chain_rng, run_chain, sample


def std_normal(q):
    return -0.5 * float(q @ q), -q


def _gaussian(cov):
    prec = np.linalg.inv(cov)

    def target(q):
        g = -prec @ q
        return 0.5 * float(q @ g), g

    return target


def test_standard_normal_moments():
    cfg = SamplerConfig(chains=4, iter_warmup=500, iter_sampling=1000, seed=1)
    res = sample(std_normal, 1, cfg)
    x = np.stack([r.draws[:, 0] for r in res], axis=1)
    ess = ess_bulk(x)
    assert ess > 1000
    assert abs(x.mean()) < 4 / np.sqrt(ess)
    assert abs(x.var() - 1) < 0.1
    assert rhat(x) < 1.01
    assert all(r.stats["divergent"].sum() == 0 for r in res)
    assert all(0.6 < r.stats["accept_stat"].mean() < 0.95 for r in res)


def test_correlated_ten_dimensional_gaussian():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(10, 10))
    scales = np.exp(np.linspace(-1, 1, 10))
    cov = np.diag(scales) @ (0.5 * np.eye(10) + 0.05 * A @ A.T) @ np.diag(scales)
    cfg = SamplerConfig(chains=4, iter_warmup=1000, iter_sampling=1000, seed=7)
    res = sample(_gaussian(cov), 10, cfg)
    x = np.concatenate([r.draws for r in res])
    draws = np.stack([r.draws for r in res], axis=1)
    for j in range(10):
        ess = ess_bulk(draws[:, :, j])
        assert ess > 400
        assert abs(x[:, j].mean()) < 4.5 * np.sqrt(cov[j, j] / ess)
        assert rhat(draws[:, :, j]) < 1.02
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.15 * np.max(np.diag(cov)))
    # metric adaptation learns the marginal variances
    np.testing.assert_allclose(res[0].inv_metric, np.diag(cov), rtol=0.35)


def test_leapfrog_is_reversible():
    target = _gaussian(np.array([[2.0, 0.3], [0.3, 0.5]]))
    nuts = NUTS(target, 2, np.random.default_rng(0))
    nuts.inv_metric = np.array([1.5, 0.7])
    q = np.array([0.4, -1.2])
    lp, g = target(q)
    z = _State(q, np.array([0.9, 0.1]), lp, g)
    w = z
    for _ in range(25):
        w = nuts.evolve(w, 0.1)
    back = _State(w.q, -w.p, w.lp, w.grad)
    for _ in range(25):
        back = nuts.evolve(back, 0.1)
    np.testing.assert_allclose(back.q, q, atol=1e-12)
    np.testing.assert_allclose(-back.p, z.p, atol=1e-12)
    assert abs(nuts.hamiltonian(w) - nuts.hamiltonian(z)) < 1e-2


def test_determinism_and_chain_streams():
    cfg = SamplerConfig(chains=2, iter_warmup=50, iter_sampling=50, seed=42)
    a = sample(std_normal, 3, cfg)
    b = sample(std_normal, 3, cfg)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.draws, rb.draws)
    assert not np.array_equal(a[0].draws, a[1].draws)
    c = run_chain(std_normal, 3, cfg, 1)
    np.testing.assert_array_equal(c.draws, a[1].draws)
    assert chain_rng(1, 0).random() != chain_rng(2, 0).random()


def test_zero_warmup_and_output_mapping():
    cfg = SamplerConfig(chains=1, iter_warmup=0, iter_sampling=20, seed=0)
    (r,) = sample(std_normal, 2, cfg, output=lambda q: np.exp(q))
    assert r.draws.shape == (20, 2) and (r.draws > 0).all()


def test_improper_target_raises():
    with pytest.raises(NumericError):
        run_chain(lambda q: (float(q.sum()), np.ones_like(q)), 2, SamplerConfig(chains=1, iter_warmup=10,
                                                                               iter_sampling=10), 0)


def test_nonfinite_target_fails_initialisation():
    with pytest.raises(NumericError, match="initialization failed"):
        run_chain(lambda q: (np.nan, q), 2, SamplerConfig(chains=1), 0)


def test_config_validation():
    for kw in ({"chains": 0}, {"iter_sampling": 0}, {"target_accept": 1.0}, {"max_treedepth": 0}):
        with pytest.raises(ValueError):
            SamplerConfig(**kw)
