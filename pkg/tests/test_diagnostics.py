from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from dynpanel.diagnostics import ebfmi, ess_bulk, ess_tail, parameter_diagnostics, rhat
from dynpanel.errors import NumericError

# brute-force reference implementation: plain loops, direct autocovariance sums


def _ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _split(chains):
    out = []
    for c in chains:
        h = len(c) // 2
        out.append(c[:h])
        out.append(c[len(c) - h:])
    return out


def _znorm(chains):
    flat = [v for c in chains for v in c]
    r = _ranks(flat)
    S = len(flat)
    z = [norm.ppf((ri - 0.375) / (S + 0.25)) for ri in r]
    n = len(chains[0])
    return [z[k * n:(k + 1) * n] for k in range(len(chains))]


def _mean(v):
    return sum(v) / len(v)


def _var(v):
    m = _mean(v)
    return sum((a - m) ** 2 for a in v) / (len(v) - 1)


def _rhat_basic(chains):
    n = len(chains[0])
    means = [_mean(c) for c in chains]
    B = n * _var(means)
    W = _mean([_var(c) for c in chains])
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def _acov(c, lag):
    n = len(c)
    m = _mean(c)
    return sum((c[t] - m) * (c[t + lag] - m) for t in range(n - lag)) / n


def _ess(chains):
    """Reference ESS with 1-based indexing, mirroring the published algorithm."""
    M, n = len(chains), len(chains[0])
    acov = [[_acov(c, k) for k in range(n)] for c in chains]
    ac = [None] + [_mean([acov[m][k] for m in range(M)]) for k in range(n)]  # ac[1] is lag 0
    mean_var = ac[1] * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if M > 1:
        var_plus += _var([_mean(c) for c in chains])
    rho = [None] + [0.0] * n
    t = 0
    rho_even = 1.0
    rho[t + 1] = rho_even
    rho_odd = 1 - (mean_var - ac[t + 2]) / var_plus
    rho[t + 2] = rho_odd
    while t < n - 5 and not math.isnan(rho_even + rho_odd) and rho_even + rho_odd > 0:
        t += 2
        rho_even = 1 - (mean_var - ac[t + 1]) / var_plus
        rho_odd = 1 - (mean_var - ac[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
    max_t = t
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 0
    while t <= max_t - 4:
        t += 2
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2
            rho[t + 2] = rho[t + 1]
    tau = -1 + 2 * sum(rho[1:max_t + 1]) + rho[max_t + 1]
    tau = max(tau, 1 / math.log10(M * n))
    return M * n / tau


def _chains(x):
    return [list(x[:, j]) for j in range(x.shape[1])]


def _ar1(n, chains, phi, rng):
    x = np.empty((n, chains))
    x[0] = rng.normal(size=chains)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + rng.normal(size=chains) * math.sqrt(1 - phi * phi)
    return x


@pytest.mark.parametrize("phi,seed", [(0.0, 0), (0.5, 1), (0.9, 2)])
def test_rhat_matches_brute_force(phi, seed):
    x = _ar1(120, 4, phi, np.random.default_rng(seed))
    bulk = _rhat_basic(_znorm(_split(_chains(x))))
    med = float(np.median(x))
    folded = np.abs(x - med)
    tail = _rhat_basic(_znorm(_split(_chains(folded))))
    assert rhat(x) == pytest.approx(max(bulk, tail), abs=1e-8)


def _ess_bulk_oracle(x):
    return _ess(_znorm(_split(_chains(x))))


@pytest.mark.parametrize("phi,seed,n", [(0.0, 3, 200), (0.3, 4, 201), (0.8, 5, 150), (-0.4, 6, 100)])
def test_ess_bulk_matches_brute_force(phi, seed, n):
    x = _ar1(n, 4, phi, np.random.default_rng(seed))
    assert ess_bulk(x) == pytest.approx(_ess_bulk_oracle(x), rel=1e-8)


def test_ess_tail_matches_brute_force():
    x = _ar1(200, 4, 0.4, np.random.default_rng(6))
    vals = []
    for p in (0.05, 0.95):
        q = float(np.quantile(x, p))
        ind = (x <= q).astype(float)
        vals.append(_ess(_split(_chains(ind))))
    assert ess_tail(x) == pytest.approx(min(vals), rel=1e-8)


def test_iid_draws():
    x = np.random.default_rng(8).normal(size=(1000, 4))
    assert 3400 < ess_bulk(x) < 4600
    assert rhat(x) < 1.005


def test_ar1_ess_matches_theory():
    phi = 0.7
    x = _ar1(5000, 4, phi, np.random.default_rng(9))
    theory = x.size * (1 - phi) / (1 + phi)
    assert ess_bulk(x) == pytest.approx(theory, rel=0.15)


def test_shifted_chain_flags_rhat():
    x = np.random.default_rng(10).normal(size=(500, 4))
    x[:, 0] += 2.0
    assert rhat(x) > 1.1


def test_split_detects_trend_within_chain():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(400, 4)) + np.linspace(0, 3, 400)[:, None]
    assert rhat(x) > 1.1


def test_constant_and_nonfinite_give_nan():
    assert math.isnan(rhat(np.ones((100, 4))))
    assert math.isnan(ess_bulk(np.ones((100, 4))))
    bad = np.random.default_rng(0).normal(size=(100, 2))
    bad[3, 1] = np.nan
    assert math.isnan(rhat(bad))


def test_too_few_draws():
    with pytest.raises(NumericError, match="too few"):
        parameter_diagnostics(["a"], np.zeros((10, 2, 1)))
    d = parameter_diagnostics(["a", "b"], np.stack([np.random.default_rng(0).normal(size=(16, 2)),
                                                     np.full((16, 2), 3.0)], axis=-1))
    assert not d[0].zero_variance and d[1].zero_variance


def test_ebfmi():
    e = np.array([1.0, 2.0, 1.0, 2.0])
    # sum of squared jumps 3 over centered sum of squares 1
    assert ebfmi(e) == pytest.approx(3.0)
    walk = np.cumsum(np.random.default_rng(1).normal(size=2000))
    assert ebfmi(walk) < 0.3
