from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from dynpanel.design import build_design
from dynpanel.formula import parse_formula
from dynpanel.model import Model, cpc_forward
from dynpanel.panel import panel_from_frame


def _model(text, frame, priors=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Model(build_design(parse_formula(text), panel_from_frame(frame, "time", "id"), warn=False), priors)


def _fd_check(m, seeds=2, h=1e-5):
    for s in range(seeds):
        th = np.random.default_rng(s).uniform(-1, 1, m.dim)
        _, g = m.log_prob_grad(th)
        fd = np.empty(m.dim)
        for i in range(m.dim):
            e = np.zeros(m.dim)
            e[i] = h
            fd[i] = (m.log_prob(th + e) - m.log_prob(th - e)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("spline_nc", ["FALSE", "TRUE"])
@pytest.mark.parametrize("random_nc", ["FALSE", "TRUE"])
def test_gradient_mixed_model(frame, spline_nc, random_nc):
    m = _model('obs(y ~ -1 + z + varying(~x + lag(y)) + random(~1 + z), family="gaussian") + '
               'obs(c ~ x + random(~1), family="negbin") + '
               f'splines(df = 4, noncentered = {spline_nc}) + random_spec(noncentered = {random_nc})', frame)
    _fd_check(m)


@pytest.mark.parametrize("text", [
    'obs(k ~ z + varying(~x), family="categorical") + splines(df = 4, degree = 2)',
    'obs(b ~ z + random(~1), family="bernoulli") + obs(s ~ x + trials(n), family="binomial")',
    'obs(pos ~ z, family="gamma") + obs(u ~ z, family="beta") + obs(c ~ z + offset(o), family="poisson")',
    'obs(pos ~ x + random(~1), family="exponential") + obs(y ~ z + random(~1), family="gaussian") + '
    'random_spec(correlated = FALSE)',
])
def test_gradient_other_families(frame, text):
    _fd_check(_model(text, frame))


def test_log_density_hand_oracle(frame):
    m = _model('obs(y ~ z, family="gaussian")', frame)
    th = np.array([0.3, -0.4, np.log(0.7)])
    assert [b.key for b in m.blocks] == ["a", "beta", "aux"]
    pri = {p.parameter: p.distribution.args for p in m.priors}
    y, z = frame.sort_values(["id", "time"])[["y", "z"]].to_numpy().T
    a, b, s = 0.3, -0.4, 0.7
    want = (stats.norm.logpdf(y, a + b * z, s).sum()
            + stats.norm.logpdf(a, *pri["alpha_y"]) + stats.norm.logpdf(b, *pri["beta_y_z"])
            + stats.expon.logpdf(s, scale=1 / pri["sigma_y"][0]) + np.log(s))
    assert m.log_prob(th) == pytest.approx(want, rel=1e-12)


def test_noncentered_equals_centered_with_jacobian(frame):
    base = 'obs(y ~ -1 + z + varying(~x) + random(~1 + z), family="gaussian") + '
    m1 = _model(base + "splines(df = 4) + random_spec(noncentered = FALSE)", frame)
    m2 = _model(base + "splines(df = 4, noncentered = TRUE) + random_spec(noncentered = TRUE)", frame)
    th = np.random.default_rng(5).uniform(-1, 1, m2.dim)

    def sl(m, key, c=-1):
        return m.block(key, c).sl

    tau_a = np.exp(th[sl(m2, "tau_alpha", 0)])
    tau = np.exp(th[sl(m2, "tau", 0)])
    w = th[sl(m2, "omega", 0)].reshape(1, 1, 4)
    th1 = th.copy()
    th1[sl(m1, "omega_alpha", 0)] = tau_a * np.cumsum(th[sl(m2, "omega_alpha", 0)])
    om = np.concatenate([w[..., :1], w[..., :1] + tau[:, None] * np.cumsum(w[..., 1:], -1)], -1)
    th1[sl(m1, "omega", 0)] = om.ravel()
    sn = np.exp(th[sl(m2, "sigma_nu")])
    zz = th[sl(m2, "nu")].reshape(m2.N, m2.M)
    _, L = cpc_forward(th[sl(m2, "L")], m2.M)
    th1[sl(m1, "nu")] = (sn * (zz @ L.T)).ravel()
    log_jac = 3 * np.log(tau_a).sum() + 3 * np.log(tau).sum() + m2.N * (np.log(sn).sum() + np.log(np.diag(L)).sum())
    assert m2.log_prob(th) == pytest.approx(m1.log_prob(th1) + log_jac, rel=1e-10)
    np.testing.assert_allclose(m2.outputs(th), m1.outputs(th1), rtol=1e-10, atol=1e-12)


def test_all_masked_equals_prior_and_doubling_data(frame):
    text = 'obs(c ~ z + x, family="poisson")'
    m1 = _model(text, frame)
    masked = _model(text, frame.assign(c=np.nan), m1.priors)
    twice = pd.concat([frame, frame.assign(id=frame.id + 100)])
    m2 = _model(text, twice, m1.priors)
    rng = np.random.default_rng(0)
    for _ in range(3):
        th = rng.normal(size=m1.dim)
        prior = masked.log_prob(th)
        assert m2.log_prob(th) - prior == pytest.approx(2 * (m1.log_prob(th) - prior), rel=1e-12)
        pri = {p.parameter: p.distribution.args for p in m1.priors}
        want = sum(stats.norm.logpdf(v, *pri[k]) for v, k in zip(th, ["alpha_c", "beta_c_z", "beta_c_x"]))
        assert prior == pytest.approx(want, rel=1e-12)


def test_outputs_names_and_delta_curve(frame):
    m = _model('obs(y ~ -1 + varying(~1 + x), family="gaussian") + splines(df = 4)', frame)
    th = np.random.default_rng(2).normal(size=m.dim)
    out = dict(zip(m.output_labels, m.outputs(th)))
    T = 8
    assert [f"alpha_y[{t}]" for t in range(1, T + 1)] == [lab for lab in m.output_labels if lab.startswith("alpha_y[")]
    B = m.ds.spline.B
    om = np.array([out[f"omega_y_x[{d}]"] for d in range(1, 5)])
    np.testing.assert_allclose([out[f"delta_y_x[{t}]"] for t in range(1, T + 1)], B @ om)
    oma = np.array([out[f"omega_alpha_y[{d}]"] for d in range(1, 4)])
    a = out["alpha_y[1]"] - B[0, 1:] @ oma
    np.testing.assert_allclose([out[f"alpha_y[{t}]"] for t in range(1, T + 1)], a + B[:, 1:] @ oma)


def test_correlation_output_is_valid(frame):
    m = _model('obs(y ~ z + random(~1 + z + x), family="gaussian")', frame)
    th = np.random.default_rng(4).normal(size=m.dim)
    out = dict(zip(m.output_labels, m.outputs(th)))
    corr = [v for k, v in out.items() if k.startswith("corr_nu")]
    assert len(corr) == 3 and all(-1 < c < 1 for c in corr)
    assert "nu_y_alpha_id1" in out and "corr_nu_y_alpha__y_z" in out


def test_fingerprint_changes_with_data(frame):
    a = _model('obs(y ~ z, family="gaussian")', frame)
    b = _model('obs(y ~ z, family="gaussian")', frame.assign(y=frame.y + 1))
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == _model('obs(y ~ z, family="gaussian")', frame).fingerprint()
