from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from dynpanel.errors import ModelSpecError
from dynpanel.simulate import read_truth, simulate, write_simulation


def test_shape_and_determinism():
    truth = {"N": 5, "T": 7, "seed": 2, "covariates": {"x": {"dist": "normal"}},
             "parameters": {"alpha_y": 1.0, "beta_y_x": 2.0, "sigma_y": 0.1}}
    a = simulate('obs(y ~ x, family="gaussian")', truth)
    b = simulate('obs(y ~ x, family="gaussian")', truth)
    pd.testing.assert_frame_equal(a.data, b.data)
    assert len(a.data) == 35 and list(a.data.columns) == ["id", "time", "x", "y"]
    resid = a.data.y - 1.0 - 2.0 * a.data.x
    assert abs(resid.std() - 0.1) < 0.04
    c = simulate('obs(y ~ x, family="gaussian")', truth, seed=3)
    assert not np.allclose(a.data.y, c.data.y)


def test_initial_values_and_lag_dynamics():
    truth = {"N": 2000, "T": 3, "seed": 1, "initial": {"y": {"dist": "constant", "value": 1.0}},
             "parameters": {"alpha_y": 0.0, "beta_y_y_lag1": 0.5, "sigma_y": 0.01}}
    d = simulate('obs(y ~ lag(y), family="gaussian")', truth).data
    assert (d[d.time == 1].y == 1.0).all()
    assert abs(d[d.time == 2].y.mean() - 0.5) < 0.01
    assert abs(d[d.time == 3].y.mean() - 0.25) < 0.01


def test_time_varying_curves():
    truth = {"N": 3000, "T": 4, "seed": 1,
             "parameters": {"alpha_y": [0.0, 1.0, 2.0, 3.0], "sigma_y": 0.05}}
    d = simulate('obs(y ~ -1 + varying(~1), family="gaussian") + splines(df = 4)', truth).data
    np.testing.assert_allclose(d.groupby("time").y.mean(), [0, 1, 2, 3], atol=0.01)
    ramp = dict(truth, parameters={"alpha_y": {"from": 0, "to": 3}, "sigma_y": 0.05})
    d2 = simulate('obs(y ~ -1 + varying(~1), family="gaussian") + splines(df = 4)', ramp).data
    np.testing.assert_allclose(d2.groupby("time").y.mean(), [0, 1, 2, 3], atol=0.01)


def test_random_effect_scale_and_correlation():
    truth = {"N": 4000, "T": 2, "seed": 4, "covariates": {"z": {"dist": "normal"}},
             "parameters": {"alpha_y": 0.0, "beta_y_z": 0.0, "sigma_y": 0.01, "sigma_nu_y_alpha": 0.5,
                            "sigma_nu_y_z": 1.0, "corr_nu_y_alpha__y_z": 0.6}}
    sim = simulate('obs(y ~ z + random(~1 + z), family="gaussian")', truth)
    t = sim.truth.set_index("parameter").value
    a = np.array([t[f"nu_y_alpha_id{i}"] for i in range(1, 4001)])
    z = np.array([t[f"nu_y_z_id{i}"] for i in range(1, 4001)])
    assert abs(a.std() - 0.5) < 0.03 and abs(z.std() - 1.0) < 0.05
    assert abs(np.corrcoef(a, z)[0, 1] - 0.6) < 0.05


def test_categorical_and_count_channels():
    truth = {"N": 50, "T": 5, "seed": 1, "levels": {"k": ["a", "b", "c"]},
             "covariates": {"w": {"dist": "bernoulli", "p": 0.3}},
             "parameters": {"alpha_k_b": 0.5, "alpha_k_c": -0.5, "alpha_c": 1.0, "beta_c_w": 0.2}}
    d = simulate('obs(k ~ 1, family="categorical") + obs(c ~ w, family="poisson")', truth).data
    assert set(d.k) <= {"a", "b", "c"} and (d.c >= 0).all() and (d.c % 1 == 0).all()


def test_unknown_and_missing_parameters():
    base = {"N": 2, "T": 3}
    with pytest.raises(ModelSpecError, match="unknown parameters"):
        simulate('obs(y ~ 1, family="gaussian")', dict(base, parameters={"alpha_y": 0, "sigma_y": 1, "beta_y_q": 1}))
    with pytest.raises(ModelSpecError, match="lacks values"):
        simulate('obs(y ~ 1, family="gaussian")', dict(base, parameters={"alpha_y": 0}))
    with pytest.raises(ModelSpecError, match="initial"):
        simulate('obs(y ~ lag(y), family="gaussian")', dict(base, parameters={}))


def test_files(tmp_path):
    (tmp_path / "t.json").write_text('{"N": 2, "T": 3, "parameters": {"alpha_y": 0, "sigma_y": 1}}')
    sim = simulate('obs(y ~ 1, family="gaussian")', read_truth(tmp_path / "t.json"))
    write_simulation(sim, tmp_path / "d.csv", tmp_path / "truth.csv")
    back = pd.read_csv(tmp_path / "d.csv", float_precision="round_trip")
    np.testing.assert_array_equal(back.y.to_numpy(), sim.data.y.to_numpy())
    assert pd.read_csv(tmp_path / "truth.csv").parameter.tolist() == ["alpha_y", "sigma_y"]
