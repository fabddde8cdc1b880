from __future__ import annotations

import json
import warnings

import numpy as np
import pandas as pd
import pytest

from dynpanel import PanelFit, fit
from dynpanel.errors import DynpanelError, PriorError
from dynpanel.priors import PriorSpec


def test_shapes_and_labels(toy_fit):
    assert toy_fit.draws.shape == (200, 2, len(toy_fit.parameter_labels))
    assert toy_fit.n_draws == 400 and toy_fit.n_chains == 2
    assert "beta_y_x" in toy_fit.parameter_labels
    assert toy_fit.column("sigma_y").shape == (200, 2)
    assert toy_fit.draws_matrix().shape == (400, len(toy_fit.parameter_labels))
    # chain-major stacking
    np.testing.assert_array_equal(toy_fit.draws_matrix()[:200], toy_fit.draws[:, 0, :])


def test_recovers_simulation_truth(toy_fit):
    beta = toy_fit.column("beta_y_x").mean()
    assert abs(beta - 1.0) < 0.25
    assert abs(toy_fit.column("beta_y_y_lag1").mean() - 0.4) < 0.25


def test_save_load_round_trip(toy_fit, tmp_path):
    toy_fit.save(tmp_path / "f")
    for name in ("formula.dml", "priors.csv", "data.csv", "draws.csv", "sampler.csv", "meta.json", "summary.txt"):
        assert (tmp_path / "f" / name).exists()
    back = PanelFit.load(tmp_path / "f")
    np.testing.assert_array_equal(back.draws, toy_fit.draws)
    assert back.parameter_labels == toy_fit.parameter_labels
    assert back.model.fingerprint() == toy_fit.model.fingerprint()
    for k in toy_fit.stats:
        np.testing.assert_array_equal(back.stats[k], toy_fit.stats[k])
    meta = json.loads((tmp_path / "f" / "meta.json").read_text())
    assert meta["parameters"] == toy_fit.parameter_labels
    draws = pd.read_csv(tmp_path / "f" / "draws.csv")
    assert list(draws.columns[:2]) == [".chain", ".iteration"]


def test_load_detects_tampering(toy_fit, tmp_path):
    toy_fit.save(tmp_path / "f")
    d = tmp_path / "f" / "data.csv"
    df = pd.read_csv(d)
    df.loc[df.index[-1], "y"] += 1.0
    df.to_csv(d, index=False)
    with pytest.raises(DynpanelError):
        PanelFit.load(tmp_path / "f")


def test_determinism_and_custom_priors(toy_data):
    f = 'obs(y ~ x, family = "gaussian")'
    kw = dict(chains=1, iter_warmup=60, iter_sampling=40, seed=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = fit(f, toy_data, "time", "id", **kw)
        b = fit(f, toy_data, "time", "id", **kw)
        np.testing.assert_array_equal(a.draws, b.draws)
        tight = [PriorSpec(p.parameter, p.response, "normal(5, 0.01)" if p.type == "beta" else p.prior,
                           p.type, p.category) for p in a.priors]
        c = fit(f, toy_data, "time", "id", priors=tight, **kw)
    assert abs(c.column("beta_y_x").mean() - 5) < 0.1
    with pytest.raises(PriorError):
        fit(f, toy_data, "time", "id", priors=tight[:-1], **kw)
