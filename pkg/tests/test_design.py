from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest

from dynpanel.design import build_design, build_spline_basis, lag_grid, missingness_mask, spline_knots
from dynpanel.errors import DataError, FormulaError
from dynpanel.formula import parse_formula
from dynpanel.formula.terms import SplinesConfig
from dynpanel.panel import panel_from_frame


def _cox_de_boor(x: float, knots: np.ndarray, i: int, p: int, right: float) -> float:
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        # the last non-empty interval is closed on the right
        if x == right and knots[i] < knots[i + 1] == right:
            return 1.0
        return 0.0
    out = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        out += (x - knots[i]) / d1 * _cox_de_boor(x, knots, i, p - 1, right)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + p + 1] - x) / d2 * _cox_de_boor(x, knots, i + 1, p - 1, right)
    return out


@pytest.mark.parametrize("T,df,degree", [(30, 10, 3), (12, 5, 3), (20, 6, 2), (8, 8, 3), (15, 4, 1)])
def test_spline_basis_matches_recursion(T, df, degree):
    basis = build_spline_basis(T, SplinesConfig(df=df, degree=degree))
    knots = spline_knots(T, df, degree)
    oracle = np.array([[_cox_de_boor(float(t), knots, j, degree, float(T)) for j in range(df)]
                       for t in range(1, T + 1)])
    assert basis.B.shape == (T, df)
    np.testing.assert_allclose(basis.B, oracle, atol=1e-12)
    np.testing.assert_allclose(basis.B.sum(axis=1), 1.0, atol=1e-12)


def test_spline_df_too_large():
    with pytest.raises(FormulaError, match="exceeds"):
        build_spline_basis(5, SplinesConfig(df=6))


def test_lag_grid():
    x = np.arange(1.0, 6.0)[None, :]
    out = lag_grid(x, 2)
    assert np.isnan(out[0, :2]).all() and out[0, 2:].tolist() == [1.0, 2.0, 3.0]
    hist = np.array([[-1.0, -2.0]])
    assert lag_grid(x, 2, hist)[0].tolist() == [-2.0, -1.0, 1.0, 2.0, 3.0]


def _design(formula, df, **kw):
    d = panel_from_frame(df, "time", "id")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_design(parse_formula(formula), d, warn=False)


def test_lags_do_not_leak_across_groups(frame):
    ds = _design('obs(y ~ lag(y), family="gaussian")', frame)
    c = ds.channel("y")
    grid = frame.pivot(index="id", columns="time", values="y").to_numpy()
    assert ds.fixed == 1
    np.testing.assert_array_equal(c.Xf[:, 0], grid[c.gidx, c.tidx - 1])
    assert (c.tidx >= 1).all()


def test_mask_hand_oracle():
    df = pd.DataFrame({"id": np.repeat([1, 2], 4), "time": np.tile([1, 2, 3, 4], 2),
                       "y": [1.0, np.nan, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0],
                       "x": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, np.nan, 1.0]})
    mask = missingness_mask(panel_from_frame(df, "time", "id"),
                            parse_formula('obs(y ~ x + lag(y), family="gaussian")'))["y"]
    expected = np.array([[0, 0, 0, 1],   # t=2 y missing, t=3 lag missing
                         [0, 1, 0, 1]],  # t=3 x missing
                        dtype=bool)
    np.testing.assert_array_equal(mask, expected)


def test_categorical_predictor_dummy_coding(frame):
    ds = _design('obs(y ~ k, family="gaussian")', frame)
    c = ds.channel("y")
    labels = [col.label for col in c.fixed]
    first = frame["k"].iloc[0]
    others = [lv for lv in dict.fromkeys(frame["k"]) if lv != first]
    assert labels == [f"k{lv}" for lv in others]
    k = frame.sort_values(["id", "time"])["k"].to_numpy()
    np.testing.assert_array_equal(c.Xf[:, 0], (k == others[0]).astype(float))


def test_varying_and_random_columns(frame):
    ds = _design('obs(y ~ -1 + z + varying(~ x) + random(~1 + z), family="gaussian") + splines(df = 4)', frame)
    c = ds.channel("y")
    assert c.varying_icpt and not c.fixed_icpt
    assert [col.label for col in c.fixed] == ["z"]
    assert [col.label for col in c.varying] == ["x"]
    assert c.random_labels == ["alpha", "z"]
    assert ds.spline.B.shape == (8, 4)
    assert ds.random_registry == [("y", "alpha"), ("y", "z")]


def test_aux_channel_values(frame):
    ds = _design('obs(y ~ lc, family="gaussian") + aux(numeric(lc) ~ log(c + 1))', frame)
    c = ds.channel("y")
    want = np.log(frame.sort_values(["id", "time"])["c"].to_numpy() + 1.0)
    np.testing.assert_allclose(c.Xf[:, 0], want)


def test_aux_lag_uses_init(frame):
    ds = _design('obs(y ~ lag(lc), family="gaussian") + aux(numeric(lc) ~ c | init(-1))', frame)
    c = ds.channel("y")
    assert ds.fixed == 0
    first = c.tidx == 0
    assert (c.Xf[first, 0] == -1.0).all()


def test_support_checks(frame):
    bad = frame.copy()
    bad.loc[0, "c"] = -1
    with pytest.raises(DataError, match="poisson"):
        _design('obs(c ~ 1, family="poisson")', bad)
    with pytest.raises(DataError, match="categorical"):
        _design('obs(k ~ 1, family="gaussian")', frame)


def test_missing_variable(frame):
    with pytest.raises(DataError, match="not found"):
        _design('obs(y ~ nothere, family="gaussian")', frame)


def test_constant_predictor_warns(frame):
    df = frame.assign(one=1.0)
    d = panel_from_frame(df, "time", "id")
    with pytest.warns(UserWarning, match="constant"):
        build_design(parse_formula('obs(y ~ one, family="gaussian")'), d)
