from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest

from dynpanel import fit as fit_model
from dynpanel.simulate import simulate


def make_frame(N: int = 4, T: int = 8, seed: int = 1) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    df = pd.DataFrame({"id": np.repeat(np.arange(1, N + 1), T), "time": np.tile(np.arange(1, T + 1), N)})
    n = len(df)
    df["z"] = rng.normal(size=n)
    df["x"] = rng.normal(size=n)
    df["y"] = rng.normal(size=n)
    df["c"] = rng.poisson(3, n)
    df["b"] = rng.integers(0, 2, n)
    df["u"] = rng.uniform(0.05, 0.95, n)
    df["pos"] = rng.gamma(2.0, 1.0, n)
    df["k"] = rng.choice(list("ABC"), n)
    df["n"] = 10
    df["s"] = rng.integers(0, 11, n)
    df["o"] = rng.normal(0, 0.1, n)
    return df


@pytest.fixture
def frame() -> pd.DataFrame:
    return make_frame()


TOY_FORMULA = 'obs(y ~ x + lag(y) + random(~1), family = "gaussian")'
TOY_TRUTH = {
    "N": 6, "T": 10, "seed": 3,
    "covariates": {"x": {"dist": "normal"}},
    "initial": {"y": {"dist": "normal"}},
    "parameters": {"alpha_y": 0.5, "beta_y_x": 1.0, "beta_y_y_lag1": 0.4, "sigma_y": 0.5,
                   "sigma_nu_y_alpha": 0.3},
}


@pytest.fixture(scope="session")
def toy_data() -> pd.DataFrame:
    return simulate(TOY_FORMULA, TOY_TRUTH).data


@pytest.fixture(scope="session")
def toy_fit(toy_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_model(TOY_FORMULA, toy_data, "time", "id", chains=2, iter_warmup=200,
                         iter_sampling=200, seed=11)


# one PASS/FAIL line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
