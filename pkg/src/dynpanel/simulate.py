"""Synthetic panels generated from a model formula and known parameter values.

The truth specification is a mapping (usually read from JSON)::

    {
      "N": 50, "T": 30, "seed": 1, "group": "id", "time": "time",
      "covariates": {"z": {"dist": "normal", "mean": 0, "sd": 1},
                     "w": {"dist": "normal", "sd": 1, "by_group": true}},
      "initial": {"y": {"dist": "normal", "mean": 0, "sd": 1}},
      "levels": {"c": ["a", "b", "c"]},
      "parameters": {"alpha_y": -1, "beta_y_z": 2, "delta_y_x": [0.1, 0.2, ...],
                     "sigma_y": 0.2, "sigma_nu_y_alpha": 0.1}
    }

Time-varying parameters take a list over the modelled time points, a scalar
(constant curve) or ``{"from": a, "to": b}`` (linear ramp). Random effects
are drawn from their zero-mean normal distribution unless listed explicitly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .design import build_design
from .errors import InputOutputError, ModelSpecError
from .fit import PanelFit
from .formula import expand_lags, fixed_timepoints, parse_formula
from .formula.terms import ModelFormula
from .model import Model
from .names import ParameterName, time_label
from .nuts import STAT_NAMES, SamplerConfig
from .panel import panel_from_frame
from .posterior import base_name
from .predict import predict

# parameters that do not enter the generative process directly
_UNUSED = ("omega", "tau", "tau_alpha")


@dataclass
class Simulation:
    data: pd.DataFrame
    truth: pd.DataFrame


def read_truth(path: Union[str, Path]) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputOutputError(f"truth file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"truth file {path} is not valid JSON: {exc}") from None


def _draw(spec: Mapping[str, Any], size, rng: np.random.Generator) -> np.ndarray:
    dist = spec.get("dist", "normal")
    if dist == "normal":
        return rng.normal(spec.get("mean", 0.0), spec.get("sd", 1.0), size)
    if dist == "uniform":
        return rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), size)
    if dist == "bernoulli":
        return (rng.random(size) < spec.get("p", 0.5)).astype(float)
    if dist == "poisson":
        return rng.poisson(spec.get("lambda", 1.0), size).astype(float)
    if dist == "constant":
        return np.full(size, float(spec["value"]))
    if dist == "categorical":
        levels = spec["levels"]
        p = spec.get("probs")
        return np.asarray(levels, dtype=object)[rng.choice(len(levels), size=size, p=p)]
    raise ModelSpecError(f"unknown distribution {dist!r} in truth specification")


def _column(spec: Mapping[str, Any], N: int, T: int, rng: np.random.Generator) -> np.ndarray:
    if spec.get("by_group"):
        return np.repeat(_draw(spec, N, rng)[:, None], T, axis=1)
    return _draw(spec, (N, T), rng)


def _curve(value, n: int, label: str) -> np.ndarray:
    if isinstance(value, Mapping):
        return np.linspace(float(value["from"]), float(value["to"]), n)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ModelSpecError(f"{label} needs {n} values (one per modelled time point), got {arr.size}")
    return arr


def simulate(formula: Union[str, ModelFormula], truth: Mapping[str, Any], seed: Optional[int] = None) -> Simulation:
    """Generate a panel from the model with the given true parameters."""
    f = parse_formula(formula) if isinstance(formula, str) else formula
    fx = expand_lags(f)
    fx.validate()
    N, T = int(truth["N"]), int(truth["T"])
    seed = int(truth.get("seed", 0) if seed is None else seed)
    gname, tname = truth.get("group", "id"), truth.get("time", "time")
    K = fixed_timepoints(fx)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 11])))

    frame = pd.DataFrame({gname: np.repeat(np.arange(1, N + 1), T), tname: np.tile(np.arange(1, T + 1), N)})
    for name, spec in truth.get("covariates", {}).items():
        frame[name] = _column(spec, N, T, rng).reshape(-1)
    levels = truth.get("levels", {})
    init = truth.get("initial", {})
    for c in fx.stochastic:
        r = c.response
        col = np.full((N, T), np.nan, dtype=object if c.family == "categorical" else float)
        if K:
            if r not in init:
                raise ModelSpecError(f"truth specification lacks initial values for {r!r}")
            col[:, :K] = _column(init[r], N, K, rng)
        col = col.reshape(-1)
        if c.family == "categorical":
            if r not in levels:
                raise ModelSpecError(f"truth specification lacks the levels of categorical {r!r}")
            frame[r] = pd.Categorical(col, categories=levels[r])
        else:
            frame[r] = col
    panel = panel_from_frame(frame, tname, gname)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_design(f, panel, warn=False)
    model = Model(ds)
    values = _parameter_vector(model, truth.get("parameters", {}), N, rng)
    stats = {k: np.zeros((1, 1)) for k in STAT_NAMES}
    cfg = SamplerConfig(chains=1, iter_warmup=0, iter_sampling=1, seed=seed)
    text = formula if isinstance(formula, str) else formula.format()
    truth_fit = PanelFit(text, panel, ds, model, cfg, values[None, None, :], stats, [1.0], [[]], [0.0], [0.0])
    pred = predict(truth_fit, panel, type="response", seed=seed, expand=False).simulated
    out = frame.copy()
    for c in fx.stochastic:
        r = c.response
        sim = pred[f"{r}_new"]
        if c.family == "categorical":
            merged = out[r].astype(object).where(out[r].notna(), sim.astype(object).to_numpy())
            out[r] = pd.Categorical(merged, categories=levels[r])
        else:
            out[r] = out[r].where(out[r].notna(), sim.to_numpy())
    keep = [(lab, v) for n, lab, v in zip(model.output_names, model.output_labels, values)
            if not (n.type in _UNUSED and np.isnan(v))]
    truth_table = pd.DataFrame(keep, columns=["parameter", "value"])
    return Simulation(out, truth_table)


def _parameter_vector(model: Model, params: Mapping[str, Any], N: int, rng: np.random.Generator) -> np.ndarray:
    names, labels = model.output_names, model.output_labels
    known = set(labels) | {base_name(lab) for lab in labels}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ModelSpecError(
            f"truth specification names unknown parameters: {', '.join(unknown)}. "
            f"Model parameters are: {', '.join(sorted({base_name(lab) for lab in labels if not lab.startswith('nu_')}))}"
        )
    reg = model.registry
    M = len(reg)
    nu = None
    if M:
        sd = np.array([float(params[ParameterName("sigma_nu", r, lab).render()]) for r, lab in reg])
        C = np.eye(M)
        for i in range(M):
            for j in range(i + 1, M):
                (r1, l1), (r2, l2) = reg[i], reg[j]
                key = ParameterName("corr_nu", r1, f"{l1}__{r2}_{l2}").render()
                C[i, j] = C[j, i] = float(params.get(key, 0.0))
        L = np.linalg.cholesky(C)
        nu = (rng.standard_normal((N, M)) @ L.T) * sd
    groups = model.ds.panel.group_labels()
    reg_pos = {key: k for k, key in enumerate(reg)}
    times = [time_label(v) for v in model.ds.panel.times[model.ds.fixed:]]
    T_mod = len(times)
    curves: dict[str, np.ndarray] = {}
    out = np.full(len(labels), np.nan)
    missing = []
    for j, (n, lab) in enumerate(zip(names, labels)):
        if lab in params and n.time is None:
            out[j] = float(params[lab])
            continue
        if n.type == "nu":
            out[j] = nu[groups.index(n.group), reg_pos[(n.response, n.predictor)]]
        elif n.type == "corr_nu":
            out[j] = float(params.get(lab, 0.0))
        elif n.type in ("alpha", "delta") and n.time is not None:
            b = base_name(lab)
            if b not in params:
                missing.append(b)
                continue
            if b not in curves:
                curves[b] = _curve(params[b], T_mod, b)
            out[j] = curves[b][times.index(n.time)]
        elif n.type in _UNUSED:
            continue
        else:
            missing.append(lab)
    if missing:
        raise ModelSpecError(f"truth specification lacks values for: {', '.join(dict.fromkeys(missing))}")
    return out


def write_simulation(sim: Simulation, data_path: Union[str, Path], truth_path: Union[str, Path]) -> None:
    sim.data.to_csv(data_path, index=False, na_rep="NA", float_format="%.17g")
    sim.truth.to_csv(truth_path, index=False, float_format="%.17g")
