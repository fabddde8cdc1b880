"""Prior literals, default data-scaled priors and the editable prior table."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import gammaln

from . import families
from .design import DesignSet, build_design
from .errors import InputOutputError, PriorError
from .formula.terms import ModelFormula
from .panel import PanelData

POSITIVE_TYPES = ("tau", "tau_alpha", "sigma", "sigma_nu", "phi")
REAL_TYPES = ("alpha", "beta", "delta")
PRIOR_TYPES = REAL_TYPES + POSITIVE_TYPES + ("corr_nu",)
TABLE_COLUMNS = ["parameter", "response", "prior", "type", "category"]

_ARITY = {"normal": 2, "exponential": 1, "student_t": 3, "lkj_corr_cholesky": 1}
_LITERAL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


@dataclass(frozen=True)
class Distribution:
    name: str
    args: tuple[float, ...]

    def __str__(self) -> str:
        return f"{self.name}({', '.join(_fmt(a) for a in self.args)})"


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def parse_prior(text: str) -> Distribution:
    """Parse ``normal(0, 2.5)``, ``exponential(1)``, ``student_t(3, 0, 1)``."""
    m = _LITERAL.match(str(text))
    if not m or m.group(1) not in _ARITY:
        raise PriorError(
            f"malformed prior {text!r}; expected one of normal(mu, sigma), exponential(rate), "
            "student_t(nu, mu, sigma), lkj_corr_cholesky(eta)"
        )
    name = m.group(1)
    try:
        args = tuple(float(a) for a in m.group(2).split(",")) if m.group(2).strip() else ()
    except ValueError:
        raise PriorError(f"malformed prior {text!r}: arguments must be numbers") from None
    if len(args) != _ARITY[name]:
        raise PriorError(f"prior {text!r}: {name} takes {_ARITY[name]} argument(s)")
    if not all(np.isfinite(args)):
        raise PriorError(f"prior {text!r}: arguments must be finite")
    positive = {"normal": [1], "exponential": [0], "student_t": [0, 2], "lkj_corr_cholesky": [0]}[name]
    if any(args[i] <= 0 for i in positive):
        raise PriorError(f"prior {text!r}: scale/rate/shape arguments must be positive")
    return Distribution(name, args)


def logpdf_grad(name: str, x: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised log density and derivative; ``args`` has one row per element."""
    if name == "normal":
        mu, sd = args[:, 0], args[:, 1]
        z = (x - mu) / sd
        return -0.5 * z * z - np.log(sd) - 0.5 * families.LOG_2PI, -z / sd
    if name == "exponential":
        rate = args[:, 0]
        return np.log(rate) - rate * x, -rate
    if name == "student_t":
        nu, mu, sd = args[:, 0], args[:, 1], args[:, 2]
        z = (x - mu) / sd
        lp = (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(sd)
              - (nu + 1) / 2 * np.log1p(z * z / nu))
        return lp, -(nu + 1) * z / (sd * (nu + z * z))
    raise PriorError(f"distribution {name} cannot be used here")


@dataclass(frozen=True)
class PriorSpec:
    parameter: str
    response: str
    prior: str
    type: str
    category: str = ""

    @property
    def distribution(self) -> Distribution:
        return parse_prior(self.prior)


def _robust_scale(values: np.ndarray) -> float:
    v = values[np.isfinite(values)]
    if v.size == 0:
        return 1.0
    mad = 1.4826 * float(np.median(np.abs(v - np.median(v))))
    return max(1.0, mad)


def _sd(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    if x.size < 2:
        return 0.0
    return float(np.std(x, ddof=1))


def _channel_scale(cd) -> float:
    if cd.family in ("bernoulli", "binomial", "categorical") or cd.n_obs == 0:
        return 1.0
    return _robust_scale(families.link_transform(cd.family, cd.y, cd.trials))


def _alpha_means(cd, first_time: int) -> list[float]:
    if cd.n_obs == 0:
        return [0.0] * cd.n_cat
    sel = cd.tidx == first_time
    if not np.any(sel):
        sel = cd.tidx == cd.tidx.min()
    y = cd.y[sel]
    if cd.family == "categorical":
        counts = np.bincount(y.astype(int), minlength=len(cd.categories)).astype(float)
        p = np.clip(counts / counts.sum(), 0.01, 0.99)
        return [float(np.log(p[k] / p[0])) for k in range(1, len(p))]
    if cd.family == "binomial":
        return [families.link(cd.family, float(y.sum() / max(cd.trials[sel].sum(), 1.0)))]
    return [families.link(cd.family, float(np.mean(y)))]


def channel_parameter_stems(cd) -> dict:
    """Parameter stems (without category suffix) used by the prior table."""
    r = cd.response
    return {
        "alpha": f"alpha_{r}",
        "tau_alpha": f"tau_alpha_{r}",
        "beta": [f"beta_{r}_{c.label}" for c in cd.fixed],
        "delta": [f"delta_{r}_{c.label}" for c in cd.varying],
        "tau": [f"tau_{r}_{c.label}" for c in cd.varying],
    }


def default_priors_for_design(ds: DesignSet) -> list[PriorSpec]:
    """One row per parameter group, ordered as in the model's prior table."""
    rows: list[PriorSpec] = []
    scales = {cd.response: _channel_scale(cd) for cd in ds.channels}
    for cd in ds.channels:
        s = scales[cd.response]
        for lab in cd.random_labels:
            rows.append(PriorSpec(f"sigma_nu_{cd.response}_{lab}", cd.response,
                                  f"normal(0, {_fmt(2 * s)})", "sigma_nu"))
    for cd in ds.channels:
        s = scales[cd.response]
        cats = cd.categories[1:] if cd.categories else [""]
        means = _alpha_means(cd, ds.fixed)
        stems = channel_parameter_stems(cd)
        sd_f = [_sd(cd.Xf[:, j]) for j in range(cd.Xf.shape[1])]
        sd_v = [_sd(cd.Xv[:, j]) for j in range(cd.Xv.shape[1])]

        def suffix(name, cat):
            return f"{name}_{cat}" if cat else name

        for k, cat in enumerate(cats):
            if cd.has_alpha:
                rows.append(PriorSpec(suffix(stems["alpha"], cat), cd.response,
                                      f"normal({_fmt(means[k])}, {_fmt(2 * s)})", "alpha", cat))
            if cd.varying_icpt:
                rows.append(PriorSpec(suffix(stems["tau_alpha"], cat), cd.response,
                                      f"normal(0, {_fmt(2 * s)})", "tau_alpha", cat))
            for name, sd in zip(stems["beta"], sd_f):
                scale = 2 * s / sd if sd > 0 else 2 * s
                rows.append(PriorSpec(suffix(name, cat), cd.response, f"normal(0, {_fmt(scale)})", "beta", cat))
            for name, sd in zip(stems["delta"], sd_v):
                scale = 2 * s / sd if sd > 0 else 2 * s
                rows.append(PriorSpec(suffix(name, cat), cd.response, f"normal(0, {_fmt(scale)})", "delta", cat))
            for name in stems["tau"]:
                rows.append(PriorSpec(suffix(name, cat), cd.response, f"normal(0, {_fmt(2 * s)})", "tau", cat))
        if cd.family == "gaussian":
            rows.append(PriorSpec(f"sigma_{cd.response}", cd.response, f"exponential({_fmt(1 / s)})", "sigma"))
        elif families.has_aux(cd.family):
            rows.append(PriorSpec(f"phi_{cd.response}", cd.response, "exponential(1)", "phi"))
    M = len(ds.random_registry)
    if M >= 2 and ds.formula.random_config.correlated:
        rows.append(PriorSpec("L_nu", "", "lkj_corr_cholesky(1)", "corr_nu"))
    return rows


def default_priors(f: ModelFormula, d: PanelData) -> list[PriorSpec]:
    return default_priors_for_design(build_design(f, d))


def priors_to_frame(rows: Sequence[PriorSpec]) -> pd.DataFrame:
    return pd.DataFrame([[r.parameter, r.response, r.prior, r.type, r.category] for r in rows],
                        columns=TABLE_COLUMNS)


def priors_from_frame(df: pd.DataFrame) -> list[PriorSpec]:
    missing = [c for c in TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise PriorError(f"prior table lacks column(s): {', '.join(missing)}")
    out = []
    for row in df[TABLE_COLUMNS].itertuples(index=False):
        vals = ["" if (v is None or (isinstance(v, float) and np.isnan(v))) else str(v) for v in row]
        out.append(PriorSpec(*vals))
    return out


def write_priors(rows: Sequence[PriorSpec], path: str | Path) -> None:
    priors_to_frame(rows).to_csv(path, index=False)


def read_priors(path: str | Path) -> list[PriorSpec]:
    path = Path(path)
    if not path.exists():
        raise InputOutputError(f"prior file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return priors_from_frame(df)


def check_priors(user: Sequence[PriorSpec], defaults: Sequence[PriorSpec]) -> list[PriorSpec]:
    """Validate a user table against the defaults and return it in default order."""
    by_name = {}
    for p in user:
        if p.parameter in by_name:
            raise PriorError(f"prior for {p.parameter!r} given more than once")
        by_name[p.parameter] = p
    expected = {p.parameter for p in defaults}
    extra = sorted(set(by_name) - expected)
    missing = sorted(expected - set(by_name))
    if extra:
        raise PriorError(f"prior table has unknown parameter(s): {', '.join(extra)}")
    if missing:
        raise PriorError(f"prior table lacks parameter(s): {', '.join(missing)}")
    out = []
    for ref in defaults:
        p = by_name[ref.parameter]
        if p.type != ref.type:
            raise PriorError(f"prior for {p.parameter!r} has type {p.type!r}, expected {ref.type!r}")
        dist = parse_prior(p.prior)
        if ref.type == "corr_nu":
            if dist.name != "lkj_corr_cholesky":
                raise PriorError("L_nu needs an lkj_corr_cholesky(eta) prior")
        elif dist.name == "lkj_corr_cholesky":
            raise PriorError(f"lkj_corr_cholesky is only valid for L_nu, not {p.parameter!r}")
        elif dist.name == "exponential" and ref.type not in POSITIVE_TYPES:
            raise PriorError(f"exponential prior is only valid for positive parameters, not {p.parameter!r}")
        out.append(PriorSpec(ref.parameter, ref.response, p.prior.strip(), ref.type, ref.category))
    return out
