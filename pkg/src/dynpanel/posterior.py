"""Draw extraction, summaries, diagnostics tables and the text fit report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .diagnostics import EBFMI_THRESHOLD, ebfmi, parameter_diagnostics
from .errors import DynpanelError
from .names import PARAMETER_TYPES, ParameterName, time_label

DEFAULT_PROBS = (0.05, 0.95)


def base_name(label: str) -> str:
    i = label.find("[")
    return label if i < 0 else label[:i]


def get_parameter_types(fit) -> list[str]:
    """Parameter types present in the fit, in canonical order."""
    present = {n.type for n in fit.parameter_names}
    return [t for t in PARAMETER_TYPES if t in present]


def get_parameter_names(fit, types: Optional[Sequence[str]] = None) -> list[str]:
    """Parameter names without time indices, in model order."""
    if types is not None:
        _check_filter("types", types, get_parameter_types(fit))
    out: list[str] = []
    for n, lab in zip(fit.parameter_names, fit.parameter_labels):
        if types is not None and n.type not in types:
            continue
        b = base_name(lab)
        if b not in out:
            out.append(b)
    return out


def _check_filter(what: str, given: Iterable[str], valid: Sequence[str]) -> None:
    bad = [g for g in given if g not in valid]
    if bad:
        raise DynpanelError(
            f"unknown {what}: {', '.join(map(str, bad))}. Valid {what} are: {', '.join(valid)}"
        )


@dataclass
class _Entry:
    name: ParameterName
    label: str
    column: int  # -1 for placeholder rows at fixed time points


def _entries(fit, include_fixed: bool) -> list[_Entry]:
    names, labels = fit.parameter_names, fit.parameter_labels
    fixed_times = [time_label(t) for t in fit.panel.times[: fit.design.fixed]]
    out: list[_Entry] = []
    seen: set[str] = set()
    for j, (n, lab) in enumerate(zip(names, labels)):
        tv = n.type in ("alpha", "delta") and n.time is not None
        if tv and include_fixed and fixed_times:
            b = base_name(lab)
            if b not in seen:
                seen.add(b)
                for t in fixed_times:
                    pn = ParameterName(n.type, n.response, n.predictor, t, n.group, n.category)
                    out.append(_Entry(pn, pn.render(), -1))
        out.append(_Entry(n, lab, j))
    return out


def _select(fit, parameters, responses, types, include_fixed) -> list[_Entry]:
    if parameters is not None:
        parameters = [parameters] if isinstance(parameters, str) else list(parameters)
        valid = get_parameter_names(fit)
        allowed = set(valid) | set(fit.parameter_labels)
        bad = [p for p in parameters if p not in allowed]
        if bad:
            _check_filter("parameters", bad, valid)
    if responses is not None:
        responses = [responses] if isinstance(responses, str) else list(responses)
        _check_filter("responses", responses, [c.response for c in fit.design.channels])
    if types is not None:
        types = [types] if isinstance(types, str) else list(types)
        _check_filter("types", types, get_parameter_types(fit))
    out = []
    for e in _entries(fit, include_fixed):
        if parameters is not None and e.label not in parameters and base_name(e.label) not in parameters:
            continue
        if responses is not None and e.name.response not in responses:
            continue
        if types is not None and e.name.type not in types:
            continue
        out.append(e)
    return out


def _time_value(n: ParameterName) -> float:
    if n.type in ("alpha", "delta") and n.time is not None:
        return float(n.time)
    return np.nan


def _meta_frame(entries: Sequence[_Entry]) -> pd.DataFrame:
    return pd.DataFrame({
        "parameter": [e.label for e in entries],
        "time": [_time_value(e.name) for e in entries],
        "group": [e.name.group for e in entries],
        "category": [e.name.category for e in entries],
        "response": [e.name.response for e in entries],
        "type": [e.name.type for e in entries],
    })


def quantile_column(p: float) -> str:
    return "q" + format(100.0 * p, "g")


def _values(fit, entries: Sequence[_Entry]) -> np.ndarray:
    """(draws, entries) matrix with NaN columns for placeholders."""
    mat = fit.draws_matrix()
    out = np.full((mat.shape[0], len(entries)), np.nan)
    for k, e in enumerate(entries):
        if e.column >= 0:
            out[:, k] = mat[:, e.column]
    return out


def summarize_matrix(values: np.ndarray, probs: Sequence[float] = DEFAULT_PROBS) -> dict[str, np.ndarray]:
    """Column mean, sd and type-7 quantiles; all-NaN columns stay NaN."""
    P = values.shape[1]
    res = {"mean": np.full(P, np.nan), "sd": np.full(P, np.nan)}
    qs = {quantile_column(p): np.full(P, np.nan) for p in probs}
    ok = ~np.all(np.isnan(values), axis=0)
    if ok.any():
        v = values[:, ok]
        res["mean"][ok] = v.mean(axis=0)
        res["sd"][ok] = v.std(axis=0, ddof=1) if v.shape[0] > 1 else np.nan
        for p in probs:
            qs[quantile_column(p)][ok] = np.quantile(v, p, axis=0, method="linear")
    res.update(qs)
    return res


def extract(
    fit,
    parameters: Optional[Sequence[str]] = None,
    responses: Optional[Sequence[str]] = None,
    types: Optional[Sequence[str]] = None,
    summary: bool = False,
    probs: Sequence[float] = DEFAULT_PROBS,
    include_fixed: bool = True,
) -> pd.DataFrame:
    """Posterior draws (one row per draw and parameter) or per-parameter summaries."""
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise DynpanelError(f"probabilities must lie in [0, 1], got {p}")
    entries = _select(fit, parameters, responses, types, include_fixed)
    meta = _meta_frame(entries)
    vals = _values(fit, entries)
    if summary:
        stats = summarize_matrix(vals, probs)
        head = pd.DataFrame({"parameter": meta["parameter"], **stats})
        return pd.concat([head, meta.drop(columns="parameter")], axis=1)
    S, P = vals.shape
    it, ch = fit.n_iterations, fit.n_chains
    chain = np.repeat(np.arange(1, ch + 1), it)
    iteration = np.tile(np.arange(1, it + 1), ch)
    long = meta.loc[np.repeat(np.arange(P), S)].reset_index(drop=True)
    long.insert(1, "value", vals.T.ravel())
    long[".chain"] = np.tile(chain, P)
    long[".iteration"] = np.tile(iteration, P)
    long[".draw"] = np.tile(np.arange(1, S + 1), P)
    return long


def diagnostics_table(fit) -> pd.DataFrame:
    d = parameter_diagnostics(fit.parameter_labels, fit.draws)
    return pd.DataFrame({
        "parameter": [x.parameter for x in d],
        "rhat": [x.rhat for x in d],
        "ess_bulk": [x.ess_bulk for x in d],
        "ess_tail": [x.ess_tail for x in d],
        "zero_variance": [x.zero_variance for x in d],
    })


@dataclass
class SamplerSummary:
    divergences: int
    max_treedepth_hits: int
    ebfmi: list[float]

    @property
    def low_ebfmi(self) -> list[int]:
        return [i + 1 for i, e in enumerate(self.ebfmi) if np.isfinite(e) and e < EBFMI_THRESHOLD]


def sampler_summary(fit) -> SamplerSummary:
    st = fit.stats
    div = int(np.sum(st["divergent"]))
    sat = int(np.sum(st["treedepth"] >= fit.config.max_treedepth))
    eb = [ebfmi(st["energy"][:, c]) for c in range(st["energy"].shape[1])]
    return SamplerSummary(div, sat, eb)


def _sampler_lines(s: SamplerSummary) -> list[str]:
    if s.divergences == 0 and s.max_treedepth_hits == 0 and not s.low_ebfmi:
        return ["No divergences, saturated max treedepths or low E-BFMIs."]
    out = []
    if s.divergences:
        out.append(f"There were {s.divergences} divergent transitions after warmup.")
    if s.max_treedepth_hits:
        out.append(f"There were {s.max_treedepth_hits} transitions that saturated the maximum treedepth.")
    if s.low_ebfmi:
        chains = ", ".join(str(c) for c in s.low_ebfmi)
        out.append(f"E-BFMI below {EBFMI_THRESHOLD} in chain(s) {chains}.")
    return out


def fit_summary(fit) -> str:
    """Plain-text report of the model, data, convergence and parameters."""
    ds = fit.design
    panel = fit.panel
    lines = ["Model:"]
    lines += ["  " + ln for ln in ds.formula.describe().splitlines()]
    lines.append("")
    lines.append(f"Data: {fit.data_name} (Number of observations: {fit.n_obs})")
    gname = panel.group if panel.group is not None else "(none)"
    lines.append(f"Grouping variable: {gname} (Number of groups: {panel.N})")
    lines.append(f"Time index variable: {panel.time} (Number of time points: {panel.T})")
    lines.append("")
    try:
        diag = diagnostics_table(fit)
    except DynpanelError:
        diag = None
    if diag is not None:
        ok = diag[~diag["zero_variance"] & diag["rhat"].notna()]
        if len(ok):
            b = ok.loc[ok["ess_bulk"].idxmin()]
            t = ok.loc[ok["ess_tail"].idxmin()]
            r = ok.loc[ok["rhat"].idxmax()]
            lines.append(f"Smallest bulk-ESS: {b['ess_bulk']:.0f} ({b['parameter']})")
            lines.append(f"Smallest tail-ESS: {t['ess_tail']:.0f} ({t['parameter']})")
            lines.append(f"Largest Rhat: {r['rhat']:.3f} ({r['parameter']})")
    else:
        lines.append("Too few iterations for convergence diagnostics.")
    lines.append("")
    lines.extend(_sampler_lines(sampler_summary(fit)))
    lines.append("")
    lines.append("Elapsed time (seconds):")
    lines.append(f"{'':<9}{'warmup':>9}{'sample':>9}")
    for c in range(fit.n_chains):
        lines.append(f"{'chain:' + str(c + 1):<9}{fit.time_warmup[c]:>9.3f}{fit.time_sampling[c]:>9.3f}")
    lines.append("")
    lines.append("Summary statistics of the time-invariant parameters:")
    ti = [e for e in _entries(fit, False) if e.name.time is None and e.name.type != "nu"]
    if ti:
        stats = summarize_matrix(_values(fit, ti), DEFAULT_PROBS)
        tab = pd.DataFrame({"parameter": [e.label for e in ti], **stats})
        lines.append(tab.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    else:
        lines.append("(none)")
    return "\n".join(lines) + "\n"
