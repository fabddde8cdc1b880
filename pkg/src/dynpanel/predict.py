"""Fitted values and multi-step posterior-predictive simulation."""

from __future__ import annotations

import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from . import families
from .design import Column, ValueStore, evaluate_aux
from .errors import DataError, PredictionError
from .formula import max_lags
from .formula.expr import evaluate as evaluate_expr
from .formula.expr import variables as expr_variables
from .names import ParameterName, time_label
from .panel import PanelData, conform, forward_fill, time_positions

BLOCK = 64
TYPES = ("response", "mean", "link")
NEW_LEVELS = ("none", "bootstrap", "gaussian", "original")
IMPUTE = ("none", "locf")


# funs vocabulary -----------------------------------------------------------------

def _nan_reduce(fn: Callable, values: np.ndarray) -> np.ndarray:
    """Reduce over the last axis ignoring NaN; all-missing slices give NaN."""
    empty = np.all(np.isnan(values), axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = np.asarray(fn(values), dtype=float)
    return np.where(empty, np.nan, out)


_FUNS: dict[str, Callable] = {
    "mean": lambda v: np.nanmean(v, axis=-1),
    "sd": lambda v: np.nanstd(v, axis=-1, ddof=1),
    "min": lambda v: np.nanmin(v, axis=-1),
    "max": lambda v: np.nanmax(v, axis=-1),
    "median": lambda v: np.nanmedian(v, axis=-1),
    "sum": lambda v: np.nansum(v, axis=-1),
}
_QUANTILE = re.compile(r"^quantile\(\s*([0-9.eE+-]+)\s*\)$")


@dataclass(frozen=True)
class SummaryFunction:
    """A named reduction from the fixed vocabulary, e.g. ``mean`` or ``quantile(0.9)``."""

    name: str
    spec: str

    def __post_init__(self):
        self.reducer  # validates

    @property
    def reducer(self) -> Callable[[np.ndarray], np.ndarray]:
        s = self.spec.strip()
        if s in _FUNS:
            return _FUNS[s]
        m = _QUANTILE.match(s)
        if m:
            p = float(m.group(1))
            if not 0.0 <= p <= 1.0:
                raise PredictionError(f"quantile probability must lie in [0, 1], got {p}")
            return lambda v: np.nanquantile(v, p, axis=-1, method="linear")
        raise PredictionError(
            f"unknown summary function {s!r}; available: mean, sd, min, max, median, sum, quantile(p)"
        )

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return _nan_reduce(self.reducer, values)


FunsLike = Mapping[str, Union[Mapping[str, str], Sequence[str]]]


def normalize_funs(funs: FunsLike) -> dict[str, list[SummaryFunction]]:
    """``{resp: {name: spec}}`` or ``{resp: [spec, ...]}`` to summary functions."""
    out: dict[str, list[SummaryFunction]] = {}
    for resp, fs in funs.items():
        if isinstance(fs, Mapping):
            out[resp] = [SummaryFunction(str(n), str(s)) for n, s in fs.items()]
        else:
            out[resp] = [s if isinstance(s, SummaryFunction) else SummaryFunction(str(s), str(s)) for s in fs]
        if not out[resp]:
            raise PredictionError(f"no summary functions given for {resp!r}")
    return out


def parse_funs(text: str) -> dict[str, list[SummaryFunction]]:
    """Parse ``"g:mean_t=mean,sd;y:mean"`` into summary functions per response."""
    out: dict[str, list[SummaryFunction]] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if ":" not in part:
            raise PredictionError(f"funs entry {part!r} lacks 'response:'")
        resp, rest = part.split(":", 1)
        fs = []
        for item in _split_top(rest):
            name, _, spec = item.partition("=")
            fs.append(SummaryFunction(name.strip(), (spec or name).strip()))
        out.setdefault(resp.strip(), []).extend(fs)
    return out


def _split_top(text: str) -> list[str]:
    """Split on commas outside parentheses."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


# parameter lookup ----------------------------------------------------------------

@dataclass
class _ChannelIndex:
    """Column indices of one channel's parameters in the draw matrix."""

    response: str
    family: str
    categories: Optional[list[str]]
    fixed: list[Column]
    varying: list[Column]
    random: list[Column]
    random_icpt: bool
    offset: Optional[str]
    trials: Optional[str]
    alpha: Optional[np.ndarray]  # (S,) or (S, T')
    beta: np.ndarray  # (S, Kf)
    delta: np.ndarray  # (S, Kv, T')
    aux: Optional[int]
    re_dims: np.ndarray  # positions in the random-effect registry


def _channel_indices(fit) -> list[_ChannelIndex]:
    ds = fit.design
    pos = {lab: j for j, lab in enumerate(fit.parameter_labels)}
    times = [time_label(t) for t in ds.panel.times[ds.fixed:]]
    registry = ds.random_registry
    out = []
    for cd in ds.channels:
        r = cd.response
        cats = cd.categories[1:] if cd.categories else [None]

        def idx(n: ParameterName) -> int:
            return pos[n.render()]

        alpha = None
        if cd.has_alpha:
            if cd.varying_icpt:
                alpha = np.array([[idx(ParameterName("alpha", r, None, t, None, c)) for t in times]
                                  for c in cats])
            else:
                alpha = np.array([idx(ParameterName("alpha", r, None, None, None, c)) for c in cats])
        beta = np.array([[idx(ParameterName("beta", r, col.label, None, None, c)) for col in cd.fixed]
                         for c in cats], dtype=int).reshape(len(cats), len(cd.fixed))
        delta = np.array([[[idx(ParameterName("delta", r, col.label, t, None, c)) for t in times]
                           for col in cd.varying] for c in cats], dtype=int)
        delta = delta.reshape(len(cats), len(cd.varying), len(times))
        aux = None
        if cd.family == "gaussian":
            aux = idx(ParameterName("sigma", r))
        elif families.has_aux(cd.family):
            aux = idx(ParameterName("phi", r))
        dims = np.array([k for k, (rr, _) in enumerate(registry) if rr == r], dtype=int)
        out.append(_ChannelIndex(r, cd.family, cd.categories, cd.fixed, cd.varying, cd.random,
                                 cd.random_icpt, cd.spec.offset, cd.spec.trials,
                                 alpha, beta, delta, aux, dims))
    return out


@dataclass
class _RandomIndex:
    nu: np.ndarray  # (M, N_train)
    sigma: np.ndarray  # (M,)
    corr: np.ndarray  # (M, M) draw-matrix positions, -1 on and below the diagonal


def _random_index(fit) -> Optional[_RandomIndex]:
    reg = fit.design.random_registry
    if not reg:
        return None
    pos = {lab: j for j, lab in enumerate(fit.parameter_labels)}
    groups = fit.panel.group_labels()
    nu = np.array([[pos[ParameterName("nu", r, lab, None, g).render()] for g in groups] for r, lab in reg])
    sigma = np.array([pos[ParameterName("sigma_nu", r, lab).render()] for r, lab in reg])
    M = len(reg)
    corr = np.full((M, M), -1, dtype=int)
    for i in range(M):
        for j in range(i + 1, M):
            (r1, l1), (r2, l2) = reg[i], reg[j]
            lab = ParameterName("corr_nu", r1, f"{l1}__{r2}_{l2}").render()
            if lab in pos:
                corr[i, j] = pos[lab]
    return _RandomIndex(nu, sigma, corr)


# simulation context --------------------------------------------------------------

@dataclass
class _Context:
    """Everything a worker needs to process one block of draws."""

    draws: np.ndarray  # (S_sel, P)
    channels: list[_ChannelIndex]
    random: Optional[_RandomIndex]
    order: list[tuple[str, object]]  # ("stochastic", idx) or ("aux", ChannelSpec)
    grids: dict[str, np.ndarray]  # (N, T) starting values
    history: dict[str, np.ndarray]  # (N, depth) aux histories
    dynamic: list[str]  # variables carried per draw
    K: int
    T: int
    N: int
    group_map: np.ndarray  # training index per group, -1 if new
    new_levels: str
    mode: str  # "predict" or "fitted"
    type: str
    seed: int
    funs: Optional[dict[str, list[SummaryFunction]]]

    @property
    def n_blocks(self) -> int:
        return -(-self.draws.shape[0] // BLOCK)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), *key])))


def _random_effects(ctx: _Context, P: np.ndarray, block: int) -> Optional[np.ndarray]:
    """(B, N, M) random effects for the groups of the prediction data."""
    ri = ctx.random
    if ri is None:
        return None
    B = P.shape[0]
    train = P[:, ri.nu]  # (B, M, N_train)
    train = np.transpose(train, (0, 2, 1))
    M, n_train = ri.nu.shape
    gm = ctx.group_map
    out = np.empty((B, ctx.N, M))
    seen = gm >= 0
    out[:, seen] = train[:, gm[seen]]
    new = np.nonzero(~seen)[0]
    if len(new) == 0:
        return out
    rng = _rng(ctx.seed, 2, block)
    if ctx.new_levels == "bootstrap":
        pick = rng.integers(0, n_train, size=(B, len(new)))
        out[:, new] = np.take_along_axis(train, pick[:, :, None], axis=1)
    elif ctx.new_levels == "gaussian":
        sd = P[:, ri.sigma]  # (B, M)
        C = np.broadcast_to(np.eye(M), (B, M, M)).copy()
        iu = np.nonzero(ri.corr >= 0)
        if len(iu[0]):
            C[:, iu[0], iu[1]] = P[:, ri.corr[iu]]
            C[:, iu[1], iu[0]] = P[:, ri.corr[iu]]
        L = np.linalg.cholesky(C + 1e-12 * np.eye(M))
        z = rng.standard_normal((B, len(new), M))
        out[:, new] = sd[:, None, :] * np.einsum("bij,bnj->bni", L, z)
    else:  # original is resolved into group_map up front
        raise PredictionError(f"unseen groups are not allowed with new_levels = {ctx.new_levels!r}")
    return out


def _stack(cols: Sequence[Column], store: ValueStore, t: int, shape) -> np.ndarray:
    if not cols:
        return np.zeros(shape + (0,))
    return np.stack([np.broadcast_to(c.value(store, t), shape) for c in cols], axis=-1)


def _eta(ch: _ChannelIndex, P: np.ndarray, store: ValueStore, t: int, K: int,
         nu: Optional[np.ndarray]) -> tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Linear predictor (B, N, S) at time index t, plus aux (B, 1) and trials (B, N)."""
    B = P.shape[0]
    N = next(iter(store.values.values())).shape[-2]
    shape = (B, N)
    tt = t - K
    S = ch.beta.shape[0]
    eta = np.zeros((B, N, S))
    if ch.offset:
        eta += np.broadcast_to(store.lagged(ch.offset, 0, t), shape)[..., None]
    if ch.alpha is not None:
        a = P[:, ch.alpha[:, tt]] if ch.alpha.ndim == 2 else P[:, ch.alpha]
        eta += a[:, None, :]
    if ch.fixed:
        Xf = _stack(ch.fixed, store, t, shape)
        eta += np.einsum("bnk,bsk->bns", Xf, P[:, ch.beta])
    if ch.varying:
        Xv = _stack(ch.varying, store, t, shape)
        eta += np.einsum("bnk,bsk->bns", Xv, P[:, ch.delta[:, :, tt]])
    if len(ch.re_dims):
        Xr = _stack(ch.random, store, t, shape)
        if ch.random_icpt:
            Xr = np.concatenate([np.ones(shape + (1,)), Xr], axis=-1)
        eta[..., 0] += np.sum(Xr * nu[:, :, ch.re_dims], axis=-1)
    aux = P[:, ch.aux][:, None] if ch.aux is not None else None
    trials = np.broadcast_to(store.lagged(ch.trials, 0, t), shape) if ch.trials else None
    return eta, aux, trials


def _record(ch: _ChannelIndex, kind: str, eta, aux, trials) -> np.ndarray:
    """Mean or link values; (B, N) or (B, N, K) for categorical channels."""
    if kind == "link":
        return eta if ch.family == "categorical" else eta[..., 0]
    if ch.family == "categorical":
        return families.category_probs(eta)
    return families.mean(ch.family, eta[..., 0], aux, trials)


def _output_width(ch: _ChannelIndex, kind: str) -> int:
    if ch.family != "categorical" or kind == "response":
        return 1
    return len(ch.categories) if kind == "mean" else len(ch.categories) - 1


def _run_block(ctx: _Context, block: int) -> dict:
    lo = block * BLOCK
    P = ctx.draws[lo: lo + BLOCK]
    B, N, T = P.shape[0], ctx.N, ctx.T
    values = {}
    for name, g in ctx.grids.items():
        values[name] = np.broadcast_to(g, (B, N, T)).copy() if name in ctx.dynamic else g
    hist = {k: np.broadcast_to(h, (B,) + h.shape) for k, h in ctx.history.items()}
    store = ValueStore(values, hist)
    nu = _random_effects(ctx, P, block)
    kind = "mean" if ctx.mode == "fitted" else ctx.type
    outs = {ch.response: np.full((B, N, T, _output_width(ch, kind)), np.nan) for ch in ctx.channels}
    for t in range(ctx.K, T):
        for ci, (role, item) in enumerate(ctx.order):
            if role == "aux":
                if ctx.mode == "predict":
                    env = {k: v[..., t] for k, v in values.items()}
                    val = np.broadcast_to(evaluate_expr(item.aux_expr, env), (B, N))
                    values[item.response][..., t] = val
                continue
            ch = ctx.channels[item]
            eta, aux, trials = _eta(ch, P, store, t, ctx.K, nu)
            y = values[ch.response]
            if ctx.mode == "fitted":
                outs[ch.response][:, :, t] = _as_cols(_record(ch, "mean", eta, aux, trials))
                continue
            miss = np.isnan(y[..., t])
            if not miss.any():
                continue
            sim = families.simulate(ch.family, eta if ch.family == "categorical" else eta[..., 0],
                                    aux, trials, _rng(ctx.seed, 1, block, t, ci))
            if kind == "response":
                rec = sim[..., None]
            else:
                rec = _as_cols(_record(ch, kind, eta, aux, trials))
            outs[ch.response][:, :, t][miss] = rec[miss]
            y[..., t] = np.where(miss, sim, y[..., t])
    aux_vals = {spec.response: values[spec.response] for role, spec in ctx.order if role == "aux"}
    if ctx.funs is None:
        return {"outs": outs, "aux": aux_vals}
    red = {}
    for resp, fs in ctx.funs.items():
        arr = np.transpose(outs[resp][..., 0], (0, 2, 1))  # (B, T, N)
        for f in fs:
            red[f"{f.name}_{resp}"] = f(arr)
    return {"funs": red}


def _as_cols(x: np.ndarray) -> np.ndarray:
    return x if x.ndim == 3 else x[..., None]


_WORKER_CTX: Optional[_Context] = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker(block: int) -> dict:
    return _run_block(_WORKER_CTX, block)


def _run(ctx: _Context, cores: int) -> list[dict]:
    blocks = range(ctx.n_blocks)
    workers = min(max(int(cores), 1), ctx.n_blocks, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            return list(ex.map(_worker, blocks))
    return [_run_block(ctx, b) for b in blocks]


# preparation -------------------------------------------------------------------

def select_draws(total: int, n_draws: Optional[int]) -> np.ndarray:
    """Evenly spaced draw indices (all draws by default)."""
    if n_draws is None or n_draws >= total:
        return np.arange(total)
    if n_draws < 1:
        raise PredictionError("n_draws must be at least 1")
    return np.unique(np.round(np.linspace(0, total - 1, n_draws)).astype(int))


def _prepare_panel(fit, newdata) -> PanelData:
    like = fit.panel
    if newdata is None:
        return like
    df = newdata.frame if isinstance(newdata, PanelData) else pd.DataFrame(newdata)
    for c in fit.design.channels:
        if c.response not in df.columns:
            df = df.assign(**{c.response: np.nan})
            if c.family == "categorical":
                df[c.response] = df[c.response].astype(object)
    nd = conform(df, like)
    pos = time_positions(nd, like)
    if not np.array_equal(pos, np.arange(len(pos))):
        raise DataError("newdata must cover consecutive time points starting from the first fitted time point")
    needed = set()
    for c in fit.formula.channels:
        needed.update(v for v, _ in c.dependencies())
        if c.aux_past is not None:
            needed.update(v for v, _ in expr_variables(c.aux_past))
    exog = needed - set(fit.formula.responses)
    missing = sorted(v for v in exog if v not in nd.kinds)
    if missing:
        raise DataError(f"newdata lacks variable(s): {', '.join(missing)}")
    return nd


def _group_map(fit, nd: PanelData, new_levels: str) -> np.ndarray:
    if new_levels not in NEW_LEVELS:
        raise PredictionError(f"new_levels must be one of {', '.join(NEW_LEVELS)}")
    train = {g: i for i, g in enumerate(fit.panel.groups)}
    gm = np.array([train.get(g, -1) for g in nd.groups], dtype=int)
    if (gm >= 0).all() or not fit.design.random_registry:
        return gm
    if new_levels == "none":
        unseen = [str(g) for g, k in zip(nd.groups, gm) if k < 0]
        raise PredictionError(
            f"newdata contains groups without estimated random effects ({', '.join(unseen)}); "
            "choose new_levels = 'bootstrap', 'gaussian' or 'original'"
        )
    if new_levels == "original":
        if nd.N != fit.panel.N:
            raise PredictionError("new_levels = 'original' requires as many groups as the training data")
        return np.arange(nd.N)
    return gm


def _exogenous(fit) -> list[str]:
    return [v for v in fit.panel.kinds if v not in set(fit.formula.responses)]


def _context(fit, nd: PanelData, mode: str, type: str, impute: str, new_levels: str,
             n_draws: Optional[int], seed: int, funs) -> tuple[_Context, np.ndarray]:
    if impute not in IMPUTE:
        raise PredictionError(f"impute must be one of {', '.join(IMPUTE)}")
    if type not in TYPES:
        raise PredictionError(f"type must be one of {', '.join(TYPES)}")
    f = fit.formula
    grids = {name: nd.grid(name) for name in nd.kinds}
    if impute == "locf":
        for v in _exogenous(fit):
            if v in grids:
                grids[v] = forward_fill(grids[v])
    base = ValueStore(dict(grids))
    lags = max_lags(f)
    history = {}
    for c in f.ordered_channels():
        if c.is_deterministic:
            vals, hist = evaluate_aux(base, c, depth=lags.get(c.response, 0), check=False)
            base.values[c.response] = vals
            if hist is not None:
                history[c.response] = hist
    grids = base.values
    idx = _channel_indices(fit)
    pos = {ch.response: i for i, ch in enumerate(idx)}
    order = []
    for r in f.order:
        c = f.channel(r)
        order.append(("aux", c) if c.is_deterministic else ("stochastic", pos[r]))
    dynamic = [ch.response for ch in idx] + [c.response for c in f.deterministic] if mode == "predict" else []
    sel = select_draws(fit.n_draws, n_draws)
    ctx = _Context(
        draws=fit.draws_matrix()[sel], channels=idx, random=_random_index(fit), order=order,
        grids=grids, history=history, dynamic=dynamic, K=fit.design.fixed, T=nd.T, N=nd.N,
        group_map=_group_map(fit, nd, new_levels), new_levels=new_levels, mode=mode, type=type,
        seed=seed, funs=funs,
    )
    return ctx, sel


# assembly ----------------------------------------------------------------------

def _column_names(ch: _ChannelIndex, kind: str) -> list[str]:
    suffix = {"response": "new", "mean": "mean", "link": "link", "fitted": "fitted"}[kind]
    base = f"{ch.response}_{suffix}"
    w = _output_width(ch, "mean" if kind == "fitted" else kind)
    if w == 1:
        return [base]
    cats = ch.categories if w == len(ch.categories) else ch.categories[1:]
    return [f"{base}_{c}" for c in cats]


def _time_column(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return t.astype(np.int64) if np.all(np.mod(t, 1) == 0) else t


def _keys(nd: PanelData, S: int) -> pd.DataFrame:
    """(draw, group, time) key columns in draw-major order."""
    rows = nd.N * nd.T
    out = pd.DataFrame({
        nd.group_column: np.tile(nd.frame[nd.group_column].to_numpy(), S),
        nd.time: np.tile(_time_column(nd.frame[nd.time].to_numpy()), S),
        ".draw": np.repeat(np.arange(1, S + 1), rows),
    })
    if nd.group is None:
        out = out.drop(columns=[nd.group_column])
    return out


def _long_outputs(ctx: _Context, results: list[dict], kind: str, nd: PanelData) -> pd.DataFrame:
    S = ctx.draws.shape[0]
    frame = _keys(nd, S)
    for ch in ctx.channels:
        arr = np.concatenate([r["outs"][ch.response] for r in results], axis=0)  # (S, N, T, w)
        names = _column_names(ch, kind)
        for j, name in enumerate(names):
            col = arr[..., j].reshape(-1)
            if ch.family == "categorical" and kind == "response":
                codes = np.where(np.isnan(col), -1, col).astype(int)
                col = pd.Categorical.from_codes(codes, categories=ch.categories)
            frame[name] = col
    if results and "aux" in results[0]:
        for name in results[0]["aux"]:
            frame[name] = np.concatenate([r["aux"][name] for r in results], axis=0).reshape(-1)
    return frame


def _observed(nd: PanelData) -> pd.DataFrame:
    out = nd.frame.copy()
    out[nd.time] = _time_column(out[nd.time].to_numpy())
    if nd.group is None:
        out = out.drop(columns=[nd.group_column])
    return out


def _attach_data(frame: pd.DataFrame, nd: PanelData) -> pd.DataFrame:
    obs = _observed(nd)
    reps = len(frame) // max(len(obs), 1)
    keys = {nd.time, nd.group_column}
    for c in obs.columns:
        if c in keys or c in frame.columns:
            continue
        frame[c] = np.tile(obs[c].to_numpy(), reps) if not isinstance(obs[c].dtype, pd.CategoricalDtype) \
            else pd.Categorical(np.tile(obs[c].astype(object).to_numpy(), reps), categories=obs[c].cat.categories)
    return frame


@dataclass
class Prediction:
    """Prediction output.

    With ``expand`` the single long table is ``expanded``; otherwise
    ``simulated`` holds predictions keyed by draw, group and time and
    ``observed`` the (imputed) newdata. With summary functions the reduced
    table is ``summary``.
    """

    expanded: Optional[pd.DataFrame] = None
    simulated: Optional[pd.DataFrame] = None
    observed: Optional[pd.DataFrame] = None
    summary: Optional[pd.DataFrame] = None

    @property
    def table(self) -> pd.DataFrame:
        for t in (self.summary, self.expanded, self.simulated):
            if t is not None:
                return t
        raise PredictionError("empty prediction")


def predict(
    fit,
    newdata: Optional[Union[pd.DataFrame, PanelData]] = None,
    type: str = "response",
    funs: Optional[FunsLike] = None,
    impute: str = "none",
    new_levels: str = "none",
    n_draws: Optional[int] = None,
    expand: bool = True,
    seed: int = 0,
    cores: int = 1,
) -> Prediction:
    """Simulate missing responses forward in time for every posterior draw.

    Cells whose response is missing in ``newdata`` are simulated; simulated
    values feed later channels and time points. Observed cells pass through.
    """
    nd = _prepare_panel(fit, newdata)
    fn = None
    if funs is not None:
        fn = normalize_funs(funs)
        stochastic = {c.response: c for c in fit.design.channels}
        for resp in fn:
            if resp not in stochastic:
                raise PredictionError(
                    f"funs refer to {resp!r}, which is not a stochastic channel "
                    f"({', '.join(stochastic)})"
                )
            if stochastic[resp].family == "categorical":
                raise PredictionError(f"funs are not available for the categorical channel {resp!r}")
        expand = False
    ctx, sel = _context(fit, nd, "predict", type, impute, new_levels, n_draws, seed, fn)
    results = _run(ctx, cores)
    observed = _observed(nd)
    if impute == "locf":
        for v in _exogenous(fit):
            if v in observed.columns and nd.kinds.get(v) != "categorical":
                observed[v] = ctx.grids[v].reshape(-1)
    if fn is not None:
        S = ctx.draws.shape[0]
        data = {}
        for key in results[0]["funs"]:
            data[key] = np.concatenate([r["funs"][key] for r in results], axis=0).reshape(-1)
        table = pd.DataFrame(data)
        table[nd.time] = np.tile(_time_column(nd.times), S)
        table[".draw"] = np.repeat(np.arange(1, S + 1), nd.T)
        return Prediction(summary=table, observed=observed)
    long = _long_outputs(ctx, results, type, nd)
    if expand:
        obs = nd.copy_with(observed)
        return Prediction(expanded=_attach_data(long, obs))
    return Prediction(simulated=long, observed=observed)


def fitted(
    fit,
    newdata: Optional[Union[pd.DataFrame, PanelData]] = None,
    new_levels: str = "none",
    n_draws: Optional[int] = None,
    seed: int = 0,
    cores: int = 1,
) -> pd.DataFrame:
    """Expected responses given the observed history, for every draw.

    Lagged and same-time predictors are taken from the data; cells with a
    missing predictor give NaN.
    """
    nd = _prepare_panel(fit, newdata)
    ctx, _ = _context(fit, nd, "fitted", "mean", "none", new_levels, n_draws, seed, None)
    results = _run(ctx, cores)
    long = _long_outputs(ctx, results, "fitted", nd)
    return _attach_data(long, nd)
