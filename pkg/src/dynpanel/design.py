"""Spline basis, lags, auxiliary channels and per-channel design matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.interpolate import BSpline

from .errors import DataError, FormulaError
from .formula import expand_lags, fixed_timepoints, max_lags
from .formula.expr import evaluate as evaluate_expr
from .formula.expr import variables as expr_variables
from .formula.terms import ChannelSpec, ModelFormula, SplinesConfig, Term
from .panel import PanelData


@dataclass(frozen=True)
class SplineBasis:
    B: np.ndarray
    df: int
    degree: int
    knots: np.ndarray


def spline_knots(T: int, df: int, degree: int) -> np.ndarray:
    """Clamped knot vector with equally spaced interior knots on [1, T]."""
    n_inner = df - degree - 1
    inner = np.linspace(1.0, float(T), n_inner + 2)[1:-1] if n_inner > 0 else np.empty(0)
    return np.concatenate([np.full(degree + 1, 1.0), inner, np.full(degree + 1, float(T))])


def build_spline_basis(T: int, cfg: SplinesConfig) -> SplineBasis:
    """B-spline basis evaluated at t = 1..T with ``cfg.df`` columns."""
    if cfg.df > T:
        raise FormulaError(f"splines df = {cfg.df} exceeds the number of modelled time points ({T})")
    if cfg.df <= cfg.degree:
        raise FormulaError("splines need df > degree")
    if T == 1:
        return SplineBasis(np.ones((1, 1)), cfg.df, cfg.degree, np.array([1.0, 1.0]))
    knots = spline_knots(T, cfg.df, cfg.degree)
    x = np.arange(1, T + 1, dtype=float)
    B = BSpline.design_matrix(x, knots, cfg.degree).toarray()
    return SplineBasis(B, cfg.df, cfg.degree, knots)


def lag_grid(x: np.ndarray, k: int, history: Optional[np.ndarray] = None) -> np.ndarray:
    """Shift the last (time) axis by ``k``.

    ``history[..., j - 1]`` supplies the value at time index ``-j``; without
    it the leading cells are missing.
    """
    if k < 1:
        raise ValueError("lag shift must be >= 1")
    out = np.full(np.broadcast_shapes(x.shape), np.nan)
    T = x.shape[-1]
    if k < T:
        out[..., k:] = x[..., : T - k]
    if history is not None:
        for t in range(min(k, T)):
            j = k - t
            if j <= history.shape[-1]:
                out[..., t] = history[..., j - 1]
    return out


def apply_lag(col: np.ndarray, k: int, panel: PanelData) -> np.ndarray:
    """Lag a flat column laid out in panel order; no leakage across groups."""
    grid = np.asarray(col, dtype=float).reshape(panel.N, panel.T)
    return lag_grid(grid, k).reshape(-1)


class ValueStore:
    """Variable grids of shape (..., N, T) plus backward history for aux lags."""

    def __init__(self, values: dict[str, np.ndarray], history: Optional[dict[str, np.ndarray]] = None):
        self.values = values
        self.history = history or {}

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def lagged(self, name: str, k: int, t: Optional[int] = None) -> np.ndarray:
        x = self.values[name]
        hist = self.history.get(name)
        if t is None:
            return x if k == 0 else lag_grid(x, k, hist)
        s = t - k
        if s >= 0:
            return x[..., s]
        j = -s
        if hist is not None and j <= hist.shape[-1]:
            return hist[..., j - 1]
        return np.full(x.shape[:-1], np.nan)


@dataclass(frozen=True)
class Atom:
    variable: str
    shift: int = 0
    level: Optional[int] = None

    def value(self, store: ValueStore, t: Optional[int] = None) -> np.ndarray:
        v = store.lagged(self.variable, self.shift, t)
        if self.level is None:
            return v
        return np.where(np.isnan(v), np.nan, (v == self.level).astype(float))


@dataclass(frozen=True)
class Column:
    """One design-matrix column: a product of atoms, labelled for parameter names."""

    label: str
    atoms: tuple[Atom, ...]

    def value(self, store: ValueStore, t: Optional[int] = None) -> np.ndarray:
        out = self.atoms[0].value(store, t)
        for a in self.atoms[1:]:
            out = out * a.value(store, t)
        return out


def _factor_columns(term: Term, kinds: Mapping[str, str], levels: Mapping[str, list[str]],
                    drop_first: bool) -> list[tuple[str, Atom]]:
    base = term.label
    if kinds.get(term.variable) == "categorical":
        lv = levels[term.variable]
        start = 1 if drop_first else 0
        return [(f"{base}{lv[j]}", Atom(term.variable, term.shift, j)) for j in range(start, len(lv))]
    return [(base, Atom(term.variable, term.shift))]


def term_columns(term: Term, kinds: Mapping[str, str], levels: Mapping[str, list[str]],
                 drop_first: bool) -> list[Column]:
    """Expand a non-intercept term into numeric columns (dummy coding for factors)."""
    if term.kind == "intercept":
        raise ValueError("intercepts are not design columns")
    factors = term.factors if term.kind == "interaction" else (term,)
    combos: list[tuple[list[str], list[Atom]]] = [([], [])]
    for f in factors:
        opts = _factor_columns(f, kinds, levels, drop_first)
        combos = [(lab + [l], at + [a]) for lab, at in combos for l, a in opts]
    return [Column(":".join(lab), tuple(at)) for lab, at in combos]


@dataclass
class ChannelDesign:
    """Design for one stochastic channel over its unmasked (group, time) cells."""

    spec: ChannelSpec
    fixed: list[Column]
    varying: list[Column]
    random: list[Column]
    fixed_icpt: bool
    varying_icpt: bool
    random_icpt: bool
    categories: Optional[list[str]]
    mask: np.ndarray
    gidx: np.ndarray
    tidx: np.ndarray
    y: np.ndarray
    Xf: np.ndarray
    Xv: np.ndarray
    Xr: np.ndarray
    offset: Optional[np.ndarray]
    trials: Optional[np.ndarray]

    @property
    def response(self) -> str:
        return self.spec.response

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def has_alpha(self) -> bool:
        return self.fixed_icpt or self.varying_icpt

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_cat(self) -> int:
        """Number of linear predictors (K - 1 for categorical, else 1)."""
        return len(self.categories) - 1 if self.categories is not None else 1

    @property
    def random_labels(self) -> list[str]:
        return (["alpha"] if self.random_icpt else []) + [c.label for c in self.random]

    def columns_at(self, store: ValueStore, t: int):
        """(Xf, Xv, Xr, offset, trials) at time index t; leading dims kept."""
        def stack(cols):
            if not cols:
                return None
            return np.stack([c.value(store, t) for c in cols], axis=-1)

        off = store.lagged(self.spec.offset, 0, t) if self.spec.offset else None
        tri = store.lagged(self.spec.trials, 0, t) if self.spec.trials else None
        return stack(self.fixed), stack(self.varying), stack(self.random), off, tri


@dataclass
class DesignSet:
    formula: ModelFormula
    panel: PanelData
    channels: list[ChannelDesign]
    spline: Optional[SplineBasis]
    fixed: int
    store: ValueStore
    aux_order: list[str] = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.panel.N

    @property
    def T(self) -> int:
        return self.panel.T

    def channel(self, response: str) -> ChannelDesign:
        for c in self.channels:
            if c.response == response:
                return c
        raise KeyError(response)

    @property
    def random_registry(self) -> list[tuple[str, str]]:
        """(response, label) for each random-effect dimension, in storage order."""
        return [(c.response, lab) for c in self.channels for lab in c.random_labels]

    def basis_row(self, t: int) -> Optional[np.ndarray]:
        """Spline basis row for time index t (None at fixed time points)."""
        if self.spline is None or t < self.fixed:
            return None
        return self.spline.B[t - self.fixed]

    def n_likelihood_terms(self) -> int:
        return int(sum(c.mask.sum() for c in self.channels))


def _check_variables(f: ModelFormula, d: PanelData) -> None:
    responses = set(f.responses)
    missing = set()
    for c in f.channels:
        deps = c.dependencies()
        if c.aux_past is not None:
            deps += expr_variables(c.aux_past)
        missing.update(v for v, _ in deps if v not in d.kinds and v not in responses)
        if not c.is_deterministic and c.response not in d.kinds:
            missing.add(c.response)
    if missing:
        raise DataError(f"variable(s) not found in data: {', '.join(sorted(missing))}")


def _aux_history(c: ChannelSpec, store: ValueStore, depth: int, N: int, T: int) -> Optional[np.ndarray]:
    if depth == 0:
        return None
    if c.aux_init is not None:
        vals = np.full(depth, np.nan)
        n = min(depth, len(c.aux_init))
        vals[:n] = c.aux_init[:n]
        return np.broadcast_to(vals, (N, depth)).copy()
    if c.aux_past is not None:
        env = {k: v for k, v in store.values.items()}
        full = np.broadcast_to(evaluate_expr(c.aux_past, env), (N, T))
        hist = np.full((N, depth), np.nan)
        n = min(depth, T)
        hist[:, :n] = full[:, :n]
        return hist
    return None


def _check_aux_type(c: ChannelSpec, vals: np.ndarray) -> None:
    obs = vals[~np.isnan(vals)]
    if c.aux_type == "integer" and not np.all(obs == np.round(obs)):
        raise DataError(f"auxiliary channel {c.response!r} is declared integer but has non-integer values")
    if c.aux_type == "logical" and not np.all((obs == 0) | (obs == 1)):
        raise DataError(f"auxiliary channel {c.response!r} is declared logical but has values other than 0/1")


def evaluate_aux(panel_or_store, spec: ChannelSpec, order=None, depth: int = 0,
                 check: bool = True) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Evaluate a deterministic channel over the whole grid.

    Returns the (N, T) values and the (N, depth) history used for its lags.
    ``panel_or_store`` is a :class:`ValueStore` or a :class:`PanelData`.
    """
    if not spec.is_deterministic:
        raise FormulaError(f"channel {spec.response!r} is not deterministic")
    store = panel_or_store if isinstance(panel_or_store, ValueStore) else _base_store(panel_or_store)
    N, T = next(iter(store.values.values())).shape[-2:]
    vals = np.broadcast_to(evaluate_expr(spec.aux_expr, store.values), (N, T)).astype(float)
    if check:
        _check_aux_type(spec, vals)
    return vals, _aux_history(spec, store, depth, N, T)


def _base_store(d: PanelData) -> ValueStore:
    return ValueStore({name: d.grid(name) for name in d.kinds})


def prepare_store(f: ModelFormula, d: PanelData, warn: bool = True) -> ValueStore:
    """Data grids plus evaluated auxiliary channels (and their lag histories)."""
    store = _base_store(d)
    lags = max_lags(f)
    for c in f.ordered_channels():
        if not c.is_deterministic:
            continue
        depth = lags.get(c.response, 0)
        if depth and c.aux_init is None and c.aux_past is None and warn:
            warnings.warn(
                f"Deterministic channel `{c.response}` has a maximum lag of {depth} but you've "
                "supplied no initial values: This may result in NA values"
            )
        vals, hist = evaluate_aux(store, c, depth=depth)
        store.values[c.response] = vals
        if hist is not None:
            store.history[c.response] = hist
    return store


def _support_check(c: ChannelSpec, y: np.ndarray, trials: Optional[np.ndarray]) -> None:
    fam = c.family
    bad = None
    if fam in ("poisson", "negbin", "binomial"):
        if np.any(y < 0) or np.any(y != np.round(y)):
            bad = "non-negative integers"
        elif fam == "binomial" and np.any(y > trials):
            bad = "at most the number of trials"
    elif fam == "bernoulli":
        if np.any((y != 0) & (y != 1)):
            bad = "0/1 values"
    elif fam in ("exponential", "gamma"):
        if np.any(y <= 0):
            bad = "positive values"
    elif fam == "beta":
        if np.any((y <= 0) | (y >= 1)):
            bad = "values strictly between 0 and 1"
    if bad:
        raise DataError(f"response {c.response!r} of the {fam} family must contain {bad}")
    if trials is not None and (np.any(trials < 0) or np.any(trials != np.round(trials))):
        raise DataError(f"trials of channel {c.response!r} must be non-negative integers")


def channel_columns(c: ChannelSpec, d: PanelData, kinds: Mapping[str, str]):
    levels = d.levels
    fixed_icpt = c.has_intercept("fixed")
    varying_icpt = c.has_intercept("varying")
    random_icpt = c.has_intercept("random")
    drop_main = fixed_icpt or varying_icpt
    out = {}
    for role, drop in (("fixed", drop_main), ("varying", drop_main), ("random", random_icpt)):
        cols: list[Column] = []
        for t in c.role_terms(role):
            if t.kind != "intercept":
                cols.extend(term_columns(t, kinds, levels, drop))
        labels = [col.label for col in cols]
        if len(set(labels)) != len(labels):
            raise FormulaError(f"channel {c.response}: duplicated design columns")
        out[role] = cols
    return out["fixed"], out["varying"], out["random"], fixed_icpt, varying_icpt, random_icpt


def _kinds_with_channels(f: ModelFormula, d: PanelData) -> dict[str, str]:
    kinds = dict(d.kinds)
    for c in f.deterministic:
        kinds[c.response] = "numeric"
    return kinds


def build_design(f: ModelFormula, d: PanelData, warn: bool = True) -> DesignSet:
    """Assemble per-channel response vectors, matrices, offsets and masks."""
    f = expand_lags(f)
    f.validate()
    _check_variables(f, d)
    K = fixed_timepoints(f)
    if K >= d.T:
        raise DataError(f"the model has {K} fixed time points but the data only has {d.T}")
    store = prepare_store(f, d, warn=warn)
    kinds = _kinds_with_channels(f, d)
    spline = build_spline_basis(d.T - K, f.splines) if f.needs_splines() else None

    channels = []
    for c in f.ordered_channels():
        if c.is_deterministic:
            continue
        categories = None
        if c.family == "categorical":
            if kinds.get(c.response) != "categorical":
                raise DataError(f"categorical channel {c.response!r} needs a character (factor) response")
            categories = list(d.levels[c.response])
            if len(categories) < 2:
                raise DataError(f"categorical channel {c.response!r} needs at least two categories")
        elif kinds.get(c.response) == "categorical":
            raise DataError(f"response {c.response!r} is categorical but the family is {c.family}")
        fixed, varying, random, fi, vi, ri = channel_columns(c, d, kinds)
        y_full = store.values[c.response]
        parts = [y_full]
        grids = {}
        for role, cols in (("f", fixed), ("v", varying), ("r", random)):
            g = np.stack([col.value(store) for col in cols], axis=-1) if cols else np.zeros((d.N, d.T, 0))
            grids[role] = g
            parts.extend(g[..., j] for j in range(g.shape[-1]))
        off = store.values[c.offset] if c.offset else None
        tri = store.values[c.trials] if c.trials else None
        for extra in (off, tri):
            if extra is not None:
                parts.append(extra)
        mask = np.ones((d.N, d.T), dtype=bool)
        for p in parts:
            mask &= ~np.isnan(p)
        mask[:, :K] = False
        gi, ti = np.nonzero(mask)
        y = y_full[gi, ti]
        trials = tri[gi, ti] if tri is not None else None
        _support_check(c, y, trials)
        cd = ChannelDesign(
            spec=c, fixed=fixed, varying=varying, random=random,
            fixed_icpt=fi, varying_icpt=vi, random_icpt=ri, categories=categories,
            mask=mask, gidx=gi, tidx=ti, y=y,
            Xf=grids["f"][gi, ti], Xv=grids["v"][gi, ti], Xr=grids["r"][gi, ti],
            offset=off[gi, ti] if off is not None else None, trials=trials,
        )
        if warn:
            _warn_constant(cd)
        channels.append(cd)
    aux_order = [r for r in f.order if f.channel(r).is_deterministic]
    return DesignSet(f, d, channels, spline, K, store, aux_order)


def _warn_constant(cd: ChannelDesign) -> None:
    if not (cd.has_alpha and cd.n_obs):
        return
    for X, cols in ((cd.Xf, cd.fixed), (cd.Xv, cd.varying)):
        for j, col in enumerate(cols):
            x = X[:, j]
            if np.all(x == x[0]):
                warnings.warn(
                    f"channel {cd.response}: predictor {col.label} is constant, the design is "
                    "rank deficient together with the intercept"
                )


def missingness_mask(d: PanelData, f: ModelFormula) -> dict[str, np.ndarray]:
    """Per stochastic channel (N, T) mask of cells entering the likelihood."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_design(f, d, warn=False)
    return {c.response: c.mask for c in ds.channels}
