"""Formula-level operations: combination, lag expansion, channel ordering."""

from __future__ import annotations

import heapq
from dataclasses import replace
from typing import Iterable, Sequence

from ..errors import CycleError, FormulaError
from .terms import ChannelSpec, ModelFormula, Term, lag


def same_time_edges(channels: Sequence[ChannelSpec]) -> dict[str, set[str]]:
    """Map each response to the set of responses it reads at shift 0."""
    responses = {c.response for c in channels}
    parents: dict[str, set[str]] = {c.response: set() for c in channels}
    for c in channels:
        for var, shift in c.dependencies():
            if shift == 0 and var in responses:
                parents[c.response].add(var)
    return parents


def _find_cycle(parents: dict[str, set[str]], nodes: Iterable[str]) -> list[str]:
    nodes = set(nodes)
    # every remaining node has an unresolved parent among `nodes`; walk back until repeat
    start = min(nodes)
    path = [start]
    seen = {start: 0}
    cur = start
    while True:
        cur = min(p for p in parents[cur] if p in nodes)
        if cur in seen:
            cyc = path[seen[cur]:]
            return list(reversed(cyc))
        seen[cur] = len(path)
        path.append(cur)


def topological_order(channels: Sequence[ChannelSpec]) -> list[str]:
    """Kahn's algorithm with lexicographic tie-breaking.

    Raises :class:`CycleError` naming one cycle when no order exists.
    """
    parents = same_time_edges(channels)
    children: dict[str, set[str]] = {r: set() for r in parents}
    for r, ps in parents.items():
        for p in ps:
            children[p].add(r)
    indeg = {r: len(ps) for r, ps in parents.items()}
    ready = [r for r, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        r = heapq.heappop(ready)
        order.append(r)
        for ch in children[r]:
            indeg[ch] -= 1
            if indeg[ch] == 0:
                heapq.heappush(ready, ch)
    if len(order) < len(parents):
        remaining = [r for r in parents if r not in set(order)]
        raise CycleError(_find_cycle(parents, remaining))
    return order


def check_acyclic(f: ModelFormula) -> list[str]:
    return topological_order(f.channels)


def combine(a: ModelFormula, b: ModelFormula) -> ModelFormula:
    if a.splines is not None and b.splines is not None:
        raise FormulaError("Multiple definitions for splines")
    if a.random_spec is not None and b.random_spec is not None:
        raise FormulaError("Multiple definitions for random_spec")
    if a.lags is not None and b.lags is not None:
        raise FormulaError("Multiple definitions for lags")
    return ModelFormula(
        channels=a.channels + b.channels,
        splines=a.splines if a.splines is not None else b.splines,
        random_spec=a.random_spec if a.random_spec is not None else b.random_spec,
        lags=a.lags if a.lags is not None else b.lags,
    )


def expand_lags(f: ModelFormula) -> ModelFormula:
    """Add lag(r, k) of every stochastic response to every stochastic channel."""
    if not f.lags:
        return f
    stochastic = [c.response for c in f.channels if not c.is_deterministic]
    channels = []
    for c in f.channels:
        if c.is_deterministic:
            channels.append(c)
            continue
        existing = {t.key() for t in c.terms}
        extra: list[Term] = []
        for k in f.lags:
            for r in stochastic:
                t = lag(r, k)
                if t.key() not in existing:
                    existing.add(t.key())
                    extra.append(t)
        channels.append(replace(c, terms=c.terms + tuple(extra)) if extra else c)
    return replace(f, channels=tuple(channels), order=())


def fixed_timepoints(f: ModelFormula) -> int:
    """Largest lag shift applied to a stochastic response."""
    f = expand_lags(f)
    stochastic = {c.response for c in f.channels if not c.is_deterministic}
    k = 0
    for c in f.channels:
        for var, shift in c.dependencies():
            if var in stochastic:
                k = max(k, shift)
    return k


def max_lags(f: ModelFormula) -> dict[str, int]:
    """Largest shift requested per variable (responses and covariates alike)."""
    f = expand_lags(f)
    out: dict[str, int] = {}
    for c in f.channels:
        for var, shift in c.dependencies():
            if shift > 0:
                out[var] = max(out.get(var, 0), shift)
    return out
