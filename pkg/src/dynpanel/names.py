"""Parameter names: structured form, rendering and vocabulary-driven parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

PARAMETER_TYPES = (
    "alpha", "beta", "delta", "nu", "tau", "tau_alpha",
    "sigma", "sigma_nu", "phi", "corr_nu", "omega",
)
# longest prefixes first so that e.g. sigma_nu_ wins over sigma_
_PREFIXES = [
    ("sigma_nu_", "sigma_nu"), ("tau_alpha_", "tau_alpha"), ("corr_nu_", "corr_nu"),
    ("omega_alpha_", "omega_alpha"), ("alpha_", "alpha"), ("beta_", "beta"),
    ("delta_", "delta"), ("sigma_", "sigma"), ("omega_", "omega"), ("tau_", "tau"),
    ("phi_", "phi"), ("nu_", "nu"),
]
_INDEX = re.compile(r"^(.*)\[([^\[\]]+)\]$")


@dataclass(frozen=True)
class ParameterName:
    """Structured parameter identity.

    ``time`` holds the time label for time-varying parameters and the basis
    index for spline coefficients. For ``corr_nu`` the predictor stores
    ``<label1>__<response2>_<label2>``.
    """

    type: str
    response: str
    predictor: Optional[str] = None
    time: Optional[str] = None
    group: Optional[str] = None
    category: Optional[str] = None

    def render(self) -> str:
        r = self.response
        cat = f"_{self.category}" if self.category else ""
        idx = f"[{self.time}]" if self.time is not None else ""
        t = self.type
        if t == "omega" and self.predictor == "alpha":
            return f"omega_alpha_{r}{cat}{idx}"
        if t in ("alpha", "tau_alpha", "sigma", "phi"):
            return f"{t}_{r}{cat}{idx}"
        if t == "nu":
            return f"nu_{r}_{self.predictor}_{self.group}"
        return f"{t}_{r}_{self.predictor}{cat}{idx}"

    def __str__(self) -> str:
        return self.render()


@dataclass
class Vocabulary:
    """Known responses, predictor labels, categories and group labels."""

    responses: list[str]
    predictors: dict[str, list[str]]
    categories: dict[str, list[str]]
    groups: list[str]

    @classmethod
    def from_names(cls, names: Iterable[ParameterName]) -> "Vocabulary":
        responses, preds, cats, groups = [], {}, {}, []
        for n in names:
            if n.response and n.response not in responses:
                responses.append(n.response)
            if n.predictor and n.type != "corr_nu":
                preds.setdefault(n.response, [])
                if n.predictor not in preds[n.response]:
                    preds[n.response].append(n.predictor)
            if n.category:
                cats.setdefault(n.response, [])
                if n.category not in cats[n.response]:
                    cats[n.response].append(n.category)
            if n.group and n.group not in groups:
                groups.append(n.group)
        return cls(responses, preds, cats, groups)


def _split_response(rest: str, vocab: Vocabulary) -> tuple[str, str]:
    """Longest known response that prefixes ``rest`` at a token boundary."""
    for r in sorted(vocab.responses, key=len, reverse=True):
        if rest == r:
            return r, ""
        if rest.startswith(r + "_"):
            return r, rest[len(r) + 1:]
    raise ValueError(f"no known response in {rest!r}")


def _split_category(rest: str, response: str, vocab: Vocabulary) -> tuple[str, Optional[str]]:
    for c in sorted(vocab.categories.get(response, []), key=len, reverse=True):
        if rest == c:
            return "", c
        if rest.endswith("_" + c):
            return rest[: -len(c) - 1], c
    return rest, None


def parse_name(text: str, vocab: Vocabulary) -> ParameterName:
    """Inverse of :meth:`ParameterName.render` given the model vocabulary."""
    m = _INDEX.match(text)
    body, idx = (m.group(1), m.group(2)) if m else (text, None)
    for prefix, kind in _PREFIXES:
        if body.startswith(prefix):
            try:
                return _parse_body(kind, body[len(prefix):], idx, vocab)
            except ValueError:
                continue
    raise ValueError(f"cannot parse parameter name {text!r}")


def _parse_body(kind: str, rest: str, idx: Optional[str], vocab: Vocabulary) -> ParameterName:
    response, tail = _split_response(rest, vocab)
    if kind == "omega_alpha":
        tail, cat = _split_category(tail, response, vocab)
        if tail:
            raise ValueError(rest)
        return ParameterName("omega", response, "alpha", idx, None, cat)
    if kind in ("alpha", "tau_alpha", "sigma", "phi"):
        tail, cat = _split_category(tail, response, vocab)
        if tail:
            raise ValueError(rest)
        return ParameterName(kind, response, None, idx, None, cat)
    if kind == "nu":
        for g in sorted(vocab.groups, key=len, reverse=True):
            if tail.endswith("_" + g):
                pred = tail[: -len(g) - 1]
                if pred in vocab.predictors.get(response, []):
                    return ParameterName("nu", response, pred, None, g, None)
        raise ValueError(rest)
    if kind == "corr_nu":
        if "__" not in tail:
            raise ValueError(rest)
        return ParameterName("corr_nu", response, tail, None, None, None)
    preds = sorted(vocab.predictors.get(response, []), key=len, reverse=True)
    for p in preds:
        if tail == p:
            return ParameterName(kind, response, p, idx, None, None)
        if tail.startswith(p + "_"):
            _, cat = _split_category(tail[len(p):], response, vocab)
            if cat is not None and tail == f"{p}_{cat}":
                return ParameterName(kind, response, p, idx, None, cat)
    raise ValueError(rest)


def time_label(value: float) -> str:
    v = float(value)
    return str(int(v)) if v.is_integer() else repr(v)
