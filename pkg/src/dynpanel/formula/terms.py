"""Immutable AST for multi-channel model formulas."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

from ..errors import FormulaError
from .expr import Expr, format_expr, variables

FAMILIES = (
    "gaussian",
    "poisson",
    "negbin",
    "bernoulli",
    "binomial",
    "exponential",
    "gamma",
    "beta",
    "categorical",
    "deterministic",
)
ROLES = ("fixed", "varying", "random")
AUX_TYPES = ("numeric", "integer", "logical")


@dataclass(frozen=True)
class Term:
    """A single right-hand-side term.

    ``kind`` is one of intercept, covariate, lag or interaction. Interaction
    terms keep their constituents in ``factors``; ``variable`` is then the
    joined label.
    """

    kind: str
    variable: str = ""
    shift: int = 0
    role: str = "fixed"
    factors: tuple["Term", ...] = ()

    def __post_init__(self):
        if (self.shift >= 1) != (self.kind == "lag"):
            raise FormulaError(f"invalid shift {self.shift} for {self.kind} term")
        if self.kind == "interaction":
            if len(self.factors) < 2 or any(f.kind == "intercept" for f in self.factors):
                raise FormulaError("interaction needs two or more non-intercept terms")
        if self.role not in ROLES:
            raise FormulaError(f"unknown role {self.role!r}")

    @property
    def label(self) -> str:
        if self.kind == "intercept":
            return "alpha"
        if self.kind == "lag":
            return f"{self.variable}_lag{self.shift}"
        if self.kind == "interaction":
            return ":".join(f.label for f in self.factors)
        return self.variable

    def with_role(self, role: str) -> "Term":
        return replace(self, role=role)

    def dependencies(self) -> list[tuple[str, int]]:
        """(variable, shift) pairs read by this term."""
        if self.kind == "intercept":
            return []
        if self.kind == "interaction":
            out = []
            for f in self.factors:
                out.extend(f.dependencies())
            return out
        return [(self.variable, self.shift)]

    def key(self) -> tuple:
        """Role-free identity used for duplicate detection."""
        if self.kind == "interaction":
            return ("interaction",) + tuple(sorted(f.key() for f in self.factors))
        return (self.kind, self.variable, self.shift)

    def format(self) -> str:
        if self.kind == "intercept":
            return "1"
        if self.kind == "lag":
            return f"lag({self.variable})" if self.shift == 1 else f"lag({self.variable}, {self.shift})"
        if self.kind == "interaction":
            return ":".join(f.format() for f in self.factors)
        return self.variable


def intercept(role: str = "fixed") -> Term:
    return Term("intercept", role=role)


def covariate(name: str, role: str = "fixed") -> Term:
    return Term("covariate", name, role=role)


def lag(name: str, k: int = 1, role: str = "fixed") -> Term:
    return Term("lag", name, k, role=role)


@dataclass(frozen=True)
class SplinesConfig:
    df: int
    degree: int = 3
    noncentered: bool = False

    def __post_init__(self):
        if self.df < 1 or self.degree < 0 or self.df <= self.degree:
            raise FormulaError(
                f"splines need df > degree >= 0, got df={self.df}, degree={self.degree}"
            )


@dataclass(frozen=True)
class RandomSpecConfig:
    correlated: bool = True
    noncentered: bool = True


@dataclass(frozen=True)
class ChannelSpec:
    response: str
    family: str
    terms: tuple[Term, ...] = ()
    offset: Optional[str] = None
    trials: Optional[str] = None
    aux_type: Optional[str] = None
    aux_expr: Optional[Expr] = None
    aux_init: Optional[tuple[float, ...]] = None
    aux_past: Optional[Expr] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FormulaError(f"Unknown family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        det = self.family == "deterministic"
        if not det and (self.aux_init is not None or self.aux_past is not None or self.aux_expr is not None):
            raise FormulaError("init(), past() and aux expressions only apply to deterministic channels")
        if self.aux_init is not None and self.aux_past is not None:
            raise FormulaError(f"channel {self.response}: supply either init() or past(), not both")
        if det and self.aux_expr is None:
            raise FormulaError(f"deterministic channel {self.response} needs a defining expression")
        if self.trials is not None and self.family != "binomial":
            raise FormulaError("trials() is only valid for the binomial family")
        if self.family == "binomial" and self.trials is None:
            raise FormulaError(f"binomial channel {self.response} needs a trials() term")
        if self.family == "categorical" and any(t.role == "random" for t in self.terms):
            raise FormulaError(
                "Random effects are not (yet) supported for categorical distribution "
                f"(channel {self.response})"
            )
        for role in ("fixed", "varying"):
            n = sum(1 for t in self.terms if t.kind == "intercept" and t.role == role)
            if n > 1:
                raise FormulaError(f"channel {self.response}: duplicated {role} intercept")
        seen = {}
        for t in self.terms:
            if t.kind == "intercept":
                continue
            k = (t.key(), t.role == "random")
            if k in seen:
                other = seen[k]
                if other == t.role:
                    raise FormulaError(f"channel {self.response}: duplicated term {t.format()}")
                raise FormulaError(
                    f"channel {self.response}: term {t.format()} is both time-varying and "
                    "time-invariant"
                )
            seen[k] = t.role

    @property
    def is_deterministic(self) -> bool:
        return self.family == "deterministic"

    def role_terms(self, role: str) -> list[Term]:
        return [t for t in self.terms if t.role == role]

    def has_intercept(self, role: str) -> bool:
        return any(t.kind == "intercept" and t.role == role for t in self.terms)

    def dependencies(self) -> list[tuple[str, int]]:
        deps: list[tuple[str, int]] = []
        for t in self.terms:
            deps.extend(t.dependencies())
        for extra in (self.offset, self.trials):
            if extra is not None:
                deps.append((extra, 0))
        if self.aux_expr is not None:
            deps.extend(variables(self.aux_expr))
        return deps

    def format_rhs(self) -> str:
        if self.is_deterministic:
            out = format_expr(self.aux_expr)
            if self.aux_init is not None:
                vals = ", ".join(_num(v) for v in self.aux_init)
                out += f" | init({vals})" if len(self.aux_init) == 1 else f" | init(c({vals}))"
            elif self.aux_past is not None:
                out += f" | past({format_expr(self.aux_past)})"
            return out
        parts = []
        fixed = self.role_terms("fixed")
        fixed_int = any(t.kind == "intercept" for t in fixed)
        if not fixed_int:
            parts.append("-1")
        parts.extend(t.format() for t in fixed if t.kind != "intercept")
        if not parts:
            parts.append("1")
        for role in ("varying", "random"):
            ts = self.role_terms(role)
            if not ts:
                continue
            inner = [] if any(t.kind == "intercept" for t in ts) else ["-1"]
            inner.extend(t.format() for t in ts if t.kind != "intercept")
            if not inner:
                inner = ["1"]
            parts.append(f"{role}(~{' + '.join(inner)})")
        if self.offset:
            parts.append(f"offset({self.offset})")
        if self.trials:
            parts.append(f"trials({self.trials})")
        return " + ".join(parts)

    def format(self) -> str:
        if self.is_deterministic:
            return f"aux({self.aux_type}({self.response}) ~ {self.format_rhs()})"
        return f'obs({self.response} ~ {self.format_rhs()}, family = "{self.family}")'


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class ModelFormula:
    """Validated multi-channel model formula.

    ``random_spec`` stays ``None`` until a random_spec() component is given;
    use :attr:`random_config` for the effective settings.
    """

    channels: tuple[ChannelSpec, ...] = ()
    splines: Optional[SplinesConfig] = None
    random_spec: Optional[RandomSpecConfig] = None
    lags: Optional[tuple[int, ...]] = None
    order: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        names = [c.response for c in self.channels]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise FormulaError(f"Multiple definitions for response variable(s): {', '.join(dup)}")
        if not self.order and self.channels:
            from .graph import topological_order

            object.__setattr__(self, "order", tuple(topological_order(self.channels)))

    @property
    def random_config(self) -> RandomSpecConfig:
        return self.random_spec or RandomSpecConfig()

    @property
    def responses(self) -> list[str]:
        return [c.response for c in self.channels]

    @property
    def stochastic(self) -> list[ChannelSpec]:
        return [c for c in self.channels if not c.is_deterministic]

    @property
    def deterministic(self) -> list[ChannelSpec]:
        return [c for c in self.channels if c.is_deterministic]

    def channel(self, response: str) -> ChannelSpec:
        for c in self.channels:
            if c.response == response:
                return c
        raise KeyError(response)

    def ordered_channels(self) -> list[ChannelSpec]:
        return [self.channel(r) for r in self.order]

    def needs_splines(self) -> bool:
        return any(t.role == "varying" for c in self.channels for t in c.terms)

    def validate(self) -> None:
        """Checks that need the complete formula (not partial components)."""
        if not self.stochastic:
            raise FormulaError("model formula has no stochastic channels")
        if self.needs_splines() and self.splines is None:
            raise FormulaError(
                "model contains time-varying definitions but splines() has not been defined"
            )
        if self.splines is not None and not self.needs_splines():
            warnings.warn("splines() defined but the model has no time-varying terms; ignored")

    def __add__(self, other: "ModelFormula") -> "ModelFormula":
        from .graph import combine

        return combine(self, other)

    def format(self) -> str:
        parts = [c.format() for c in self.channels]
        if self.splines is not None:
            s = self.splines
            parts.append(
                f"splines(df = {s.df}, degree = {s.degree}, "
                f"noncentered = {'TRUE' if s.noncentered else 'FALSE'})"
            )
        if self.random_spec is not None:
            r = self.random_spec
            parts.append(
                f"random_spec(correlated = {'TRUE' if r.correlated else 'FALSE'}, "
                f"noncentered = {'TRUE' if r.noncentered else 'FALSE'})"
            )
        if self.lags is not None:
            ks = ", ".join(str(k) for k in self.lags)
            parts.append(f"lags(k = {ks})" if len(self.lags) == 1 else f"lags(k = c({ks}))")
        return " +\n".join(parts)

    def describe(self) -> str:
        """Family/formula table in the style of the model print method."""
        rows = [(c.response, c.family, f"{c.response} ~ {c.format_rhs()}") for c in self.channels]
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len("Family"), *(len(r[1]) for r in rows))
        lines = [f"{'':<{w0}} {'Family':<{w1}} Formula"]
        lines += [f"{a:<{w0}} {b:<{w1}} {c}" for a, b, c in rows]
        return "\n".join(lines)
