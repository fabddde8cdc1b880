"""Text grammar for model formulas.

    formula   := component ("+" component)*
    component := obs | aux | splines(...) | lags(...) | random_spec(...)
    obs       := obs(response ~ rhs, family = "name")
    aux       := aux(type(response) ~ expr [| init(consts) | past(expr)])

Right-hand sides follow R formula conventions: ``-1``/``0`` drop the
intercept, ``a*b`` expands to main effects plus ``a:b``, and ``varying()``,
``fixed()``, ``random()``, ``offset()``, ``trials()`` are special terms.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

from ..errors import FormulaError, FormulaSyntaxError
from . import expr as ex
from .terms import (
    AUX_TYPES,
    FAMILIES,
    ChannelSpec,
    ModelFormula,
    RandomSpecConfig,
    SplinesConfig,
    Term,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"[^"\n]*"|'[^'\n]*')
  | (?P<ident>[A-Za-z_.][A-Za-z0-9_.]*)
  | (?P<op><=|>=|==|!=|[~+\-*/:(),=|<>^])
    """,
    re.VERBOSE,
)

SPECIALS = ("varying", "fixed", "random")


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers -------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, n: int = 1) -> Token:
        return self.toks[min(self.i + n, len(self.toks) - 1)]

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.value)
        raise FormulaSyntaxError(f"{msg}, found {found}", tok.line, tok.col)

    def at(self, value: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.value == value

    def expect(self, value: str) -> Token:
        if not self.at(value):
            self.error(f"expected {value!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.error("expected a name")
        v = self.tok.value
        self.i += 1
        return v

    def integer(self) -> int:
        neg = False
        if self.at("-"):
            neg = True
            self.i += 1
        if self.tok.kind != "number" or not re.fullmatch(r"\d+", self.tok.value):
            self.error("expected an integer")
        v = int(self.tok.value)
        self.i += 1
        return -v if neg else v

    def number(self) -> float:
        sign = 1.0
        if self.at("-"):
            sign = -1.0
            self.i += 1
        if self.tok.kind != "number":
            self.error("expected a number")
        v = float(self.tok.value)
        self.i += 1
        return sign * v

    # -- top level -----------------------------------------------------
    def formula(self) -> ModelFormula:
        parts = [self.component()]
        while self.at("+"):
            self.i += 1
            parts.append(self.component())
        if self.tok.kind != "eof":
            self.error("expected '+' or end of formula")
        result = parts[0]
        for p in parts[1:]:
            result = result + p
        return result

    def component(self) -> ModelFormula:
        start = self.tok
        name = self.ident()
        if name in ("obs", "dynamiteformula"):
            return ModelFormula(channels=(self.obs(start),))
        if name == "aux":
            return ModelFormula(channels=(self.aux(),))
        if name == "splines":
            kv = self.kwargs({"df": "int", "degree": "int", "noncentered": "bool"}, positional=["df"])
            if "df" not in kv:
                raise FormulaSyntaxError("splines() requires df", start.line, start.col)
            return ModelFormula(splines=SplinesConfig(**kv))
        if name == "random_spec":
            kv = self.kwargs({"correlated": "bool", "noncentered": "bool"})
            return ModelFormula(random_spec=RandomSpecConfig(**kv))
        if name == "lags":
            kv = self.kwargs({"k": "ints", "type": "str"}, positional=["k"])
            if kv.get("type", "fixed") != "fixed":
                raise FormulaSyntaxError("only fixed-type lags are supported", start.line, start.col)
            ks = tuple(sorted(set(kv.get("k", (1,)))))
            if any(k < 1 for k in ks):
                raise FormulaSyntaxError("lags(k) must be positive", start.line, start.col)
            return ModelFormula(lags=ks)
        if name == "lfactor":
            raise FormulaError("latent factors out of scope: lfactor() is not supported")
        raise FormulaSyntaxError(f"unknown model component {name!r}", start.line, start.col)

    def kwargs(self, spec: dict[str, str], positional: tuple | list = ()) -> dict:
        self.expect("(")
        out: dict = {}
        pos = list(positional)
        while not self.at(")"):
            if self.tok.kind == "ident" and self.peek().value == "=":
                key_tok = self.tok
                key = self.ident()
                self.expect("=")
                if key not in spec:
                    raise FormulaSyntaxError(f"unknown argument {key!r}", key_tok.line, key_tok.col)
            else:
                if not pos:
                    self.error("unexpected positional argument")
                key = pos[0]
            if key in pos:
                pos.remove(key)
            out[key] = self.value(spec[key])
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        return out

    def value(self, kind: str):
        if kind == "int":
            return self.integer()
        if kind == "bool":
            v = self.ident()
            if v in ("TRUE", "True", "true", "T"):
                return True
            if v in ("FALSE", "False", "false", "F"):
                return False
            self.error("expected TRUE or FALSE", self.toks[self.i - 1])
        if kind == "str":
            if self.tok.kind != "string":
                self.error("expected a quoted string")
            v = self.tok.value[1:-1]
            self.i += 1
            return v
        if kind == "ints":
            if self.at("c"):
                self.ident()
                self.expect("(")
                vals = [self.integer()]
                while self.at(","):
                    self.i += 1
                    vals.append(self.integer())
                self.expect(")")
                return tuple(vals)
            a = self.integer()
            if self.at(":"):
                self.i += 1
                b = self.integer()
                return tuple(range(a, b + 1))
            return (a,)
        raise AssertionError(kind)

    # -- obs -----------------------------------------------------------
    def obs(self, start: Token) -> ChannelSpec:
        self.expect("(")
        response = self.ident()
        self.expect("~")
        terms, offset, trials = self.rhs()
        family = None
        if self.at(","):
            self.i += 1
            if self.tok.kind == "ident" and self.tok.value == "family":
                self.i += 1
                self.expect("=")
            if self.tok.kind != "string":
                self.error("expected family name as a quoted string")
            family = self.tok.value[1:-1]
            fam_tok = self.tok
            self.i += 1
        self.expect(")")
        if family is None:
            raise FormulaSyntaxError("obs() requires a family argument", start.line, start.col)
        if family not in FAMILIES:
            raise FormulaSyntaxError(
                f"Unknown family {family!r}; supported: {', '.join(FAMILIES[:-1])}",
                fam_tok.line,
                fam_tok.col,
            )
        if family == "deterministic":
            raise FormulaSyntaxError("use aux() for deterministic channels", fam_tok.line, fam_tok.col)
        return ChannelSpec(response, family, terms, offset=offset, trials=trials)

    def rhs(self):
        """Parse a full channel right-hand side and resolve intercepts."""
        blocks: dict[str, list[Term]] = {r: [] for r in ("fixed", "varying", "random")}
        outer: Optional[bool] = None
        block_icpt: dict[str, bool] = {}
        offset = trials = None
        sign = "+"
        first = True
        while True:
            if self.at("-"):
                sign = "-"
                self.i += 1
            elif not first:
                if not self.at("+"):
                    break
                self.i += 1
                if self.at("-"):
                    sign = "-"
                    self.i += 1
            first = False
            tok = self.tok
            special = SPECIALS + ("offset", "trials", "I", "lfactor")
            if tok.kind == "ident" and tok.value in special and self.peek().value == "(":
                if sign == "-":
                    self.error("cannot remove a special term")
                name = self.ident()
                if name == "I":
                    raise FormulaSyntaxError(
                        "the use of I() is not allowed; define an aux() channel instead", tok.line, tok.col
                    )
                if name == "lfactor":
                    raise FormulaError("latent factors out of scope: lfactor() is not supported")
                self.expect("(")
                if name in ("offset", "trials"):
                    var = self.ident()
                    self.expect(")")
                    if (offset if name == "offset" else trials) is not None:
                        raise FormulaSyntaxError(f"multiple {name}() terms", tok.line, tok.col)
                    if name == "offset":
                        offset = var
                    else:
                        trials = var
                else:
                    self.expect("~")
                    inner_terms, inner_flag = self.termsum(name)
                    self.expect(")")
                    blocks[name].extend(inner_terms)
                    flag = True if inner_flag is None else inner_flag
                    block_icpt[name] = block_icpt.get(name, False) or flag
                sign = "+"
                continue
            terms, flag = self.term_product("fixed")
            if flag is not None:
                outer = flag if sign == "+" else not flag
            elif sign == "-":
                self.error("removing terms other than the intercept is not supported", tok)
            else:
                blocks["fixed"].extend(terms)
            sign = "+"
        return self._resolve(blocks, outer, block_icpt), offset, trials

    def _resolve(self, blocks, outer, block_icpt) -> tuple[Term, ...]:
        # fixed(~z) carries an implicit intercept, like the outer formula does
        fixed_icpt = (outer if outer is not None else True) or block_icpt.get("fixed", False)
        varying_icpt = block_icpt.get("varying", False)
        random_icpt = block_icpt.get("random", False)
        if fixed_icpt and varying_icpt:
            warnings.warn(
                "Both time-independent and time-varying intercept specified: "
                "Defaulting to time-varying intercept.",
                stacklevel=5,
            )
            fixed_icpt = False
        out: list[Term] = []
        if fixed_icpt:
            out.append(Term("intercept", role="fixed"))
        if varying_icpt:
            out.append(Term("intercept", role="varying"))
        if random_icpt:
            out.append(Term("intercept", role="random"))
        for role in ("fixed", "varying", "random"):
            seen = set()
            for t in _order_terms(blocks[role]):
                if t.key() in seen:
                    continue
                seen.add(t.key())
                out.append(t.with_role(role))
        return tuple(out)

    def termsum(self, role: str):
        """Terms inside varying(~...), fixed(~...), random(~...).

        Returns the terms and the explicit intercept flag (None when implicit).
        """
        terms: list[Term] = []
        flag: Optional[bool] = None
        sign = "+"
        first = True
        while True:
            if self.at("-"):
                sign = "-"
                self.i += 1
            elif not first:
                if not self.at("+"):
                    break
                self.i += 1
                if self.at("-"):
                    sign = "-"
                    self.i += 1
            first = False
            tok = self.tok
            if tok.kind == "ident" and tok.value in SPECIALS + ("offset", "trials") and self.peek().value == "(":
                self.error(f"{tok.value}() cannot be nested")
            if tok.kind == "ident" and tok.value == "I" and self.peek().value == "(":
                raise FormulaSyntaxError(
                    "the use of I() is not allowed; define an aux() channel instead", tok.line, tok.col
                )
            ts, f = self.term_product(role)
            if f is not None:
                flag = f if sign == "+" else not f
            elif sign == "-":
                self.error("removing terms other than the intercept is not supported", tok)
            else:
                terms.extend(ts)
            sign = "+"
        return terms, flag

    def term_product(self, role: str):
        """Returns (terms, None) or ([], intercept_flag) for 1/0."""
        if self.tok.kind == "number":
            v = self.tok.value
            if v not in ("0", "1"):
                self.error("only 0 or 1 are allowed as numeric terms")
            self.i += 1
            return [], v == "1"
        groups = [[self.atom(role)]]
        while self.at("*") or self.at(":"):
            op = self.tok.value
            self.i += 1
            nxt = self.atom(role)
            if op == ":":
                groups[-1].append(nxt)
            else:
                groups.append([nxt])
        # a*b*c -> all non-empty products of the ':'-groups
        out: list[Term] = []
        for r in range(1, len(groups) + 1):
            for combo in combinations(groups, r):
                factors: list[Term] = [f for g in combo for f in g]
                out.append(_make_interaction(factors, role))
        return out, None

    def atom(self, role: str) -> Term:
        tok = self.tok
        if self.at("("):
            self.error("parenthesised terms are not supported")
        name = self.ident()
        if name == "lag" and self.at("("):
            self.expect("(")
            var = self.ident()
            k = 1
            if self.at(","):
                self.i += 1
                if self.tok.kind == "ident" and self.tok.value == "k":
                    self.i += 1
                    self.expect("=")
                k = self.integer()
                if k < 1:
                    raise FormulaSyntaxError("lag shift must be positive", tok.line, tok.col)
            self.expect(")")
            return Term("lag", var, k, role=role)
        if name == "I" and self.at("("):
            raise FormulaSyntaxError(
                "the use of I() is not allowed; define an aux() channel instead", tok.line, tok.col
            )
        if self.at("("):
            raise FormulaSyntaxError(
                f"function {name}() is not supported in model formulas; use aux()", tok.line, tok.col
            )
        return Term("covariate", name, role=role)

    # -- aux -----------------------------------------------------------
    def aux(self) -> ChannelSpec:
        self.expect("(")
        ttok = self.tok
        typename = self.ident()
        if typename not in AUX_TYPES:
            raise FormulaSyntaxError(
                f"unsupported auxiliary type {typename!r}; use one of {', '.join(AUX_TYPES)}",
                ttok.line,
                ttok.col,
            )
        self.expect("(")
        response = self.ident()
        self.expect(")")
        self.expect("~")
        body = self.expr()
        init = past = None
        if self.at("|"):
            self.i += 1
            kind_tok = self.tok
            kind = self.ident()
            self.expect("(")
            if kind == "init":
                if self.at("c"):
                    self.ident()
                    self.expect("(")
                    vals = [self.number()]
                    while self.at(","):
                        self.i += 1
                        vals.append(self.number())
                    self.expect(")")
                else:
                    vals = [self.number()]
                init = tuple(vals)
            elif kind == "past":
                past = self.expr()
            else:
                raise FormulaSyntaxError("expected init() or past()", kind_tok.line, kind_tok.col)
            self.expect(")")
        self.expect(")")
        return ChannelSpec(
            response, "deterministic", aux_type=typename, aux_expr=body, aux_init=init, aux_past=past
        )

    def expr(self, min_prec: int = 1) -> ex.Expr:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.value in ex.BINARY_OPS:
            op = self.tok.value
            prec = ex.BINARY_OPS[op][0]
            if prec < min_prec:
                break
            self.i += 1
            right = self.expr(prec if op == "^" else prec + 1)
            left = ex.BinOp(op, left, right)
        return left

    def unary(self) -> ex.Expr:
        if self.at("-"):
            self.i += 1
            return ex.Neg(self.unary())
        if self.at("+"):
            self.i += 1
            return self.unary()
        return self.primary()

    def primary(self) -> ex.Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return ex.Num(float(tok.value))
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            name = self.ident()
            if self.at("("):
                if name not in ex.FUNCTIONS:
                    raise FormulaSyntaxError(f"unknown function {name}()", tok.line, tok.col)
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ex.Call(name, arg)
            return ex.Var(name)
        self.error("expected an expression")


def _make_interaction(factors: list[Term], role: str) -> Term:
    if len(factors) == 1:
        return factors[0].with_role(role)
    # a:a collapses
    uniq = []
    keys = set()
    for f in factors:
        if f.key() not in keys:
            keys.add(f.key())
            uniq.append(f.with_role(role))
    if len(uniq) == 1:
        return uniq[0]
    label = ":".join(f.label for f in uniq)
    return Term("interaction", label, role=role, factors=tuple(uniq))


def _order_terms(terms: list[Term]) -> list[Term]:
    # main effects before interactions, stable otherwise (R model.matrix order)
    def degree(t: Term) -> int:
        return len(t.factors) if t.kind == "interaction" else 1

    return sorted(terms, key=degree)


def parse_formula(text: str) -> ModelFormula:
    """Parse formula text into a validated :class:`ModelFormula`."""
    return _Parser(text).formula()

