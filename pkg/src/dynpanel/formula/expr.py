"""Arithmetic expressions used by auxiliary (deterministic) channels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from ..errors import FormulaError

FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "log1p": np.log1p,
    "expm1": np.expm1,
}

# Binary operator -> (precedence, numpy implementation)
BINARY_OPS: dict[str, tuple[int, Callable]] = {
    "<": (1, np.less),
    "<=": (1, np.less_equal),
    ">": (1, np.greater),
    ">=": (1, np.greater_equal),
    "==": (1, np.equal),
    "!=": (1, np.not_equal),
    "+": (2, np.add),
    "-": (2, np.subtract),
    "*": (3, np.multiply),
    "/": (3, np.divide),
    "^": (5, np.power),
}
_UNARY_PREC = 4


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Call, Neg, BinOp]


def _deps(e: Expr, out: list) -> None:
    if isinstance(e, Var):
        out.append((e.name, 0))
    elif isinstance(e, Call):
        _deps(e.arg, out)
    elif isinstance(e, Neg):
        _deps(e.operand, out)
    elif isinstance(e, BinOp):
        _deps(e.left, out)
        _deps(e.right, out)


def variables(e: Expr) -> list[tuple[str, int]]:
    out: list = []
    _deps(e, out)
    return out


def evaluate(e: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate elementwise; comparisons yield 1.0/0.0 and NaN propagates."""
    if isinstance(e, Num):
        return np.asarray(e.value, dtype=float)
    if isinstance(e, Var):
        try:
            return np.asarray(env[e.name], dtype=float)
        except KeyError:
            raise FormulaError(f"auxiliary expression references unknown variable {e.name!r}") from None
    if isinstance(e, Call):
        with np.errstate(divide="ignore", invalid="ignore"):
            return FUNCTIONS[e.fn](evaluate(e.arg, env))
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    left = evaluate(e.left, env)
    right = evaluate(e.right, env)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = BINARY_OPS[e.op][1](left, right)
    if BINARY_OPS[e.op][0] == 1:
        out = np.where(np.isnan(left) | np.isnan(right), np.nan, out.astype(float))
    return out


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return BINARY_OPS[e.op][0]
    if isinstance(e, Neg):
        return _UNARY_PREC
    return 9


def format_expr(e: Expr) -> str:
    if isinstance(e, Num):
        v = e.value
        return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({format_expr(e.arg)})"
    if isinstance(e, Neg):
        inner = format_expr(e.operand)
        return f"-({inner})" if _prec(e.operand) <= _UNARY_PREC else f"-{inner}"
    p = BINARY_OPS[e.op][0]
    left = format_expr(e.left)
    right = format_expr(e.right)
    # left-associative except ^ (right-associative)
    if _prec(e.left) < p or (e.op == "^" and _prec(e.left) <= p):
        left = f"({left})"
    if _prec(e.right) < p or (e.op != "^" and _prec(e.right) <= p):
        right = f"({right})"
    return f"{left} {e.op} {right}"
