"""Model-formula DSL: parsing, combination, lag expansion and ordering."""

from .expr import evaluate as evaluate_expr
from .graph import check_acyclic, combine, expand_lags, fixed_timepoints, max_lags, same_time_edges
from .parser import parse_formula, tokenize
from .terms import (
    FAMILIES,
    ChannelSpec,
    ModelFormula,
    RandomSpecConfig,
    SplinesConfig,
    Term,
    covariate,
    intercept,
    lag,
)

__all__ = [
    "FAMILIES",
    "ChannelSpec",
    "ModelFormula",
    "RandomSpecConfig",
    "SplinesConfig",
    "Term",
    "check_acyclic",
    "combine",
    "covariate",
    "evaluate_expr",
    "expand_lags",
    "fixed_timepoints",
    "intercept",
    "lag",
    "max_lags",
    "parse_formula",
    "same_time_edges",
    "tokenize",
]
