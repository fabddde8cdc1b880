"""Bayesian dynamic multivariate panel models with a native NUTS sampler."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    CycleError,
    DataError,
    DynpanelError,
    FormulaError,
    FormulaSyntaxError,
    InputOutputError,
    ModelSpecError,
    NumericError,
    PredictionError,
    PriorError,
)
from .formula import combine, parse_formula
from .panel import PanelData, load_panel, panel_from_frame
from .priors import PriorSpec, default_priors
from .fit import PanelFit, fit
from .posterior import extract, fit_summary, get_parameter_names, get_parameter_types
