"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for I/O problems,
2 for model specification or data problems, 3 for numerical failures.
"""

from __future__ import annotations


class DynpanelError(Exception):
    exit_code = 2


class ModelSpecError(DynpanelError):
    """Invalid model formula, priors or data/model mismatch."""

    exit_code = 2


class FormulaError(ModelSpecError):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class CycleError(FormulaError):
    def __init__(self, cycle: list[str]):
        path = " -> ".join(cycle + cycle[:1])
        super().__init__(f"Cyclic dependency found in model formula. Cycle: {path}")
        self.cycle = cycle


class DataError(ModelSpecError):
    """Data file content that cannot be coerced to a panel."""


class PriorError(ModelSpecError):
    pass


class PredictionError(ModelSpecError):
    pass


class NumericError(DynpanelError):
    """Sampler initialisation failure, divergence-only warmup and the like."""

    exit_code = 3


class InputOutputError(DynpanelError):
    exit_code = 1
