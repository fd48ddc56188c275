"""Exception and warning types shared across the package."""

from __future__ import annotations


class StructmixError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(StructmixError, ValueError):
    """Array shapes are inconsistent with the model dimensions."""


class ParameterError(StructmixError, ValueError):
    """A scalar or vector parameter is outside its admissible range."""


class ValidityError(StructmixError, ValueError):
    """Input violates a structural requirement (symmetry, positive definiteness, finiteness)."""


class IdentifiabilityError(StructmixError, ValueError):
    """Design matrices are rank deficient or the normal matrix is singular."""


class DegenerateColumnError(ValidityError):
    """A residual column has zero variance, so its prediction-error variance would be zero."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"residual column {column} is degenerate (zero prediction residual)")


class OverfitError(ValidityError):
    """The sample size cannot support the number of regression coefficients allowed."""


class ConfigError(StructmixError, ValueError):
    """A run configuration file is missing or malformed."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{message} (field: {field})")


class ConvergenceWarning(UserWarning):
    """An iterative solver exhausted its budget; the last iterate is still returned."""
