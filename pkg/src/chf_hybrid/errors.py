"""Exception hierarchy shared across the package."""


class ChfError(Exception):
    """Base class for all package errors."""


class RangeError(ChfError, ValueError):
    """Input outside a tabulated or admissible interval."""


class ValidityError(RangeError):
    """Correlation input outside its validity range."""


class NumericError(ChfError, ArithmeticError):
    """Non-finite result or failed factorization."""


class BracketError(NumericError):
    """No sign change found while bracketing a root."""


class ConvergenceError(NumericError):
    """Iterative solver hit its iteration cap or missed tolerance."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, members=()):
        super().__init__(message)
        self.epoch = epoch
        self.members = list(members)


class SchemaError(ChfError, ValueError):
    """File header or structure does not match the expected schema."""


class ParseError(ChfError, ValueError):
    """A cell could not be parsed or failed validation."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SizeError(ChfError, ValueError):
    """Too few or too many items for the requested operation."""


class ShapeError(ChfError, ValueError):
    """Array shapes are inconsistent."""


class DegenerateFeatureError(ChfError, ValueError):
    """A feature (or target) has zero variance."""


class DegenerateUncertaintyError(ChfError, ValueError):
    """A predictive standard deviation is zero where a positive one is needed."""


class ConfigError(ChfError, ValueError):
    """Invalid or inconsistent configuration."""


class EnsembleError(ChfError):
    """One or more ensemble members failed to train."""

    def __init__(self, message, failed_members=()):
        super().__init__(message)
        self.failed_members = list(failed_members)


class GenerationError(ChfError):
    """Synthetic data generation could not reach its target size."""


class StageError(ChfError):
    """Wraps an error raised inside one stage of an experiment."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
