"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BShapError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(BShapError):
    """A feature space, point, or grouping violates its structural rules."""


class ModelError(BShapError):
    """A model specification is structurally invalid."""


class DomainError(BShapError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class EvaluationError(BShapError):
    """A guarded numeric operation failed during model evaluation."""


class ParseError(BShapError):
    """Positioned error from the model-spec language.

    `line` and `column` are 1-based. `str()` renders as
    ``line L, column C: message``.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class DispatchError(BShapError):
    """A closed-form attribution path was asked to handle a model whose
    interaction order it does not cover."""


class TooManyGroupsError(BShapError):
    """Exact enumeration was requested over more attribution units than the
    2^G evaluation budget allows."""


class ReferenceError(BShapError):
    """No usable reference point could be produced."""


class ReferenceDeclinedError(ReferenceError):
    """A candidate reference point falls in the decline region."""

    def __init__(self, point, probability: float, threshold: float):
        super().__init__(
            f"reference point is not accepted: p={probability:.6g} > "
            f"threshold={threshold:.6g} (point={tuple(point)})"
        )
        self.point = tuple(point)
        self.probability = probability
        self.threshold = threshold


class DatasetError(BShapError):
    """A dataset file could not be read into the declared feature space."""


class UsageError(BShapError):
    """Bad command-line arguments or configuration."""
