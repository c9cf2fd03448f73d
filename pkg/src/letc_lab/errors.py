"""Exception hierarchy for LetC Lab.

Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Any


class LetcLabError(Exception):
    """Base class for all errors raised by this package."""


class LinalgError(LetcLabError, ValueError):
    """A dense linear-algebra operation could not be carried out."""


class SingularSystem(LinalgError):
    """A positive semi-definite system could not be solved, even with jitter."""

    def __init__(self, message: str, jitter: float = 0.0) -> None:
        super().__init__(message)
        self.jitter = jitter


class DimensionMismatch(LinalgError):
    """Operand shapes do not agree."""


class NonFiniteInput(LinalgError):
    """An operand contains NaN or infinite entries."""


class DegenerateSlope(LetcLabError, ValueError):
    """The price slope x'beta is too close to zero for an optimal price to exist."""

    def __init__(self, message: str, slope: float | None = None) -> None:
        super().__init__(message)
        self.slope = slope


class PriceOutOfBounds(LetcLabError, ValueError):
    """A posted price lies outside the feasible interval [lower, upper]."""


class NoBracket(LetcLabError):
    """The critical-inequality function does not change sign on the bracket."""

    def __init__(self, message: str, upper: float, value_at_upper: float) -> None:
        super().__init__(message)
        self.upper = upper
        self.value_at_upper = value_at_upper


class InsufficientData(LetcLabError, ValueError):
    """Not enough records to fit a model."""


class ProductDiscarded(LetcLabError):
    """A product cannot be turned into a simulation environment.

    ``report`` is a JSON-serializable dict describing why.
    """

    def __init__(self, message: str, report: dict[str, Any]) -> None:
        super().__init__(message)
        self.report = report


class EmitError(LetcLabError, OSError):
    """Writing or reading an output file failed."""

    def __init__(self, message: str, path: str) -> None:
        super().__init__(f"{message}: {path}")
        self.path = path
