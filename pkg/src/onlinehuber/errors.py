"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class HuberStreamError(Exception):
    """Base class. ``batch_index`` is set when the failure came from a stream batch."""

    batch_index: int | None = None

    def at_batch(self, batch_index: int) -> "HuberStreamError":
        self.batch_index = batch_index
        self.args = (f"batch {batch_index}: {self.args[0] if self.args else ''}",) + self.args[1:]
        return self


class InvalidInputError(HuberStreamError, ValueError):
    pass


class NumericalError(HuberStreamError, ArithmeticError):
    """Singularities and degeneracies; the CLI maps these to exit code 3."""


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message)
        self.pivot_index = pivot_index


class DegenerateWeightsError(NumericalError):
    pass


class DegenerateScaleError(NumericalError):
    pass


class DegenerateMomentsError(NumericalError):
    pass


class BootstrapFailedError(NumericalError):
    pass


class SchemaError(InvalidInputError):
    pass
