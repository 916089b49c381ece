"""Exception types raised across the package."""

import numpy as np


class StradiffError(Exception):
    """Base class for package errors."""


class ShapeError(StradiffError, ValueError):
    """Operand shapes violate an operation's contract."""


class NotPositiveDefinite(StradiffError, np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the zero-based index of the leading minor that failed.
    """

    def __init__(self, pivot):
        self.pivot = int(pivot)
        super().__init__(f"matrix is not positive definite (failing pivot {self.pivot})")


class NumericalFault(StradiffError, FloatingPointError):
    """A non-finite value reached the optimizer."""

    def __init__(self, message, parameter=None, epoch=None):
        self.parameter = parameter
        self.epoch = epoch
        super().__init__(message)


class DegenerateMixing(StradiffError, ValueError):
    """A mixing column collapsed to zero and cannot be normalized."""


class GenerationFailure(StradiffError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class CheckpointError(StradiffError, ValueError):
    """Checkpoint file is malformed or of an incompatible version."""
