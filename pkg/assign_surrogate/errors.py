"""
Exception hierarchy for AssignSurrogate.

The command-line interface maps ValidationError (and subclasses) to exit code 1
and every other failure to exit code 2.
"""


class LabError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(LabError, ValueError):
    """A precondition or parameter check failed."""


class ShapeError(ValidationError):
    """Array shapes are incompatible for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        listed = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class GenerationError(LabError):
    """Synthetic input generation could not satisfy its constraints."""


class DisconnectedError(LabError):
    """An origin-destination pair has no path in the network."""


class SamplingError(LabError):
    """An assignment could not be sampled."""


class AutodiffError(LabError):
    """Misuse of the differentiation engine."""


class DatasetError(LabError):
    """A dataset or checkpoint file is missing or corrupt."""


class TrainingError(LabError):
    """Training diverged or could not start."""


class StageError(ValidationError):
    """A pipeline stage cannot run in the current experiment state."""
