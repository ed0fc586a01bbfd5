"""
Exception hierarchy shared by the engine services.
"""


class CliqueMemoryError(Exception):
    """Base class for every engine error."""


class ShapeError(CliqueMemoryError):
    """Operands were built for different network shapes."""


class SymbolRangeError(CliqueMemoryError, ValueError):
    """A cluster, neuron or symbol index is outside its range."""


class WeightFormatError(CliqueMemoryError):
    """A weight-matrix image is corrupt, truncated or of the wrong version."""


class CarrierOverflowError(CliqueMemoryError, OverflowError):
    """An aggregate carrier value exceeds the configured fixed width."""


class AcceptanceError(CliqueMemoryError):
    """A benchmark result fell outside its acceptance band."""
