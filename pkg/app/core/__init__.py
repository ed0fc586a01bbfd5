"""Core configuration module."""
from .config import get_settings, Settings
from .exceptions import (
    CliqueMemoryError,
    ShapeError,
    SymbolRangeError,
    WeightFormatError,
    CarrierOverflowError,
    AcceptanceError,
)

__all__ = [
    "get_settings",
    "Settings",
    "CliqueMemoryError",
    "ShapeError",
    "SymbolRangeError",
    "WeightFormatError",
    "CarrierOverflowError",
    "AcceptanceError",
]
