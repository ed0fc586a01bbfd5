"""
Carrier emulation models.
"""
from pydantic import BaseModel, Field


class BitBudget(BaseModel):
    """Register width needed to hold aggregate carrier values."""
    clusters: int = Field(..., ge=1)
    cluster_size: int = Field(..., ge=1)
    theta: int = Field(..., ge=2)
    # Every cluster sends L signals
    worst_case_bits: int
    worst_case_log2: float
    # Every cluster sends exactly one signal
    single_signal_bits: int
    single_signal_log2: float

    @property
    def worst_case_quoted(self) -> int:
        """log2 of the worst case rounded to the nearest bit."""
        return round(self.worst_case_log2)

    @property
    def single_signal_quoted(self) -> int:
        """log2 of the one-signal case rounded to the nearest bit."""
        return round(self.single_signal_log2)
