"""Services module for the Clique Memory Engine."""
from .engine import MemoryEngine, retrieve, run_rule
from .storage import WeightMatrix, SparseWeightView

__all__ = ["MemoryEngine", "retrieve", "run_rule", "WeightMatrix", "SparseWeightView"]
