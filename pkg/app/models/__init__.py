"""Data models for the Clique Memory Engine."""
from .network import NetworkShape, Message, Probe, Extraction
from .activation import ActivationVector, ActivationBatch
from .retrieval import (
    Accelerations,
    FillPolicy,
    IterationProfile,
    RetrievalConfig,
    RetrievalOutcome,
    RetrievalRule,
    ScoreMatrix,
    TraceStep,
)
from .bench import Scenario, RepetitionReport, RunReport
from .emulation import BitBudget

__all__ = [
    "NetworkShape",
    "Message",
    "Probe",
    "Extraction",
    "ActivationVector",
    "ActivationBatch",
    "Accelerations",
    "FillPolicy",
    "IterationProfile",
    "RetrievalConfig",
    "RetrievalOutcome",
    "RetrievalRule",
    "ScoreMatrix",
    "TraceStep",
    "Scenario",
    "RepetitionReport",
    "RunReport",
    "BitBudget",
]
