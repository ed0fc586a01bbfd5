"""
Request and response models for the HTTP surface.
"""
from typing import List, Literal, Optional
from pydantic import BaseModel, Field

from app.models.retrieval import RetrievalRule


class NetworkInfo(BaseModel):
    """Loaded network summary."""
    clusters: int
    cluster_size: int
    neurons: int
    stored_count: int
    edge_count: int


class RecognizeRequest(BaseModel):
    """Request model for recognition of a complete message."""
    message: str = Field(..., description="Comma-separated symbols, e.g. '9,4,3,10'")


class RecognizeResponse(BaseModel):
    message: str
    recognized: bool


class RetrieveRequest(BaseModel):
    """Request model for retrieval of partially erased messages."""
    probes: List[str] = Field(..., min_length=1, description="Probes such as '9,4,?,10'")
    rule: RetrievalRule = RetrievalRule.SUM_OF_MAX
    gamma: Optional[int] = Field(None, ge=0, description="Reinforcement factor")
    max_iters: Optional[int] = Field(None, ge=1)
    theta: Optional[int] = Field(None, ge=2, description="Carrier basis for emulation")
    sample: bool = Field(False, description="Also pick one message per probe from ambiguous results")
    seed: int = Field(0, ge=0, description="Seed for the pick made when sample is true")


class ProbeResult(BaseModel):
    """Outcome for one probe."""
    probe: str
    status: Literal["Converged", "MaxItersExceeded"]
    oscillating: bool
    iterations: int
    kind: Literal["unique", "ambiguous", "empty"]
    message: Optional[str] = None
    candidates: List[List[int]] = Field(default_factory=list)
    sampled: Optional[str] = None
    state: str = Field(..., description="Final activation, one group of L bits per cluster")


class RetrieveResponse(BaseModel):
    rule: RetrievalRule
    gamma: int
    results: List[ProbeResult]
    wall_ms: float
