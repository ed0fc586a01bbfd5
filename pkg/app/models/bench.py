"""
Benchmark scenario and report models.
"""
from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.network import NetworkShape
from app.models.retrieval import Accelerations, IterationProfile, RetrievalRule


class Scenario(BaseModel):
    """One experiment setting: corpus, probes, erasures and rule."""
    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    shape: NetworkShape
    stored: int = Field(..., ge=1)
    probes: int = Field(..., ge=1)
    erased: int = Field(default=0, ge=0)
    gamma: int = Field(default=2, ge=0)
    rule: RetrievalRule = RetrievalRule.SUM_OF_MAX
    max_iters: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
    repetitions: int = Field(default=5, ge=1)
    theta: Optional[int] = Field(default=None, ge=2)
    fixed_width: Optional[int] = Field(default=None, ge=1)
    mode: Literal["batch", "serial"] = "batch"
    batch_size: int = Field(default=1024, ge=1)
    workers: int = Field(default=1, ge=1)
    accelerations: Accelerations = Field(default_factory=Accelerations)
    success_counting: Literal["unique", "random_choice"] = "unique"

    @model_validator(mode="after")
    def _check_ranges(self) -> "Scenario":
        if self.probes > self.stored:
            raise ValueError("probes are sampled from the stored corpus: probes <= stored")
        if self.erased > self.shape.clusters:
            raise ValueError(f"erased must be in 0..{self.shape.clusters}")
        return self


class RepetitionReport(BaseModel):
    """Result of a single repetition of a scenario."""
    repetition: int
    seed: int
    corpus_hash: str
    successes: int
    probes: int
    retrieval_rate: float = Field(..., ge=0.0, le=1.0)
    mean_iterations: float
    oscillation_count: int
    wall_ms: float
    # Probe positions (within the test sample) that were recovered
    success_mask: List[bool] = Field(default_factory=list, repr=False)
    state_hash: str = ""
    profile: List[IterationProfile] = Field(default_factory=list, repr=False)


class RunReport(BaseModel):
    """Aggregate over the repetitions of one scenario."""
    scenario: Scenario
    retrieval_rate: float = Field(..., ge=0.0, le=1.0)
    rate_stderr: float = 0.0
    mean_iterations: float
    oscillation_count: int
    wall_ms: float
    repetitions: List[RepetitionReport]
