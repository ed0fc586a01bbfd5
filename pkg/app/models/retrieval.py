"""
Retrieval configuration and outcome models.
"""
from enum import Enum
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.activation import ActivationBatch

# Integer n x K score matrix (s_i per probe); plain numpy, no wrapper.
ScoreMatrix = np.ndarray


class RetrievalRule(str, Enum):
    """Retrieval rules, named by their CLI spelling."""
    SUM_OF_SUM = "sos"
    SUM_OF_MAX = "som"
    JOINT = "joint"
    EMULATED = "emu"


class FillPolicy(str, Enum):
    """Initial activation of erased clusters."""
    ERASED_OFF = "erased_off"  # sum-of-sum, joint
    ERASED_ON = "erased_on"  # sum-of-max, emulation


FILL_POLICY = {
    RetrievalRule.SUM_OF_SUM: FillPolicy.ERASED_OFF,
    RetrievalRule.JOINT: FillPolicy.ERASED_OFF,
    RetrievalRule.SUM_OF_MAX: FillPolicy.ERASED_ON,
    RetrievalRule.EMULATED: FillPolicy.ERASED_ON,
}

ProbeStatus = Literal["Converged", "MaxItersExceeded"]


class Accelerations(BaseModel):
    """Sum-of-max acceleration switches. None changes the final states, except freeze_sole on corrupted probes."""
    model_config = ConfigDict(frozen=True)

    sparse: bool = True  # use the compressed column view instead of dense W
    skip_dead: bool = True  # only evaluate currently active neurons
    freeze_sole: bool = False  # skip clusters holding a single active neuron; exact only for erasures
    bail_out: bool = True  # abandon a neuron at its first silent cluster


class RetrievalConfig(BaseModel):
    """Rule selection and iteration limits for one retrieval run."""
    model_config = ConfigDict(frozen=True)

    rule: RetrievalRule = RetrievalRule.SUM_OF_MAX
    gamma: int = Field(default=1, ge=0, description="Reinforcement factor")
    max_iters: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
    mode: Literal["batch", "serial"] = "batch"
    batch_size: int = Field(default=1024, ge=1)
    workers: int = Field(default=1, ge=1)
    accelerations: Accelerations = Field(default_factory=Accelerations)
    detect_oscillation: bool = True
    # Emulation only
    theta: Optional[int] = Field(default=None, ge=2)
    fixed_width: Optional[int] = Field(default=None, ge=1)
    trace: bool = False

    @model_validator(mode="after")
    def _positive_gamma_for_convergent_rules(self) -> "RetrievalConfig":
        if self.rule in (RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT) and self.gamma <= 0:
            raise ValueError(f"rule {self.rule.value} requires gamma > 0")
        return self

    @property
    def fill(self) -> FillPolicy:
        return FILL_POLICY[self.rule]


class TraceStep(BaseModel):
    """Scores computed at iteration t and the state they produce."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iteration: int
    scores: Optional[ScoreMatrix] = None
    state: ActivationBatch


class IterationProfile(BaseModel):
    """Work done by one iteration across all chunks."""
    iteration: int
    wall_ms: float
    # Columns settled (converged or oscillating) once this iteration ran, cumulative
    settled: int


class RetrievalOutcome(BaseModel):
    """
    Final states and per-probe termination data of one batch run.

    `iterations` stays within `max_iters` for sum-of-sum and emulation.
    Sum-of-max and joint ignore the cap: every changing update removes an
    active neuron, so they stop within the initial active count.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rule: RetrievalRule
    final: ActivationBatch
    statuses: List[ProbeStatus]
    iterations: List[int]
    oscillating: List[bool]
    wall_ms: float = 0.0
    trace: List[TraceStep] = Field(default_factory=list)
    profile: List[IterationProfile] = Field(default_factory=list)

    @property
    def num_probes(self) -> int:
        return len(self.statuses)

    @property
    def oscillation_count(self) -> int:
        return sum(self.oscillating)

    @property
    def all_converged(self) -> bool:
        return all(s == "Converged" for s in self.statuses)

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0
