"""
Memory Engine - one sealed network plus rule dispatch.
Used by the CLI, the benchmark runner and the HTTP surface.
"""
import logging
from typing import Any, List, Optional, Sequence

import numpy as np

from app.core.config import Settings, get_settings
from app.models.activation import ActivationBatch
from app.models.network import Extraction, Message, Probe
from app.models.retrieval import RetrievalConfig, RetrievalOutcome, RetrievalRule
from app.services.emulation import run_emulated
from app.services.encoding import encode_probes, extract_messages, sample_message
from app.services.retrieval import run_joint, run_sum_of_max, run_sum_of_sum
from app.services.storage import WeightMatrix, recognize

logger = logging.getLogger(__name__)


def run_rule(W: WeightMatrix, batch: ActivationBatch, config: RetrievalConfig) -> RetrievalOutcome:
    """Run the configured rule on an already encoded batch."""
    if config.rule == RetrievalRule.SUM_OF_SUM:
        return run_sum_of_sum(W, batch, config)
    if config.rule == RetrievalRule.SUM_OF_MAX:
        return run_sum_of_max(W, batch, config)
    if config.rule == RetrievalRule.JOINT:
        view = W.sparse_view() if config.accelerations.sparse else None
        return run_joint(W, view, batch, config)
    return run_emulated(W, batch, config.theta, config)


def retrieve(W: WeightMatrix, probes: Sequence[Probe], config: RetrievalConfig) -> RetrievalOutcome:
    """Encode probes with the rule's fill policy and run the rule."""
    batch = encode_probes(W.shape, probes, config.fill)
    return run_rule(W, batch, config)


class MemoryEngine:
    """Serves recognition and retrieval from one sealed weight matrix."""

    def __init__(self, W: WeightMatrix, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()
        self.W = W if W.sealed else W.seal()
        logger.info(f"Memory engine ready: {self.W!r}")

    def make_config(self, **overrides: Any) -> RetrievalConfig:
        """RetrievalConfig with settings-level defaults; explicit None values are ignored."""
        values = {
            "gamma": self.settings.default_gamma,
            "max_iters": self.settings.default_max_iters,
            "theta": self.settings.default_theta,
            "fixed_width": self.settings.fixed_width_bits,
            "workers": self.settings.workers,
            "batch_size": self.settings.batch_size,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RetrievalConfig(**values)

    def recognize(self, message: Message) -> bool:
        return recognize(self.W, message)

    def retrieve(self, probes: Sequence[Probe], config: RetrievalConfig) -> RetrievalOutcome:
        return retrieve(self.W, probes, config)

    def decode(self, probes: Sequence[Probe], config: RetrievalConfig) -> tuple[RetrievalOutcome, List[Extraction]]:
        """
        Retrieve and read every final column off as an extraction.

        Args:
            probes: Partially erased messages
            config: Rule and iteration settings, see make_config

        Returns:
            The batch outcome and one Extraction per probe, in probe order
        """
        outcome = self.retrieve(probes, config)
        extractions = [extract_messages(self.W.shape, v) for v in outcome.final.columns()]
        return outcome, extractions

    def sample(self, extractions: Sequence[Extraction], config: RetrievalConfig) -> List[Optional[Message]]:
        """One seeded pick per extraction; unique results pass through, empty ones give None."""
        rng = np.random.default_rng(config.seed)
        return [sample_message(extraction, rng) for extraction in extractions]
