"""
Network shape, message and probe models.

Clusters, neurons and symbols are 1-indexed at every interface.
"""
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

from app.core.exceptions import SymbolRangeError


class NetworkShape(BaseModel):
    """C clusters of L neurons each."""
    model_config = ConfigDict(frozen=True)

    clusters: int = Field(..., ge=2, description="Cluster count C")
    cluster_size: int = Field(..., ge=1, description="Neurons per cluster L")

    @computed_field
    @property
    def total(self) -> int:
        """Neuron count n = C * L."""
        return self.clusters * self.cluster_size

    def cluster_slice(self, cluster: int) -> slice:
        """0-based row slice covering the neurons of a 1-based cluster."""
        self.check_cluster(cluster)
        start = (cluster - 1) * self.cluster_size
        return slice(start, start + self.cluster_size)

    def check_cluster(self, cluster: int) -> None:
        if not 1 <= cluster <= self.clusters:
            raise SymbolRangeError(f"cluster {cluster} outside 1..{self.clusters}")

    def check_symbol(self, symbol: int) -> None:
        if not 1 <= symbol <= self.cluster_size:
            raise SymbolRangeError(f"symbol {symbol} outside 1..{self.cluster_size}")

    def check_message(self, message: "Message") -> None:
        """Raise SymbolRangeError unless the message fits this shape."""
        if len(message.symbols) != self.clusters:
            raise SymbolRangeError(
                f"message has {len(message.symbols)} symbols, network has {self.clusters} clusters"
            )
        for symbol in message.symbols:
            self.check_symbol(symbol)

    def check_probe(self, probe: "Probe") -> None:
        """Raise SymbolRangeError unless the probe fits this shape."""
        if len(probe.slots) != self.clusters:
            raise SymbolRangeError(
                f"probe has {len(probe.slots)} slots, network has {self.clusters} clusters"
            )
        for symbol in probe.slots:
            if symbol is not None:
                self.check_symbol(symbol)


class Message(BaseModel):
    """A complete message: one symbol per cluster."""
    model_config = ConfigDict(frozen=True)

    symbols: Tuple[int, ...]

    @field_validator("symbols")
    @classmethod
    def _positive(cls, symbols: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(s < 1 for s in symbols):
            raise ValueError("symbols are 1-indexed")
        return symbols

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.symbols)


class Probe(BaseModel):
    """A partially erased message; None marks an erased cluster."""
    model_config = ConfigDict(frozen=True)

    slots: Tuple[Optional[int], ...]

    @field_validator("slots")
    @classmethod
    def _positive(cls, slots: Tuple[Optional[int], ...]) -> Tuple[Optional[int], ...]:
        if any(s is not None and s < 1 for s in slots):
            raise ValueError("symbols are 1-indexed")
        return slots

    @classmethod
    def from_message(cls, message: Message) -> "Probe":
        return cls(slots=tuple(message.symbols))

    @property
    def erased_count(self) -> int:
        return sum(1 for s in self.slots if s is None)

    @property
    def erased_clusters(self) -> List[int]:
        """1-based indices of the erased clusters."""
        return [c for c, s in enumerate(self.slots, start=1) if s is None]

    def __str__(self) -> str:
        return ",".join("?" if s is None else str(s) for s in self.slots)


class Extraction(BaseModel):
    """Interpretation of a converged activation vector."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["unique", "ambiguous", "empty"]
    message: Optional[Message] = None
    # Per-cluster candidate symbols; empty for "empty" outcomes
    candidates: Tuple[Tuple[int, ...], ...] = ()

    def contains(self, message: Message) -> bool:
        """True if the message is one of the interpretations of this state."""
        if self.kind == "empty":
            return False
        return all(s in cands for s, cands in zip(message.symbols, self.candidates))
