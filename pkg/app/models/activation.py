"""
Activation vectors and batches.

A single ActivationVector is kept as packed bit blocks. An ActivationBatch
is the working state of the retrieval engine: an n x K boolean matrix whose
column k is the state of probe k.
"""
from typing import Iterable, Sequence

import numpy as np

from app.core.exceptions import ShapeError
from app.models.network import NetworkShape


class ActivationVector:
    """Immutable binary activation state of length n."""

    __slots__ = ("shape", "_packed")

    def __init__(self, shape: NetworkShape, bits: Sequence[int] | np.ndarray):
        bits = np.asarray(bits)
        if bits.shape != (shape.total,):
            raise ShapeError(f"expected {shape.total} bits, got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("activation entries must be 0 or 1")
        self.shape = shape
        self._packed = np.packbits(bits.astype(bool))
        self._packed.flags.writeable = False

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def bits(self) -> np.ndarray:
        """Unpacked 0/1 vector (uint8)."""
        return np.unpackbits(self._packed, count=self.shape.total)

    def active_count(self) -> int:
        return int(np.unpackbits(self._packed).sum())

    def to_string(self) -> str:
        """Bits grouped per cluster, e.g. '0010 1000'."""
        text = "".join(str(b) for b in self.bits)
        size = self.shape.cluster_size
        return " ".join(text[i:i + size] for i in range(0, len(text), size))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActivationVector):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._packed, other._packed)

    def __hash__(self) -> int:
        return hash((self.shape, self._packed.tobytes()))

    def __repr__(self) -> str:
        return f"ActivationVector({self.to_string()!r})"


class ActivationBatch:
    """K activation columns sharing one network shape."""

    __slots__ = ("shape", "bits")

    def __init__(self, shape: NetworkShape, bits: np.ndarray):
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[0] != shape.total:
            raise ShapeError(f"expected a {shape.total} x K matrix, got shape {bits.shape}")
        self.shape = shape
        self.bits = bits.astype(bool, copy=False)

    @classmethod
    def from_vectors(cls, shape: NetworkShape, vectors: Iterable[ActivationVector]) -> "ActivationBatch":
        columns = []
        for vector in vectors:
            if vector.shape != shape:
                raise ShapeError("all columns must share one network shape")
            columns.append(vector.bits.astype(bool))
        if not columns:
            return cls(shape, np.zeros((shape.total, 0), dtype=bool))
        return cls(shape, np.stack(columns, axis=1))

    @property
    def num_probes(self) -> int:
        return self.bits.shape[1]

    def column(self, k: int) -> ActivationVector:
        return ActivationVector(self.shape, self.bits[:, k].astype(np.uint8))

    def columns(self) -> list[ActivationVector]:
        return [self.column(k) for k in range(self.num_probes)]

    def blocks(self) -> np.ndarray:
        """(C, L, K) view of the state."""
        return self.bits.reshape(self.shape.clusters, self.shape.cluster_size, -1)

    def copy(self) -> "ActivationBatch":
        return ActivationBatch(self.shape, self.bits.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActivationBatch):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"ActivationBatch(n={self.shape.total}, K={self.num_probes})"
