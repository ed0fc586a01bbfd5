"""
Storage Service - clique insertion, recognition and weight-matrix images.

Edges only connect neurons of different clusters; the reinforcement factor
gamma is applied at retrieval time and never stored.
"""
import logging
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from app.core.exceptions import CliqueMemoryError, ShapeError, SymbolRangeError, WeightFormatError
from app.models.network import Message, NetworkShape
from app.services.encoding import message_rows

logger = logging.getLogger(__name__)

MAGIC = b"CLQM"
FORMAT_VERSION = 1
# magic, version, C, L, stored_count
HEADER = struct.Struct("<4sHIIQ")


class WeightMatrix:
    """Symmetric binary n x n adjacency aggregating every stored clique."""

    def __init__(self, shape: NetworkShape, adjacency: Optional[np.ndarray] = None, stored_count: int = 0):
        n = shape.total
        if adjacency is None:
            adjacency = np.zeros((n, n), dtype=bool)
        elif adjacency.shape != (n, n):
            raise ShapeError(f"adjacency must be {n} x {n}, got {adjacency.shape}")
        self.shape = shape
        self.adjacency = adjacency.astype(bool, copy=False)
        self.stored_count = stored_count
        self._sealed = False
        self._scoring: Optional[np.ndarray] = None
        self._sparse: Optional["SparseWeightView"] = None

    @classmethod
    def empty(cls, shape: NetworkShape) -> "WeightMatrix":
        return cls(shape)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> "WeightMatrix":
        """End the storage phase; the matrix is read-only from here on."""
        self._sealed = True
        self.adjacency.flags.writeable = False
        return self

    def _check_writable(self) -> None:
        if self._sealed:
            raise CliqueMemoryError("weight matrix is sealed for retrieval")

    def edge_count(self) -> int:
        """Number of undirected edges."""
        return int(self.adjacency.sum()) // 2

    def scoring_matrix(self) -> np.ndarray:
        """float32 copy of W used for dense products (exact for integer counts)."""
        if self._scoring is None or not self._sealed:
            self._scoring = self.adjacency.astype(np.float32)
        return self._scoring

    def sparse_view(self) -> "SparseWeightView":
        """Cached compressed view; only cached once sealed."""
        if self._sparse is None or not self._sealed:
            self._sparse = sparsify(self)
        return self._sparse

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.stored_count == other.stored_count
            and np.array_equal(self.adjacency, other.adjacency)
        )

    def __repr__(self) -> str:
        return (
            f"WeightMatrix(C={self.shape.clusters}, L={self.shape.cluster_size}, "
            f"stored={self.stored_count}, edges={self.edge_count()})"
        )


class SparseWeightView:
    """
    Compressed-column view of W: column j lists the rows i with w_ij = 1,
    ascending. Since W is symmetric, column i is also neuron i's neighbor list.
    """

    def __init__(self, shape: NetworkShape, matrix: sparse.csc_matrix):
        self.shape = shape
        self.matrix = matrix
        self.matrix.sort_indices()
        size = shape.cluster_size
        # Rows of cluster c (1-based) against all columns, used by bail-out-early.
        self._incoming = [
            self.matrix[(c - 1) * size:c * size, :].tocsc() for c in range(1, shape.clusters + 1)
        ]

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    def column_rows(self, index: int) -> np.ndarray:
        """1-based sorted row indices of the nonzeros in 1-based column `index`."""
        j = index - 1
        return self.indices[self.indptr[j]:self.indptr[j + 1]] + 1

    def contains(self, i: int, j: int) -> bool:
        """Membership test for 1-based (i, j)."""
        rows = self.indices[self.indptr[j - 1]:self.indptr[j]]
        pos = np.searchsorted(rows, i - 1)
        return bool(pos < len(rows) and rows[pos] == i - 1)

    def incoming(self, cluster: int) -> sparse.csc_matrix:
        """L x n block: w between neurons of `cluster` and every neuron."""
        return self._incoming[cluster - 1]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray().astype(bool)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)


def _check_shape(W: WeightMatrix, message: Message) -> None:
    if len(message.symbols) != W.shape.clusters:
        raise ShapeError(
            f"message has {len(message.symbols)} symbols, network has {W.shape.clusters} clusters"
        )
    W.shape.check_message(message)


def _insert(W: WeightMatrix, rows: np.ndarray) -> None:
    """OR-insert the cliques given as a (count, C) array of 0-based rows."""
    C = W.shape.clusters
    first, second = np.triu_indices(C, k=1)
    i = rows[:, first].ravel()
    j = rows[:, second].ravel()
    W.adjacency[i, j] = True
    W.adjacency[j, i] = True


def store(W: WeightMatrix, message: Message) -> WeightMatrix:
    """Add the clique of `message` to W."""
    W._check_writable()
    _check_shape(W, message)
    _insert(W, message_rows(W.shape, np.asarray(message.symbols))[None, :])
    W.stored_count += 1
    return W


def store_many(W: WeightMatrix, messages: Sequence[Message] | np.ndarray) -> WeightMatrix:
    """Bulk store; identical to calling store once per message."""
    W._check_writable()
    if isinstance(messages, np.ndarray):
        symbols = messages
        if symbols.ndim != 2 or symbols.shape[1] != W.shape.clusters:
            raise ShapeError(f"expected a (count, {W.shape.clusters}) symbol array, got {symbols.shape}")
        if symbols.size and (symbols.min() < 1 or symbols.max() > W.shape.cluster_size):
            raise SymbolRangeError(f"symbols must lie in 1..{W.shape.cluster_size}")
    else:
        for message in messages:
            _check_shape(W, message)
        symbols = np.array([m.symbols for m in messages], dtype=np.int64).reshape(-1, W.shape.clusters)
    if len(symbols):
        _insert(W, message_rows(W.shape, symbols))
    W.stored_count += len(symbols)
    logger.info(f"Stored {len(symbols)} messages ({W.stored_count} total, {W.edge_count()} edges)")
    return W


def recognize(W: WeightMatrix, message: Message) -> bool:
    """True iff every clique edge of `message` is present in W."""
    _check_shape(W, message)
    rows = message_rows(W.shape, np.asarray(message.symbols))
    first, second = np.triu_indices(W.shape.clusters, k=1)
    return bool(W.adjacency[rows[first], rows[second]].all())


def sparsify(W: WeightMatrix) -> SparseWeightView:
    """Compressed-column view of W with ascending row lists."""
    matrix = sparse.csc_matrix(W.adjacency.astype(np.uint8))
    matrix.eliminate_zeros()
    return SparseWeightView(W.shape, matrix)


def densify(view: SparseWeightView) -> WeightMatrix:
    """Rebuild a dense matrix from a sparse view (stored_count is not tracked by the view)."""
    return WeightMatrix(view.shape, view.to_dense())


def to_bytes(W: WeightMatrix) -> bytes:
    """Header followed by the packed strict upper triangle."""
    n = W.shape.total
    upper = W.adjacency[np.triu_indices(n, k=1)]
    header = HEADER.pack(MAGIC, FORMAT_VERSION, W.shape.clusters, W.shape.cluster_size, W.stored_count)
    return header + np.packbits(upper).tobytes()


def from_bytes(data: bytes) -> WeightMatrix:
    """Inverse of to_bytes; symmetry is rebuilt from the upper triangle."""
    if len(data) < HEADER.size:
        raise WeightFormatError("weight image shorter than its header")
    magic, version, clusters, cluster_size, stored_count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"unsupported format version {version}")
    try:
        shape = NetworkShape(clusters=clusters, cluster_size=cluster_size)
    except ValueError as e:
        raise WeightFormatError(f"invalid shape in header: {e}") from e

    n = shape.total
    edges = n * (n - 1) // 2
    payload = data[HEADER.size:]
    expected = (edges + 7) // 8
    if len(payload) != expected:
        raise WeightFormatError(f"payload is {len(payload)} bytes, expected {expected}")

    upper = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=edges).astype(bool)
    adjacency = np.zeros((n, n), dtype=bool)
    i, j = np.triu_indices(n, k=1)
    adjacency[i, j] = upper
    adjacency[j, i] = upper
    return WeightMatrix(shape, adjacency, stored_count=stored_count)


def save(W: WeightMatrix, destination: str | Path) -> None:
    Path(destination).write_bytes(to_bytes(W))
    logger.info(f"Saved {W!r} to {destination}")


def load(source: str | Path) -> WeightMatrix:
    W = from_bytes(Path(source).read_bytes())
    logger.info(f"Loaded {W!r} from {source}")
    return W


def build(shape: NetworkShape, messages: Iterable[Message] | np.ndarray) -> WeightMatrix:
    """Store a whole corpus into a fresh matrix and seal it."""
    W = WeightMatrix.empty(shape)
    if not isinstance(messages, np.ndarray):
        messages = list(messages)
    return store_many(W, messages).seal()
