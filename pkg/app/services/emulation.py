"""
Emulation Service - sum-of-max scoring through a single carrier-modulated product.

Signals from cluster c are weighted by theta^(c-1), so u = Omega v packs the
per-cluster signal counts a_c into the base-theta digits of one integer.
"""
import logging
import math
from typing import Optional

import numpy as np

from app.core.exceptions import CarrierOverflowError, ShapeError
from app.models.activation import ActivationBatch
from app.models.emulation import BitBudget
from app.models.retrieval import RetrievalConfig, RetrievalOutcome, RetrievalRule
from app.services.retrieval import (
    ChunkResult,
    iterate_until_stable,
    run_in_chunks,
    select_cluster_max,
    trace_requested,
)
from app.services.storage import WeightMatrix

logger = logging.getLogger(__name__)

# Widest aggregate kept in int64 before switching to Python integers
_INT64_BITS = 62


class CarrierMatrix:
    """
    Omega_ij = w_ij * theta^floor((j-1)/L), with the self-loop (gamma = 1)
    on the diagonal. Entries are materialized lazily; products are computed
    block by block, which is the same sum split by column cluster.
    """

    def __init__(self, W: WeightMatrix, theta: int):
        if theta < 2:
            raise ValueError("theta must be at least 2")
        self.W = W
        self.shape = W.shape
        self.theta = theta
        self.carriers = [theta ** c for c in range(self.shape.clusters)]
        self.exact_int64 = bits_required(self.shape.clusters, self.shape.cluster_size, theta) <= _INT64_BITS

    def column_carrier(self, index: int) -> int:
        """theta^(c-1) for 1-based column `index` in cluster c."""
        return self.carriers[(index - 1) // self.shape.cluster_size]

    def entries(self) -> np.ndarray:
        """Dense Omega (int64 when it fits, Python integers otherwise)."""
        n = self.shape.total
        dtype = np.int64 if self.exact_int64 else object
        column_weights = np.repeat(np.array(self.carriers, dtype=dtype), self.shape.cluster_size)
        links = self.W.adjacency | np.eye(n, dtype=bool)
        return links.astype(dtype) * column_weights[None, :]

    def aggregate(self, bits: np.ndarray) -> np.ndarray:
        """u = Omega V for an n x K state."""
        if bits.shape[0] != self.shape.total:
            raise ShapeError(f"state has {bits.shape[0]} rows, network has {self.shape.total} neurons")
        dense = self.W.scoring_matrix()
        dtype = np.int64 if self.exact_int64 else object
        u = np.zeros(bits.shape, dtype=dtype)
        for c in range(self.shape.clusters):
            block = slice(c * self.shape.cluster_size, (c + 1) * self.shape.cluster_size)
            counts = (dense[:, block] @ bits[block].astype(np.float32)).astype(np.int64)
            counts[block] += bits[block]  # self-loop
            u += counts.astype(dtype) * self.carriers[c]
        return u


def build_carrier(W: WeightMatrix, theta: int, gamma: int = 1) -> CarrierMatrix:
    """Carrier matrix for basis theta; gamma is normalized to 1."""
    if gamma != 1:
        logger.info(f"Carrier emulation normalizes gamma={gamma} to 1")
    return CarrierMatrix(W, theta)


def decode_score(u: int, theta: int, clusters: int) -> int:
    """Number of nonzero base-theta digits among the lowest `clusters` digits of u."""
    score = 0
    for _ in range(clusters):
        u, digit = divmod(u, theta)
        score += digit != 0
    return score


def decode_scores(u: np.ndarray, theta: int, clusters: int) -> np.ndarray:
    """Vectorized decode_score over an aggregate array."""
    u = u.copy()
    scores = np.zeros(u.shape, dtype=np.int32)
    for _ in range(clusters):
        digit = u % theta
        scores += (digit != 0).astype(np.int32)
        u //= theta
    return scores


def bits_required(clusters: int, cluster_size: int, theta: int) -> int:
    """Bits needed for the worst aggregate sum_c L * theta^(c-1)."""
    if theta < 2:
        raise ValueError("theta must be at least 2")
    worst = sum(cluster_size * theta ** c for c in range(clusters))
    return worst.bit_length()


def bit_budget(clusters: int, cluster_size: int, theta: int) -> BitBudget:
    """Exact and log2 bit counts for the worst and the one-signal-per-cluster aggregates."""
    worst = sum(cluster_size * theta ** c for c in range(clusters))
    single = sum(theta ** c for c in range(clusters))
    return BitBudget(
        clusters=clusters,
        cluster_size=cluster_size,
        theta=theta,
        worst_case_bits=worst.bit_length(),
        worst_case_log2=math.log2(worst),
        single_signal_bits=single.bit_length(),
        single_signal_log2=math.log2(single),
    )


def _check_width(u: np.ndarray, fixed_width: Optional[int]) -> None:
    if fixed_width is None or u.size == 0:
        return
    largest = int(u.max())
    if largest.bit_length() > fixed_width:
        raise CarrierOverflowError(
            f"aggregate {largest} needs {largest.bit_length()} bits, register holds {fixed_width}"
        )


def emulated_step(carrier: CarrierMatrix, bits: np.ndarray, fixed_width: Optional[int] = None):
    """One emulated update: decode scores from Omega V, keep per-cluster maxima."""
    u = carrier.aggregate(bits)
    _check_width(u, fixed_width)
    scores = decode_scores(u, carrier.theta, carrier.shape.clusters)
    return select_cluster_max(carrier.shape, scores), scores


def run_emulated(
    W: WeightMatrix,
    probes: ActivationBatch,
    theta: Optional[int],
    config: RetrievalConfig,
) -> RetrievalOutcome:
    """Iterate the emulated rule under the shared cap and oscillation check."""
    if probes.shape != W.shape:
        raise ShapeError("probes and weight matrix have different shapes")
    theta = theta or config.theta or W.shape.cluster_size + 1
    carrier = build_carrier(W, theta)
    width = config.fixed_width
    if width is not None:
        needed = bits_required(W.shape.clusters, W.shape.cluster_size, theta)
        logger.info(f"Fixed-width emulation: {width} bits available, worst case needs {needed}")
    trace = trace_requested(config, probes)

    def decode(bits: np.ndarray, _columns: np.ndarray) -> ChunkResult:
        return iterate_until_stable(
            W.shape,
            bits,
            lambda state, _active: emulated_step(carrier, state, width),
            config.max_iters,
            config.detect_oscillation,
            trace,
        )

    return run_in_chunks(RetrievalRule.EMULATED, probes, config, decode)
