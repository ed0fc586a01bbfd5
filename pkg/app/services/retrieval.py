"""
Retrieval Service - sum-of-sum, sum-of-max (bail-out-early) and the joint scheme.

All rules work on an n x K boolean state matrix whose columns are
independent probes. Columns are split into chunks that worker threads
decode separately, so results do not depend on the worker count.
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np

from app.core.exceptions import CliqueMemoryError, ShapeError
from app.models.activation import ActivationBatch
from app.models.network import NetworkShape
from app.models.retrieval import (
    Accelerations,
    IterationProfile,
    RetrievalConfig,
    RetrievalOutcome,
    RetrievalRule,
    TraceStep,
)
from app.services.storage import SparseWeightView, WeightMatrix, densify

logger = logging.getLogger(__name__)

WeightSource = WeightMatrix | SparseWeightView
# step(state, columns) -> (next_state, scores or None)
StepFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, Optional[np.ndarray]]]


# ==================== REDUCTIONS ====================

def _tree_or(x: np.ndarray) -> np.ndarray:
    """OR-reduce along axis 0 by pairwise halving (log2 depth)."""
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x, np.zeros_like(x[:1])], axis=0)
        x = x[0::2] | x[1::2]
    return x[0] if x.shape[0] else np.zeros(x.shape[1:], dtype=x.dtype)


def _changed_columns(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Per-column 'differs anywhere' over packed words."""
    diff = np.packbits(prev, axis=0) ^ np.packbits(nxt, axis=0)
    return _tree_or(diff) != 0


def convergence_check(
    prev: ActivationBatch,
    nxt: ActivationBatch,
    scope: Literal["all", "erased-only"] = "all",
    erased: Optional[np.ndarray] = None,
) -> bool:
    """
    True iff every in-scope entry of the two batches is equal.

    With scope "erased-only", `erased` is the (C, K) erased-cluster mask and
    differences in the other clusters are ignored.
    """
    if prev.shape != nxt.shape or prev.bits.shape != nxt.bits.shape:
        raise ShapeError("cannot compare batches of different shapes")
    a, b = prev.bits, nxt.bits
    if scope == "erased-only":
        if erased is None:
            raise ValueError("erased-only scope needs the erased-cluster mask")
        rows = np.repeat(erased, prev.shape.cluster_size, axis=0)
        a, b = a & rows, b & rows
    return not _changed_columns(a, b).any()


# ==================== SUM-OF-SUM ====================

def _check_batch(shape: NetworkShape, bits: np.ndarray) -> None:
    if bits.shape[0] != shape.total:
        raise ShapeError(f"state has {bits.shape[0]} rows, network has {shape.total} neurons")


def select_cluster_max(shape: NetworkShape, scores: np.ndarray) -> np.ndarray:
    """Keep every neuron attaining its cluster's max score; ties all survive."""
    blocks = scores.reshape(shape.clusters, shape.cluster_size, -1)
    best = blocks.max(axis=1, keepdims=True)
    return (blocks == best).reshape(shape.total, -1)


def sum_of_sum_scores(W: WeightMatrix, bits: np.ndarray, gamma: int) -> np.ndarray:
    """S = (W + gamma I) V as int32."""
    _check_batch(W.shape, bits)
    product = W.scoring_matrix() @ bits.astype(np.float32)
    return product.astype(np.int32) + gamma * bits.astype(np.int32)


def _sum_of_sum_bits(W: WeightMatrix, bits: np.ndarray, gamma: int) -> Tuple[np.ndarray, np.ndarray]:
    scores = sum_of_sum_scores(W, bits, gamma)
    return select_cluster_max(W.shape, scores), scores


def sum_of_sum_step(W: WeightMatrix, V: ActivationBatch, gamma: int) -> ActivationBatch:
    """One sum-of-sum update of every column."""
    if V.shape != W.shape:
        raise ShapeError("batch and weight matrix have different shapes")
    nxt, _ = _sum_of_sum_bits(W, V.bits, gamma)
    return ActivationBatch(W.shape, nxt)


# ==================== SUM-OF-MAX ====================

class _IncomingBlocks:
    """Per-cluster L x n weight blocks from either representation."""

    def __init__(self, source: WeightSource):
        self.shape = source.shape
        if isinstance(source, SparseWeightView):
            self._sparse = source
            self._dense = None
        else:
            self._sparse = None
            self._dense = source.scoring_matrix()

    def signals(self, cluster: int, rows: np.ndarray, bits: np.ndarray) -> np.ndarray:
        """|rows| x K: does cluster `cluster` send at least one signal to each row?"""
        block = self.shape.cluster_slice(cluster)
        if self._sparse is not None:
            received = self._sparse.incoming(cluster)[:, rows].T @ bits[block].astype(np.int32)
        else:
            received = self._dense[block][:, rows].T @ bits[block].astype(np.float32)
        return np.asarray(received) > 0


def _sole_mask(shape: NetworkShape, bits: np.ndarray) -> np.ndarray:
    """Neurons that are the only active neuron of their cluster."""
    counts = bits.reshape(shape.clusters, shape.cluster_size, -1).sum(axis=1)
    sole = np.repeat(counts == 1, shape.cluster_size, axis=0)
    return sole & bits


def sum_of_max_scores(source: WeightSource, bits: np.ndarray, gamma: int = 1) -> np.ndarray:
    """Direct sum-of-max scores: gamma v_i + sum over clusters of max_j v_j w_ji."""
    shape = source.shape
    _check_batch(shape, bits)
    incoming = _IncomingBlocks(source)
    rows = np.arange(shape.total)
    scores = gamma * bits.astype(np.int32)
    for cluster in range(1, shape.clusters + 1):
        scores += incoming.signals(cluster, rows, bits).astype(np.int32)
    return scores


def direct_sum_of_max_step(W: WeightSource, V: ActivationBatch, gamma: int) -> ActivationBatch:
    """Sum-of-max evaluated literally: active iff the score reaches gamma + C - 1."""
    if gamma <= 0:
        raise ValueError("sum-of-max requires gamma > 0")
    scores = sum_of_max_scores(W, V.bits, gamma)
    return ActivationBatch(V.shape, scores == gamma + V.shape.clusters - 1)


def _bail_out_bits(
    incoming: _IncomingBlocks,
    bits: np.ndarray,
    frozen: Optional[np.ndarray],
    acc: Accelerations,
) -> np.ndarray:
    shape = incoming.shape
    if not acc.bail_out:
        # Full score, thresholded at gamma + C - 1 with gamma = 1
        rows = np.arange(shape.total)
        scores = bits.astype(np.int32)
        for cluster in range(1, shape.clusters + 1):
            scores += incoming.signals(cluster, rows, bits)
        computed = scores == shape.clusters
        return computed if frozen is None else np.where(frozen, bits, computed)

    evaluate = bits.copy() if acc.skip_dead else np.ones_like(bits)
    if frozen is not None:
        evaluate &= ~frozen
    if acc.freeze_sole:
        evaluate &= ~_sole_mask(shape, bits)
    computed = evaluate.copy()
    for cluster in range(1, shape.clusters + 1):
        rows = np.flatnonzero(computed.any(axis=1))
        if rows.size == 0:
            break
        signal = incoming.signals(cluster, rows, bits)
        block = shape.cluster_slice(cluster)
        own = (rows >= block.start) & (rows < block.stop)
        # Own cluster: the self-loop fires iff the neuron is active
        signal[own] = bits[rows[own]]
        computed[rows] &= signal
    return np.where(evaluate, computed, bits)


def sum_of_max_step(
    W_sparse: WeightSource,
    V: ActivationBatch,
    frozen: Optional[np.ndarray] = None,
    accelerations: Optional[Accelerations] = None,
) -> ActivationBatch:
    """
    One bail-out-early update (gamma normalized to 1).

    A neuron stays active iff it is active now and every cluster sends it a
    signal: its own cluster through the self-loop, every other cluster
    through at least one active neighbor. Rows set in `frozen` keep their
    current value.
    """
    if V.shape != W_sparse.shape:
        raise ShapeError("batch and weight matrix have different shapes")
    if frozen is not None and frozen.shape != V.bits.shape:
        raise ShapeError("frozen mask must match the batch")
    nxt = _bail_out_bits(_IncomingBlocks(W_sparse), V.bits, frozen, accelerations or Accelerations())
    return ActivationBatch(V.shape, nxt)


def bail_out_neuron(view: SparseWeightView, v: np.ndarray, index: int) -> bool:
    """
    Single-neuron bail-out-early kernel over column `index` (1-based).

    Clusters are scanned in order; a cluster stops at its first active
    neighbor and the neuron is abandoned at the first silent cluster.
    """
    shape = view.shape
    i = index - 1
    if not v[i]:
        return False
    rows = view.indices[view.indptr[i]:view.indptr[i + 1]]
    own = i // shape.cluster_size
    for c in range(shape.clusters):
        if c == own:
            continue
        lo, hi = c * shape.cluster_size, (c + 1) * shape.cluster_size
        ptr = int(np.searchsorted(rows, lo))
        while ptr < len(rows) and rows[ptr] < hi:
            if v[rows[ptr]]:
                break
            ptr += 1
        else:
            return False
    return True


# ==================== ITERATION DRIVER ====================

@dataclass
class ChunkResult:
    final: np.ndarray
    statuses: List[str]
    iterations: List[int]
    oscillating: List[bool]
    trace: List[TraceStep] = field(default_factory=list)
    # Per iteration: step time and cumulative settled columns of this chunk
    iteration_ms: List[float] = field(default_factory=list)
    settled: List[int] = field(default_factory=list)


def iterate_until_stable(
    shape: NetworkShape,
    bits0: np.ndarray,
    step: StepFn,
    max_iters: Optional[int],
    detect_oscillation: bool,
    trace: bool = False,
) -> ChunkResult:
    """
    Apply `step` until every column is fixed, oscillates with period 2, or
    has changed `max_iters` times (None: uncapped). Converged columns are
    frozen and no longer updated. `iterations` counts state-changing updates.
    """
    K = bits0.shape[1]
    state = bits0.copy()
    statuses = np.full(K, "MaxItersExceeded", dtype=object)
    iterations = np.zeros(K, dtype=np.int64)
    oscillating = np.zeros(K, dtype=bool)
    steps: List[TraceStep] = []
    iteration_ms: List[float] = []
    settled: List[int] = []

    active = np.arange(K)
    before: Optional[np.ndarray] = None
    for t in itertools.count(1):
        if active.size == 0:
            break
        if max_iters is not None and t > max_iters:
            break
        if max_iters is None and t > shape.total + 1:
            # Each changing update removes at least one active neuron
            raise CliqueMemoryError("monotone iteration failed to terminate")
        tick = time.perf_counter()
        current = state[:, active]
        nxt, scores = step(current, active)
        if trace:
            steps.append(TraceStep(iteration=t, scores=scores, state=ActivationBatch(shape, nxt.copy())))
        changed = _changed_columns(current, nxt)
        cycle = np.zeros_like(changed)
        if detect_oscillation and before is not None:
            cycle = changed & ~_changed_columns(before, nxt)
        state[:, active] = nxt
        iterations[active[changed]] += 1
        statuses[active[~changed]] = "Converged"
        oscillating[active[cycle]] = True
        keep = changed & ~cycle
        before = current[:, keep]
        active = active[keep]
        iteration_ms.append((time.perf_counter() - tick) * 1000.0)
        settled.append(K - active.size)
        logger.debug(f"iteration {t}: {int(keep.sum())} columns still moving")

    return ChunkResult(
        final=state,
        statuses=statuses.tolist(),
        iterations=iterations.tolist(),
        oscillating=oscillating.tolist(),
        trace=steps,
        iteration_ms=iteration_ms,
        settled=settled,
    )


def merge_profiles(results: List[ChunkResult]) -> List[IterationProfile]:
    """
    Combine per-chunk profiles iteration by iteration. Times add up; a chunk
    that stopped early keeps contributing its last settled count.
    """
    depth = max((len(r.settled) for r in results), default=0)
    profile = []
    for t in range(depth):
        wall = sum(r.iteration_ms[t] for r in results if t < len(r.iteration_ms))
        settled = sum(r.settled[min(t, len(r.settled) - 1)] for r in results if r.settled)
        profile.append(IterationProfile(iteration=t + 1, wall_ms=wall, settled=settled))
    return profile


ChunkFn = Callable[[np.ndarray, np.ndarray], ChunkResult]


def run_in_chunks(
    rule: RetrievalRule,
    bits0: ActivationBatch,
    config: RetrievalConfig,
    decode: ChunkFn,
) -> RetrievalOutcome:
    """Split columns into chunks, decode them (optionally in threads), reassemble."""
    start = time.perf_counter()
    K = bits0.num_probes
    chunk = 1 if config.mode == "serial" else config.batch_size
    groups = [np.arange(lo, min(lo + chunk, K)) for lo in range(0, K, chunk)]

    def work(columns: np.ndarray) -> ChunkResult:
        return decode(bits0.bits[:, columns], columns)

    if config.workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    final = np.zeros_like(bits0.bits)
    statuses: List[str] = []
    iterations: List[int] = []
    oscillating: List[bool] = []
    trace: List[TraceStep] = []
    for columns, result in zip(groups, results):
        final[:, columns] = result.final
        statuses += result.statuses
        iterations += result.iterations
        oscillating += result.oscillating
        trace += result.trace

    outcome = RetrievalOutcome(
        rule=rule,
        final=ActivationBatch(bits0.shape, final),
        statuses=statuses,
        iterations=iterations,
        oscillating=oscillating,
        wall_ms=(time.perf_counter() - start) * 1000.0,
        trace=trace,
        profile=merge_profiles(results),
    )
    logger.info(
        f"{rule.value}: {K} probes, mean iterations {outcome.mean_iterations:.2f}, "
        f"{outcome.oscillation_count} oscillating, "
        f"{sum(s != 'Converged' for s in statuses)} unconverged, {outcome.wall_ms:.1f} ms"
    )
    return outcome


def trace_requested(config: RetrievalConfig, probes: ActivationBatch) -> bool:
    if config.trace and probes.num_probes != 1:
        logger.warning("trace is recorded for single-probe runs only; ignoring")
        return False
    return config.trace


def run_sum_of_sum(W: WeightMatrix, probes: ActivationBatch, config: RetrievalConfig) -> RetrievalOutcome:
    """Iterate sum-of-sum until fixed point, period-2 oscillation or max_iters."""
    if probes.shape != W.shape:
        raise ShapeError("probes and weight matrix have different shapes")
    trace = trace_requested(config, probes)

    def decode(bits: np.ndarray, _columns: np.ndarray) -> ChunkResult:
        return iterate_until_stable(
            W.shape,
            bits,
            lambda state, _active: _sum_of_sum_bits(W, state, config.gamma),
            config.max_iters,
            config.detect_oscillation,
            trace,
        )

    return run_in_chunks(RetrievalRule.SUM_OF_SUM, probes, config, decode)


def _resolve_source(W: WeightSource, acc: Accelerations) -> WeightSource:
    if acc.sparse:
        return W.sparse_view() if isinstance(W, WeightMatrix) else W
    return densify(W) if isinstance(W, SparseWeightView) else W


def run_sum_of_max(W_sparse: WeightSource, probes: ActivationBatch, config: RetrievalConfig) -> RetrievalOutcome:
    """
    Bail-out-early until fixed point; always converges.

    Args:
        W_sparse: Weight matrix or its compressed column view
        probes: Encoded probes, erased clusters filled with ones
        config: Chunking, worker and acceleration settings; max_iters is not applied

    Returns:
        RetrievalOutcome with every status Converged
    """
    if probes.shape != W_sparse.shape:
        raise ShapeError("probes and weight matrix have different shapes")
    acc = config.accelerations
    incoming = _IncomingBlocks(_resolve_source(W_sparse, acc))
    trace = trace_requested(config, probes)

    def decode(bits: np.ndarray, _columns: np.ndarray) -> ChunkResult:
        return iterate_until_stable(
            W_sparse.shape,
            bits,
            lambda state, _active: (_bail_out_bits(incoming, state, None, acc), None),
            None,
            False,
            trace,
        )

    return run_in_chunks(RetrievalRule.SUM_OF_MAX, probes, config, decode)


def erased_clusters_of(probes: ActivationBatch) -> np.ndarray:
    """(C, K) mask of clusters with no active neuron (erased under the erased->0 policy)."""
    return ~probes.blocks().any(axis=1)


def joint_candidate_pool(W: WeightMatrix, bits: np.ndarray) -> np.ndarray:
    """
    One sum-of-sum scoring pass; in each erased cluster keep exactly the
    neurons receiving C - e signals. Returns the pool (erased rows only).
    """
    shape = W.shape
    erased = ~bits.reshape(shape.clusters, shape.cluster_size, -1).any(axis=1)
    erased_rows = np.repeat(erased, shape.cluster_size, axis=0)
    signals = (W.scoring_matrix() @ bits.astype(np.float32)).astype(np.int32)
    wanted = shape.clusters - erased.sum(axis=0)
    return erased_rows & (signals == wanted[None, :])


def run_joint(
    W: WeightMatrix,
    W_sparse: Optional[SparseWeightView],
    probes: ActivationBatch,
    config: RetrievalConfig,
) -> RetrievalOutcome:
    """
    Joint scheme: one sum-of-sum pass prunes the erased clusters to the
    C - e candidates, then bail-out-early runs on erased clusters only while
    known clusters stay frozen. `iterations` counts bail-out updates.

    Args:
        W: Dense weight matrix, used for the candidate-pool pass
        W_sparse: Compressed column view for the bail-out phase; built on demand if None
        probes: Encoded probes, erased clusters filled with zeros
        config: Chunking, worker and acceleration settings; max_iters is not applied

    Returns:
        RetrievalOutcome over the same columns as `probes`
    """
    if probes.shape != W.shape:
        raise ShapeError("probes and weight matrix have different shapes")
    acc = config.accelerations
    source: WeightSource = (W_sparse or W.sparse_view()) if acc.sparse else W
    incoming = _IncomingBlocks(source)
    shape = W.shape
    trace = trace_requested(config, probes)

    def decode(bits: np.ndarray, _columns: np.ndarray) -> ChunkResult:
        erased = ~bits.reshape(shape.clusters, shape.cluster_size, -1).any(axis=1)
        frozen = ~np.repeat(erased, shape.cluster_size, axis=0)
        start = bits | joint_candidate_pool(W, bits)

        def step(state: np.ndarray, active: np.ndarray) -> Tuple[np.ndarray, None]:
            # Known clusters are frozen, so comparing whole columns only sees erased clusters
            return _bail_out_bits(incoming, state, frozen[:, active], acc), None

        return iterate_until_stable(shape, start, step, None, False, trace)

    return run_in_chunks(RetrievalRule.JOINT, probes, config, decode)

