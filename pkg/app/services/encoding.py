"""
Encoding Service - neuron indexing, message/probe encoding and read-off.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import SymbolRangeError
from app.models.activation import ActivationBatch, ActivationVector
from app.models.network import Extraction, Message, NetworkShape, Probe
from app.models.retrieval import FillPolicy

logger = logging.getLogger(__name__)

ERASED_TOKEN = "?"


def neuron_index(shape: NetworkShape, cluster: int, local: int) -> int:
    """1-based neuron index (cluster - 1) * L + local."""
    shape.check_cluster(cluster)
    if not 1 <= local <= shape.cluster_size:
        raise SymbolRangeError(f"local index {local} outside 1..{shape.cluster_size}")
    return (cluster - 1) * shape.cluster_size + local


def neuron_position(shape: NetworkShape, index: int) -> Tuple[int, int]:
    """Inverse of neuron_index: (cluster, local) for a 1-based index."""
    if not 1 <= index <= shape.total:
        raise SymbolRangeError(f"neuron index {index} outside 1..{shape.total}")
    cluster, local = divmod(index - 1, shape.cluster_size)
    return cluster + 1, local + 1


def message_rows(shape: NetworkShape, symbols: np.ndarray) -> np.ndarray:
    """0-based row indices of the active neurons for a (count, C) symbol array."""
    offsets = np.arange(shape.clusters) * shape.cluster_size
    return offsets + (np.asarray(symbols) - 1)


def encode_message(shape: NetworkShape, message: Message) -> ActivationVector:
    """Activate exactly one neuron per cluster."""
    shape.check_message(message)
    bits = np.zeros(shape.total, dtype=np.uint8)
    bits[message_rows(shape, np.asarray(message.symbols))] = 1
    return ActivationVector(shape, bits)


def _probe_bits(shape: NetworkShape, probe: Probe, fill: FillPolicy) -> np.ndarray:
    shape.check_probe(probe)
    blocks = np.zeros((shape.clusters, shape.cluster_size), dtype=bool)
    for c, symbol in enumerate(probe.slots):
        if symbol is None:
            blocks[c, :] = fill == FillPolicy.ERASED_ON
        else:
            blocks[c, symbol - 1] = True
    return blocks.reshape(-1)


def encode_probe(shape: NetworkShape, probe: Probe, fill: FillPolicy) -> ActivationVector:
    """Known clusters get one active neuron; erased clusters are all-0 or all-1 per fill."""
    return ActivationVector(shape, _probe_bits(shape, probe, fill).astype(np.uint8))


def encode_probes(shape: NetworkShape, probes: Sequence[Probe], fill: FillPolicy) -> ActivationBatch:
    """Encode K probes as the columns of one batch."""
    bits = np.zeros((shape.total, len(probes)), dtype=bool)
    for k, probe in enumerate(probes):
        bits[:, k] = _probe_bits(shape, probe, fill)
    return ActivationBatch(shape, bits)


def encode_erasures(
    shape: NetworkShape,
    symbols: np.ndarray,
    erased: np.ndarray,
    fill: FillPolicy,
) -> ActivationBatch:
    """
    Bulk form of encode_probes: `symbols` is (K, C) 1-based, `erased` is a
    (K, C) mask of erased clusters.
    """
    K = symbols.shape[0]
    blocks = np.zeros((shape.clusters, shape.cluster_size, K), dtype=bool)
    clusters, probes = np.nonzero(~erased.T)
    blocks[clusters, symbols[probes, clusters] - 1, probes] = True
    if fill == FillPolicy.ERASED_ON:
        blocks |= erased.T[:, None, :]
    return ActivationBatch(shape, blocks.reshape(shape.total, K))


def erased_mask(shape: NetworkShape, probes: Sequence[Probe]) -> np.ndarray:
    """(C, K) boolean mask, True where probe k erased cluster c."""
    mask = np.zeros((shape.clusters, len(probes)), dtype=bool)
    for k, probe in enumerate(probes):
        for c in probe.erased_clusters:
            mask[c - 1, k] = True
    return mask


def extract_messages(shape: NetworkShape, vector: ActivationVector) -> Extraction:
    """
    Read messages off a converged state.

    Returns a unique message when every cluster has one active neuron, the
    per-cluster candidate sets when some cluster has several, and an empty
    extraction as soon as any cluster is silent.
    """
    blocks = vector.bits.reshape(shape.clusters, shape.cluster_size)
    candidates = tuple(tuple(int(l) + 1 for l in np.flatnonzero(row)) for row in blocks)
    if any(len(c) == 0 for c in candidates):
        return Extraction(kind="empty")
    if all(len(c) == 1 for c in candidates):
        message = Message(symbols=tuple(c[0] for c in candidates))
        return Extraction(kind="unique", message=message, candidates=candidates)
    return Extraction(kind="ambiguous", candidates=candidates)


def sample_message(extraction: Extraction, rng: np.random.Generator) -> Optional[Message]:
    """Pick one interpretation uniformly per cluster from an extraction."""
    if extraction.kind == "empty":
        return None
    if extraction.kind == "unique":
        return extraction.message
    return Message(symbols=tuple(int(rng.choice(c)) for c in extraction.candidates))


def parse_message(text: str) -> Message:
    """Parse '9,4,3,10' into a Message."""
    tokens = [t.strip() for t in text.strip().split(",")]
    if ERASED_TOKEN in tokens:
        raise SymbolRangeError(f"message {text!r} contains an erased slot")
    try:
        return Message(symbols=tuple(int(t) for t in tokens))
    except ValueError as e:
        raise SymbolRangeError(f"invalid message {text!r}: {e}") from e


def parse_probe(text: str) -> Probe:
    """Parse '9,4,?,10' into a Probe."""
    slots: List[Optional[int]] = []
    for token in (t.strip() for t in text.strip().split(",")):
        if token == ERASED_TOKEN:
            slots.append(None)
            continue
        try:
            slots.append(int(token))
        except ValueError as e:
            raise SymbolRangeError(f"invalid probe token {token!r}") from e
    try:
        return Probe(slots=tuple(slots))
    except ValueError as e:
        raise SymbolRangeError(f"invalid probe {text!r}: {e}") from e


def read_messages(path: str | Path) -> List[Message]:
    """One message per line; blank lines and '#' comments are skipped."""
    messages = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            messages.append(parse_message(line))
    logger.info(f"Read {len(messages)} messages from {path}")
    return messages


def read_probes(lines: Iterable[str]) -> List[Probe]:
    return [parse_probe(line) for line in lines if line.strip() and not line.startswith("#")]


def format_probe(probe: Probe) -> str:
    """Inverse of parse_probe."""
    return str(probe)
