"""
Memory Router - read-only recognition and retrieval over the loaded network.
"""
import logging
from typing import Optional

from fastapi import APIRouter, Depends, HTTPException, Request, status
from pydantic import ValidationError

from app.core.exceptions import CliqueMemoryError
from app.models.api import (
    NetworkInfo,
    ProbeResult,
    RecognizeRequest,
    RecognizeResponse,
    RetrieveRequest,
    RetrieveResponse,
)
from app.services.encoding import parse_message, parse_probe
from app.services.engine import MemoryEngine

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/v1", tags=["memory"])


def get_engine(request: Request) -> MemoryEngine:
    """Dependency returning the engine loaded at startup."""
    engine: Optional[MemoryEngine] = getattr(request.app.state, "engine", None)
    if engine is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No weight matrix loaded; set CLIQUE_WEIGHTS_PATH",
        )
    return engine


@router.get("/network", response_model=NetworkInfo)
async def network_info(engine: MemoryEngine = Depends(get_engine)):
    """Shape and fill of the loaded network."""
    W = engine.W
    return NetworkInfo(
        clusters=W.shape.clusters,
        cluster_size=W.shape.cluster_size,
        neurons=W.shape.total,
        stored_count=W.stored_count,
        edge_count=W.edge_count(),
    )


@router.post("/recognize", response_model=RecognizeResponse)
async def recognize_message(request: RecognizeRequest, engine: MemoryEngine = Depends(get_engine)):
    """True iff every pair of the message's neurons is connected."""
    try:
        message = parse_message(request.message)
        recognized = engine.recognize(message)
    except CliqueMemoryError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
    logger.info(f"Recognize {message}: {recognized}")
    return RecognizeResponse(message=str(message), recognized=recognized)


@router.post("/retrieve", response_model=RetrieveResponse)
async def retrieve_messages(request: RetrieveRequest, engine: MemoryEngine = Depends(get_engine)):
    """
    Decode partially erased probes with the requested rule.

    Every probe is read off its final state: unique, ambiguous (with the
    per-cluster candidates) or empty. With `sample`, each probe also gets one
    message drawn from its candidates using `seed`.
    """
    try:
        probes = [parse_probe(p) for p in request.probes]
        config = engine.make_config(
            rule=request.rule,
            gamma=request.gamma,
            max_iters=request.max_iters,
            theta=request.theta,
            seed=request.seed,
        )
        outcome, extractions = engine.decode(probes, config)
        picks = engine.sample(extractions, config) if request.sample else [None] * len(probes)
    except (CliqueMemoryError, ValidationError) as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
    except Exception as e:
        logger.error(f"Retrieval failed: {e}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Retrieval failed: {str(e)}",
        )

    results = []
    for k, (probe, extraction, pick) in enumerate(zip(probes, extractions, picks)):
        results.append(ProbeResult(
            probe=str(probe),
            status=outcome.statuses[k],
            oscillating=outcome.oscillating[k],
            iterations=outcome.iterations[k],
            kind=extraction.kind,
            message=str(extraction.message) if extraction.message else None,
            candidates=[list(c) for c in extraction.candidates],
            sampled=str(pick) if pick else None,
            state=outcome.final.column(k).to_string(),
        ))
    logger.info(
        f"Retrieved {len(probes)} probes with {config.rule.value}: "
        f"{sum(r.kind == 'unique' for r in results)} unique in {outcome.wall_ms:.1f} ms"
    )
    return RetrieveResponse(rule=config.rule, gamma=config.gamma, results=results, wall_ms=outcome.wall_ms)
