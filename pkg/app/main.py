"""
Clique Memory Engine
FastAPI application entry point.
"""
import logging
from contextlib import asynccontextmanager
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import get_settings
from app.services.engine import MemoryEngine
from app.services.storage import load

# Configure logging
logging.basicConfig(
    level=get_settings().log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Load the weight matrix once; the service never writes to it."""
    settings = get_settings()

    # Startup
    logger.info("Starting Clique Memory Engine...")
    app.state.engine = None
    if settings.weights_path:
        try:
            app.state.engine = MemoryEngine(load(settings.weights_path), settings)
            logger.info(f"Loaded weights from {settings.weights_path}")
        except Exception as e:
            logger.error(f"Loading weights from {settings.weights_path} failed: {e}")
            raise
    else:
        logger.warning("CLIQUE_WEIGHTS_PATH not set; memory endpoints will return 503")

    logger.info(f"Clique Memory Engine {settings.app_version} is ready")

    yield

    # Shutdown
    logger.info("Shutting down Clique Memory Engine...")
    app.state.engine = None
    logger.info("Shutdown complete")


# Initialize FastAPI application
app = FastAPI(
    title="Clique Memory Engine",
    description=(
        "Clustered binary associative memory. "
        "Stores messages as cliques and retrieves them from partial probes."
    ),
    version=get_settings().app_version,
    lifespan=lifespan,
    docs_url="/api/docs",
    redoc_url="/api/redoc",
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
from app.routers import memory
app.include_router(memory.router)


@app.get("/")
async def root():
    """Health check endpoint."""
    settings = get_settings()
    return {
        "service": settings.app_name,
        "version": settings.app_version,
        "status": "operational",
    }


@app.get("/health")
async def health_check():
    """Detailed health check with the loaded network."""
    settings = get_settings()
    engine = getattr(app.state, "engine", None)
    network = "not loaded"
    if engine is not None:
        network = f"C={engine.W.shape.clusters} L={engine.W.shape.cluster_size} stored={engine.W.stored_count}"

    return {
        "service": settings.app_name,
        "version": settings.app_version,
        "status": "healthy" if engine is not None else "degraded",
        "dependencies": {
            "weights": network,
        }
    }


if __name__ == "__main__":
    import uvicorn

    settings = get_settings()
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=settings.debug,
        log_level="info"
    )
