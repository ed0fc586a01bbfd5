"""Routers module for the Clique Memory Engine."""
from .memory import router as memory_router

__all__ = ["memory_router"]
