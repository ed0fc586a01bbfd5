"""Shared fixtures: the four-message reference network and small random networks."""
import os
import pytest
from hypothesis import HealthCheck, settings

from app.core.config import get_settings
from app.models.network import Message, NetworkShape
from app.services.storage import WeightMatrix, build
from tests.strategies import random_network

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

REFERENCE_MESSAGES = [(1, 1, 1), (2, 2, 1), (3, 2, 1), (1, 3, 1)]


@pytest.fixture
def reference_shape() -> NetworkShape:
    return NetworkShape(clusters=3, cluster_size=3)


@pytest.fixture
def reference_network(reference_shape: NetworkShape) -> WeightMatrix:
    """C=3, L=3 network holding (1,1,1), (2,2,1), (3,2,1), (1,3,1)."""
    return build(reference_shape, [Message(symbols=m) for m in REFERENCE_MESSAGES])


@pytest.fixture
def small_network():
    return random_network(clusters=4, cluster_size=8, stored=12, seed=7)


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    """Isolate tests from a developer's .env and CLIQUE_* variables."""
    for key in [k for k in os.environ if k.startswith("CLIQUE_")]:
        monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
