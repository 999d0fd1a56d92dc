import numpy as np
import pytest

from semgate.engine import EngineConfig, SemanticCacheEngine
from semgate.providers import MockEmbeddingProvider, MockLlmClient
from semgate.store import ManualClock, SemanticStore


def unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def make_engine(clock):
    def build(threshold=0.8, delay=0.0, sleep=None, timer=None, **store_kw):
        store = SemanticStore(clock=clock, **store_kw)
        llm = MockLlmClient(delay=delay, **({"sleep": sleep} if sleep else {}))
        kw = {"timer": timer} if timer else {}
        return SemanticCacheEngine(store, MockEmbeddingProvider(), llm, EngineConfig(similarity_threshold=threshold), **kw)

    return build
