"""Acceptance checks.  Each test prints one PASS/FAIL line with the measured value.

Run standalone with ``python tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from semgate.ann_index import HnswIndex, HnswParams, recall_at_k
from semgate.engine import EngineConfig, SemanticCacheEngine
from semgate.harness.dataset import CATEGORIES, generate_synthetic, paraphrase_counts
from semgate.harness.replay import EmbeddedTarget, Provenance, SimulatedClock, populate, replay, sweep_threshold, threshold_range
from semgate.providers import MockEmbeddingProvider, MockLlmClient
from semgate.service.app import create_app
from semgate.service.config import GatewayConfig
from semgate.store import ManualClock, SemanticStore

TABLE_FRACTIONS = [0.670, 0.670, 0.688, 0.616]
FIXTURE_SEED = 7


@pytest.fixture
def verdict(capsys):
    def emit(number: int, label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, detail

    return emit


def unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def build_index(vectors, params=None):
    idx = HnswIndex(vectors.shape[1], params or HnswParams(m=16, ef_construction=200))
    for v in vectors:
        idx.insert(v)
    return idx


def mock_engine(clock=None, delay=0.0, sleep=None, timer=None, threshold=0.8):
    llm = MockLlmClient(delay=delay, **({"sleep": sleep} if sleep else {}))
    kw = {"timer": timer} if timer else {}
    return SemanticCacheEngine(
        SemanticStore(clock=clock), MockEmbeddingProvider(), llm, EngineConfig(similarity_threshold=threshold), **kw
    )


@pytest.fixture(scope="module")
def mixed_fixture():
    return generate_synthetic(500, 500, TABLE_FRACTIONS, seed=FIXTURE_SEED)


def run_replay(engine, seeds, tests, threshold=0.8):
    target = EmbeddedTarget(engine)
    prov = Provenance()
    populate(seeds, target, prov)
    return target, replay(tests, target, provenance=prov, threshold=threshold)


@pytest.fixture(scope="module")
def mixed_report(mixed_fixture):
    clk = SimulatedClock()
    engine = mock_engine(delay=0.3, sleep=clk.sleep, timer=clk)
    _, rep = run_replay(engine, *mixed_fixture)
    return rep


def test_criterion_01_ann_recall(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    idx = build_index(unit_rows(rng, 10_000, 64))
    queries = unit_rows(rng, 200, 64)
    recall = float(np.mean([recall_at_k(idx.search(q, 10), idx.brute_force_search(q, 10)) for q in queries]))
    elapsed = time.perf_counter() - start
    verdict(1, "recall@10 on 10k x 64", recall >= 0.95 and elapsed < 60, f"recall {recall:.4f} (>= 0.95), {elapsed:.1f}s (< 60s)")


def test_criterion_02_sublinear_cost(verdict):
    rng = np.random.default_rng(99)
    queries = unit_rows(rng, 200, 64)

    def mean_cost(n):
        idx = build_index(unit_rows(rng, n, 64))
        before = idx.stats().distance_count
        for q in queries:
            idx.search(q, 10)
        return (idx.stats().distance_count - before) / len(queries)

    small, large = mean_cost(1024), mean_cost(16_384)
    ratio = large / small
    verdict(2, "distance evaluations 16384 vs 1024", ratio < 5, f"{large:.0f} / {small:.0f} = {ratio:.2f}x (< 5x)")


def test_criterion_03_hit_rate_reproduction(verdict, mixed_fixture, mixed_report):
    counts = paraphrase_counts(mixed_fixture[1])
    parts, ok = [], True
    for _, name in CATEGORIES:
        truth = counts[name]["paraphrases"] / counts[name]["tests"]
        got = mixed_report.category(name).hit_rate
        ok &= abs(got - truth) <= 0.02
        parts.append(f"{got:.3f} vs {truth:.3f}")
    verdict(3, "per-category hit rate vs paraphrase fraction (+-0.02)", ok, "; ".join(parts))


def test_criterion_04_positive_accuracy(verdict, mixed_report):
    seeds, tests = generate_synthetic(500, 500, 1.0, seed=FIXTURE_SEED)
    _, ideal = run_replay(mock_engine(), seeds, tests)
    p1 = ideal.total.positive_rate
    mixed = mixed_report.total.positive_rate
    verdict(4, "positive rate", p1 == 1.0 and mixed >= 0.97, f"p=1 fixture {p1:.4f} (== 1), mixed {mixed:.4f} (>= 0.97)")


def test_criterion_05_threshold_sweep(verdict, mixed_fixture):
    seeds, tests = mixed_fixture
    results = sweep_threshold(tests, seeds, EmbeddedTarget(mock_engine()), threshold_range(0.6, 0.9, 0.05))
    rates = [r.total.hit_rate for _, r in results]
    violations = sum(b > a for a, b in zip(rates, rates[1:]))
    pos = {t: r.total.positive_rate for t, r in results}
    ok = len(results) == 7 and violations == 0 and pos[0.8] >= pos[0.6]
    verdict(
        5,
        "sweep 0.60..0.90",
        ok,
        f"{len(results)} reports, hit rates {[round(x, 3) for x in rates]}, {violations} violations, "
        f"positive@0.8 {pos[0.8]:.3f} >= positive@0.6 {pos[0.6]:.3f}",
    )


def test_criterion_06_conservation(verdict, mixed_fixture):
    seeds, tests = mixed_fixture
    ok, details = True, []
    for parallel in (1, 8):
        target = EmbeddedTarget(mock_engine())
        prov = Provenance()
        populate(seeds, target, prov)
        rep = replay(tests, target, provenance=prov, parallel=parallel, measure_uncached=False)
        t = rep.total
        ok &= rep.upstream_calls == t.api_calls and t.cache_hits + t.api_calls == t.queries
        ok &= all(c.cache_hits + c.api_calls == c.queries for c in rep.categories)
        details.append(f"parallel={parallel}: calls {rep.upstream_calls} == api_calls {t.api_calls}, {t.cache_hits}+{t.api_calls} == {t.queries}")
    verdict(6, "hit purity and conservation", ok, "; ".join(details))


def test_criterion_07_ttl(verdict):
    clock = ManualClock()
    engine = mock_engine(clock=clock)
    engine.handle_query("how long does shipping take", ttl=1)
    clock.advance(0.5)
    hit_early = engine.handle_query("how long does shipping take").hit
    clock.advance(1.5)
    vec = engine.embed("how long does shipping take")
    visible_late = bool(engine.store.nearest(vec, 1))
    removed = engine.store.purge_expired()
    ok = hit_early and not visible_late and removed >= 1
    verdict(7, "ttl=1s", ok, f"hit at +0.5s {hit_early}, miss at +2s {not visible_late}, purged {removed}")


def test_criterion_08_latency(verdict, mixed_report):
    cached, uncached = mixed_report.cached_latency.mean, mixed_report.uncached_latency.mean
    ratio = cached / uncached
    verdict(8, "mean latency cached vs uncached (300ms mock LLM)", ratio <= 0.5,
            f"{cached * 1000:.1f}ms / {uncached * 1000:.1f}ms = {ratio:.3f} (<= 0.5)")


def test_criterion_09_snapshot_round_trip(verdict, tmp_path, mixed_fixture):
    seeds, tests = mixed_fixture
    clock = ManualClock()
    before = mock_engine(clock=clock)
    populate(seeds, EmbeddedTarget(before))
    n = len(before.store)
    path = tmp_path / "cache.bin"
    before.store.snapshot_save(path)
    after = SemanticCacheEngine(SemanticStore.snapshot_load(path, clock=clock), MockEmbeddingProvider(), MockLlmClient())
    loaded = len(after.store)
    queries = [t.query for t in tests[:100]]
    seq_a = [before.handle_query(q).hit for q in queries]
    seq_b = [after.handle_query(q).hit for q in queries]
    ok = n == 2000 and loaded == n and seq_a == seq_b
    verdict(9, "snapshot round trip", ok, f"entries {n} -> {loaded}, 100-query sequences identical {seq_a == seq_b} ({sum(seq_a)} hits)")


def test_criterion_10_gateway(verdict):
    llm = MockLlmClient()
    checks = {}
    with TestClient(create_app(GatewayConfig(), llm=llm)) as c:
        body = {"model": "m", "messages": [{"role": "user", "content": "where is my order"}]}
        r1 = c.post("/v1/chat/completions", json=body)
        checks["miss"] = r1.status_code == 200 and r1.headers.get("X-Semantic-Cache") == "miss"
        r2 = c.post("/v1/chat/completions", json=body)
        checks["hit"] = (
            r2.status_code == 200
            and r2.headers.get("X-Semantic-Cache") == "hit"
            and r2.headers.get("X-Semantic-Cache-Similarity") == "1.0000"
            and r2.headers.get("X-Semantic-Cache-Entry") == r1.headers.get("X-Semantic-Cache-Stored-Entry")
            and llm.call_count == 1
        )
        checks["400"] = c.post("/v1/chat/completions", json={"messages": []}).status_code == 400
        for q in ["refund policy", "track parcel"]:
            c.post("/v1/chat/completions", json={"messages": [{"role": "user", "content": q}]})
        s = c.get("/admin/stats").json()
        checks["stats"] = (s["hits"], s["misses"]) == (1, 3) and abs(s["hit_rate"] - 0.25) < 1e-9 and s["entries"] == 3
        checks["flush"] = c.post("/admin/flush").json() == {"removed": 3} and c.get("/admin/stats").json()["entries"] == 0
        t_ok = c.post("/admin/threshold", json={"threshold": 0.6}).json() == {"previous": 0.8, "current": 0.6}
        checks["threshold"] = t_ok and c.post("/admin/threshold", json={"threshold": 1.5}).status_code == 400
    verdict(10, "gateway golden checks", all(checks.values()), ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
