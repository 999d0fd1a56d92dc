import json

import pytest
from fastapi.testclient import TestClient

from semgate import cli
from semgate.errors import CorruptSnapshot
from semgate.providers import MockEmbeddingProvider, MockLlmClient, mock_answer
from semgate.service.app import create_app
from semgate.service.config import GatewayConfig, env_overrides, load_config
from semgate.store import ManualClock


def chat(content, **extra):
    return {"model": "gpt-test", "messages": [{"role": "user", "content": content}], **extra}


@pytest.fixture
def llm():
    return MockLlmClient()


@pytest.fixture
def client(llm):
    app = create_app(GatewayConfig(), llm=llm, clock=ManualClock())
    with TestClient(app) as c:
        yield c


def test_miss_then_hit(client, llm):
    r = client.post("/v1/chat/completions", json=chat("How do I reset my password?"))
    assert r.status_code == 200
    assert r.headers["X-Semantic-Cache"] == "miss"
    assert "X-Semantic-Cache-Similarity" not in r.headers
    assert "X-Semantic-Cache-Entry" not in r.headers
    body = r.json()
    assert body["object"] == "chat.completion" and body["model"] == "gpt-test"
    assert body["choices"][0]["message"] == {"role": "assistant", "content": mock_answer("How do I reset my password?")}
    stored = r.headers["X-Semantic-Cache-Stored-Entry"]

    r = client.post("/v1/chat/completions", json=chat("How do I reset my password?"))
    assert r.status_code == 200
    assert r.headers["X-Semantic-Cache"] == "hit"
    assert r.headers["X-Semantic-Cache-Similarity"] == "1.0000"
    assert r.headers["X-Semantic-Cache-Entry"] == stored
    assert r.json()["choices"][0]["message"]["content"] == body["choices"][0]["message"]["content"]
    assert llm.call_count == 1


def test_header_agrees_with_upstream_calls(client, llm):
    for q in ["alpha", "beta", "alpha", "gamma", "beta gamma", "gamma"]:
        before = llm.call_count
        r = client.post("/v1/chat/completions", json=chat(q))
        assert (r.headers["X-Semantic-Cache"] == "miss") == (llm.call_count == before + 1)


@pytest.mark.parametrize(
    "body",
    [
        {"messages": []},
        {},
        {"messages": [{"role": "assistant", "content": "hi"}]},
        {"messages": [{"role": "user", "content": "   "}]},
        {"messages": "nope"},
    ],
)
def test_bad_requests(client, body):
    r = client.post("/v1/chat/completions", json=body)
    assert r.status_code == 400
    assert "error" in r.json()


def test_malformed_json(client):
    r = client.post("/v1/chat/completions", content=b"{oops", headers={"content-type": "application/json"})
    assert r.status_code == 400


def test_passthrough_on_miss(client, llm):
    body = {
        "model": "gpt-4o-mini",
        "temperature": 0.3,
        "messages": [
            {"role": "system", "content": "be brief"},
            {"role": "user", "content": "what is dns", "name": "bob"},
        ],
    }
    client.post("/v1/chat/completions", json=body)
    assert llm.last_request.to_json() == body


def test_upstream_failure_is_502(client, llm):
    llm.fail_with = RuntimeError("down")
    r = client.post("/v1/chat/completions", json=chat("x"))
    assert r.status_code == 502
    assert client.get("/admin/stats").json()["entries"] == 0


def test_embedding_failure_is_503(llm):
    class Broken(MockEmbeddingProvider):
        def embed(self, text):
            raise ValueError("no vectors today")

    with TestClient(create_app(GatewayConfig(), embedder=Broken(), llm=llm)) as c:
        assert c.post("/v1/chat/completions", json=chat("x")).status_code == 503


def test_no_store_bypass(client, llm):
    client.post("/v1/chat/completions", json=chat("q"))
    r = client.post("/v1/chat/completions", json=chat("q"), headers={"Cache-Control": "no-store"})
    assert r.headers["X-Semantic-Cache"] == "bypass"
    assert llm.call_count == 2
    assert client.get("/admin/stats").json()["entries"] == 1


def test_stats_arithmetic(client):
    s = client.get("/admin/stats").json()
    assert (s["hits"], s["misses"], s["hit_rate"]) == (0, 0, 0)
    for q in ["one", "two", "three", "one"]:
        client.post("/v1/chat/completions", json=chat(q))
    s = client.get("/admin/stats").json()
    assert (s["hits"], s["misses"]) == (1, 3)
    assert abs(s["hit_rate"] - 0.25) < 1e-9
    assert abs(s["hit_rate"] - s["hits"] / (s["hits"] + s["misses"])) < 1e-9
    assert s["entries"] == 3 == sum(p["entries"] for p in s["partitions"])
    assert s["partitions"] == [{"dim": 64, "entries": 3}]
    assert s["tombstones"] == 0 and s["threshold"] == 0.8
    assert set(s["latency"]) == {"hit", "miss"}
    assert set(s["latency"]["hit"]) == {"mean", "p50", "p95"}


def test_flush(client):
    assert client.post("/admin/flush").json() == {"removed": 0}
    for i in range(5):
        client.post("/admin/entries", json={"question": f"q{i}", "response": "r"})
    assert client.post("/admin/flush").json() == {"removed": 5}
    client.post("/v1/chat/completions", json=chat("again"))
    assert client.post("/v1/chat/completions", json=chat("again")).headers["X-Semantic-Cache"] == "hit"
    client.post("/admin/flush")
    assert client.post("/v1/chat/completions", json=chat("again")).headers["X-Semantic-Cache"] == "miss"
    assert client.get("/admin/stats").json()["misses"] == 2  # metrics survive flush


def test_threshold_bounds(client):
    r = client.post("/admin/threshold", json={"threshold": 0.6})
    assert r.status_code == 200 and r.json() == {"previous": 0.8, "current": 0.6}
    for bad in (1.5, -0.01):
        r = client.post("/admin/threshold", json={"threshold": bad})
        assert r.status_code == 400
    assert client.post("/admin/threshold", json={}).status_code == 400
    assert client.get("/admin/stats").json()["threshold"] == 0.6


def test_entries_admin(client):
    eid = client.post("/admin/entries", json={"question": "seed q", "response": "seed a", "ttl": 0}).json()["entry_id"]
    got = client.get(f"/admin/entries/{eid}").json()
    assert got["question"] == "seed q" and got["ttl"] == 0
    assert client.get("/admin/entries/999").status_code == 404
    assert client.post("/admin/entries", json={"question": "", "response": "x"}).status_code == 400
    r = client.post("/v1/chat/completions", json=chat("Seed Q?"))
    assert r.headers["X-Semantic-Cache"] == "hit" and r.json()["choices"][0]["message"]["content"] == "seed a"


def test_lifecycle_snapshot_round_trip(tmp_path):
    cfg = GatewayConfig(cache={"snapshot_path": str(tmp_path / "cache.bin")})
    with TestClient(create_app(cfg)) as c:
        for i in range(7):
            c.post("/v1/chat/completions", json=chat(f"topic{i} subject{i}"))
        assert c.get("/admin/stats").json()["entries"] == 7
    assert (tmp_path / "cache.bin").exists()
    with TestClient(create_app(cfg)) as c:
        assert c.get("/admin/stats").json()["entries"] == 7
        assert c.post("/v1/chat/completions", json=chat("topic3 subject3")).headers["X-Semantic-Cache"] == "hit"


def test_start_without_snapshot(tmp_path):
    cfg = GatewayConfig(cache={"snapshot_path": str(tmp_path / "none.bin")})
    with TestClient(create_app(cfg)) as c:
        assert c.get("/admin/stats").json()["entries"] == 0


def test_corrupt_snapshot_aborts(tmp_path, capsys):
    snap = tmp_path / "bad.bin"
    snap.write_bytes(b"SGC1\x01garbage")
    cfg = GatewayConfig(cache={"snapshot_path": str(snap)})
    with pytest.raises(CorruptSnapshot):
        create_app(cfg)
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"cache": {"snapshot_path": str(snap)}}))
    assert cli.main(["serve", "--config", str(cfg_file)]) == 1
    assert "corrupt" in capsys.readouterr().err


def test_config_file_and_env(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"listen": "0.0.0.0:9000", "cache": {"threshold": 0.7}, "hnsw": {"m": 8}}))
    env = {"SEMGATE_CACHE_THRESHOLD": "0.75", "SEMGATE_EMBEDDING_DIM": "128", "SEMGATE_UPSTREAM_API_KEY": "k", "OTHER": "x"}
    cfg = load_config(path, env)
    assert cfg.host_port == ("0.0.0.0", 9000)
    assert cfg.cache.threshold == 0.75 and cfg.embedding.dim == 128 and cfg.upstream.api_key == "k"
    assert cfg.hnsw.params().m == 8
    assert env_overrides({"SEMGATE_HNSW_EF_SEARCH": "32"}) == {"hnsw": {"ef_search": "32"}}
    defaults = load_config(None, {})
    assert defaults.listen == "127.0.0.1:8080" and defaults.cache.purge_interval_secs == 60
    assert defaults.cache.default_ttl_secs == 86400 and defaults.hnsw.m == 16


@pytest.mark.parametrize(
    "raw",
    [{"cache": {"threshold": 1.2}}, {"cache": {"purge_interval_secs": 0}}, {"listen": "nope"}, {"bogus": 1}],
)
def test_config_validation(raw):
    with pytest.raises(ValueError):
        GatewayConfig.model_validate(raw)
