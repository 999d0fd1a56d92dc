"""HTTP front end: a chat-completions endpoint backed by the semantic cache, plus admin routes."""
from __future__ import annotations

import asyncio
import contextlib
import logging
import time
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..engine import EngineConfig, SemanticCacheEngine
from ..errors import EmbeddingFailed, EmptyText, OutOfRange, UpstreamFailed
from ..providers import (
    ChatMessage,
    ChatRequest,
    EmbeddingProvider,
    EndpointConfig,
    LlmClient,
    MockEmbeddingProvider,
    MockLlmClient,
    RemoteEmbeddingProvider,
    RemoteLlmClient,
)
from ..store import Clock, SemanticStore
from .config import GatewayConfig
from .schemas import (
    AssistantMessage,
    ChatCompletionRequest,
    ChatCompletionResponse,
    Choice,
    EntryCreate,
    EntryCreated,
    EntryInfo,
    FlushResponse,
    LatencyBlock,
    LatencyStats,
    PartitionInfo,
    StatsResponse,
    ThresholdRequest,
    ThresholdResponse,
)

log = logging.getLogger(__name__)

HEADER_CACHE = "X-Semantic-Cache"
HEADER_SIMILARITY = "X-Semantic-Cache-Similarity"
HEADER_ENTRY = "X-Semantic-Cache-Entry"
HEADER_STORED = "X-Semantic-Cache-Stored-Entry"


def make_embedder(config: GatewayConfig) -> EmbeddingProvider:
    emb = config.embedding
    if emb.kind == "mock":
        return MockEmbeddingProvider(emb.dim)
    return RemoteEmbeddingProvider(
        EndpointConfig(
            base_url=emb.base_url,
            api_key=emb.api_key if emb.api_key is not None else config.upstream.api_key,
            model=emb.model,
            dim=emb.dim,
            timeout=emb.timeout_secs,
        )
    )


def make_llm(config: GatewayConfig) -> LlmClient:
    up = config.upstream
    if up.kind == "mock":
        return MockLlmClient(delay=up.mock_delay_ms / 1000.0)
    return RemoteLlmClient(EndpointConfig(base_url=up.base_url, api_key=up.api_key, timeout=up.timeout_secs))


def build_engine(
    config: GatewayConfig,
    *,
    embedder: Optional[EmbeddingProvider] = None,
    llm: Optional[LlmClient] = None,
    clock: Optional[Clock] = None,
) -> SemanticCacheEngine:
    """Wire store, providers and engine; loads the snapshot when one exists.

    Raises ``CorruptSnapshot`` for an unreadable snapshot so startup aborts.
    """
    cache = config.cache
    params = config.hnsw.params()
    snap = Path(cache.snapshot_path) if cache.snapshot_path else None
    if snap is not None and snap.exists():
        store = SemanticStore.snapshot_load(snap, params, clock, default_ttl=cache.default_ttl_secs)
        log.info("loaded %d entries from %s", len(store), snap)
    else:
        store = SemanticStore(params, clock, default_ttl=cache.default_ttl_secs)
    return SemanticCacheEngine(
        store,
        embedder or make_embedder(config),
        llm or make_llm(config),
        EngineConfig(similarity_threshold=cache.threshold, top_k=cache.top_k),
    )


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    config: Optional[GatewayConfig] = None,
    *,
    engine: Optional[SemanticCacheEngine] = None,
    embedder: Optional[EmbeddingProvider] = None,
    llm: Optional[LlmClient] = None,
    clock: Optional[Clock] = None,
) -> FastAPI:
    config = config or GatewayConfig()
    if engine is None:
        engine = build_engine(config, embedder=embedder, llm=llm, clock=clock)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        async def purge_loop():
            while True:
                await asyncio.sleep(config.cache.purge_interval_secs)
                removed = await run_in_threadpool(engine.store.purge_expired)
                if removed:
                    log.info("purged %d expired entries", removed)

        task = asyncio.create_task(purge_loop())
        try:
            yield
        finally:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task
            if config.cache.snapshot_path:
                n = engine.store.snapshot_save(config.cache.snapshot_path)
                log.info("wrote snapshot %s (%d bytes)", config.cache.snapshot_path, n)

    app = FastAPI(title="semgate", lifespan=lifespan)
    app.state.engine = engine
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return _error(400, str(exc.errors()[0].get("msg", "invalid request")) if exc.errors() else "invalid request")

    @app.post("/v1/chat/completions", response_model=ChatCompletionResponse)
    def chat_completions(body: ChatCompletionRequest, request: Request, response: Response):
        extra = dict(body.model_extra or {})
        upstream_req = ChatRequest(
            model=body.model,
            messages=[ChatMessage(m.role, m.content, dict(m.model_extra or {})) for m in body.messages],
            extra=extra,
        )
        question = body.messages[-1].content
        bypass = "no-store" in request.headers.get("cache-control", "").lower()
        try:
            if bypass:
                outcome = engine.forward(question, upstream_req)
            else:
                outcome = engine.handle_query(question, request=upstream_req)
        except EmptyText as exc:
            return _error(400, str(exc))
        except EmbeddingFailed as exc:
            return _error(503, f"embedding provider failed: {exc}")
        except UpstreamFailed as exc:
            return _error(502, f"upstream failed: {exc}")

        if bypass:
            response.headers[HEADER_CACHE] = "bypass"
        elif outcome.hit:
            response.headers[HEADER_CACHE] = "hit"
            response.headers[HEADER_SIMILARITY] = f"{outcome.similarity:.4f}"
            response.headers[HEADER_ENTRY] = str(outcome.matched_entry)
        else:
            response.headers[HEADER_CACHE] = "miss"
            response.headers[HEADER_STORED] = str(outcome.stored_entry)
        return ChatCompletionResponse(
            id=f"chatcmpl-{uuid.uuid4().hex}",
            created=int(time.time()),
            model=body.model,
            choices=[Choice(message=AssistantMessage(content=outcome.response))],
        )

    @app.get("/admin/stats", response_model=StatsResponse)
    def stats():
        m = engine.metrics_snapshot()
        st = engine.store.stats()
        return StatsResponse(
            hits=m.hits,
            misses=m.misses,
            hit_rate=m.hit_rate,
            entries=st.entries,
            tombstones=st.tombstones,
            partitions=[PartitionInfo(dim=p.dim, entries=p.entries) for p in st.partitions],
            latency=LatencyBlock(
                hit=LatencyStats(mean=m.hit_latency.mean, p50=m.hit_latency.p50, p95=m.hit_latency.p95),
                miss=LatencyStats(mean=m.miss_latency.mean, p50=m.miss_latency.p50, p95=m.miss_latency.p95),
            ),
            threshold=engine.threshold,
            upstream_calls=engine.llm.call_count,
        )

    @app.post("/admin/flush", response_model=FlushResponse)
    def flush():
        return FlushResponse(removed=engine.store.flush())

    @app.post("/admin/threshold", response_model=ThresholdResponse)
    def set_threshold(body: ThresholdRequest):
        try:
            previous = engine.set_threshold(body.threshold)
        except OutOfRange as exc:
            return _error(400, str(exc))
        return ThresholdResponse(previous=previous, current=engine.threshold)

    @app.post("/admin/entries", response_model=EntryCreated)
    def add_entry(body: EntryCreate):
        try:
            vec = engine.embed(body.question)
        except EmptyText as exc:
            return _error(400, str(exc))
        except EmbeddingFailed as exc:
            return _error(503, f"embedding provider failed: {exc}")
        return EntryCreated(entry_id=engine.store.put(body.question, vec, body.response, body.ttl))

    @app.get("/admin/entries/{entry_id}", response_model=EntryInfo)
    def get_entry(entry_id: int):
        entry = engine.store.get(entry_id)
        if entry is None or entry.expired(engine.store.clock.now_ms()):
            return _error(404, f"no entry {entry_id}")
        return EntryInfo(
            entry_id=entry.entry_id,
            question=entry.question,
            response=entry.response,
            created_at=entry.created_at,
            ttl=entry.ttl,
        )

    return app
