"""Query handling: embed, search, threshold, then serve from cache or call the LLM."""
from __future__ import annotations

import copy
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import EmbeddingFailed, EmptyText, OutOfRange, SemgateError, UpstreamFailed
from .providers import ChatRequest, EmbeddingProvider, LlmClient
from .store import SemanticStore
from .vectorops import normalize

DEFAULT_THRESHOLD = 0.8
DEFAULT_TOP_K = 5
HIST_BUCKETS = 20  # width 0.05 over [0, 1]


@dataclass
class EngineConfig:
    similarity_threshold: float = DEFAULT_THRESHOLD
    top_k: int = DEFAULT_TOP_K
    default_ttl: Optional[int] = None  # None -> the store's default
    model: str = "default"

    def __post_init__(self):
        check_threshold(self.similarity_threshold)
        if self.top_k < 1:
            raise ValueError("top_k must be positive")


def check_threshold(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise OutOfRange(f"threshold {t} outside [0, 1]")
    return t


@dataclass
class LookupOutcome:
    kind: str  # "hit" | "miss"
    response: str
    elapsed: float
    upstream_called: bool
    similarity: Optional[float] = None
    matched_entry: Optional[int] = None
    matched_question: Optional[str] = None
    stored_entry: Optional[int] = None  # entry created by a miss

    @property
    def hit(self) -> bool:
        return self.kind == "hit"


@dataclass
class LatencySummary:
    samples: List[float] = field(default_factory=list)

    def add(self, seconds: float) -> None:
        self.samples.append(seconds)

    @property
    def count(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples)) if self.samples else 0.0

    def percentile(self, p: float) -> float:
        return float(np.percentile(self.samples, p)) if self.samples else 0.0

    @property
    def p50(self) -> float:
        return self.percentile(50)

    @property
    def p95(self) -> float:
        return self.percentile(95)

    def as_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "p50": self.p50, "p95": self.p95}


def similarity_bucket(sim: float) -> int:
    return min(max(int(np.floor(sim / 0.05)), 0), HIST_BUCKETS - 1)


@dataclass
class EngineMetrics:
    hits: int = 0
    misses: int = 0
    hit_latency: LatencySummary = field(default_factory=LatencySummary)
    miss_latency: LatencySummary = field(default_factory=LatencySummary)
    similarity_histogram: List[int] = field(default_factory=lambda: [0] * HIST_BUCKETS)

    @property
    def total(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.total if self.total else 0.0


class SemanticCacheEngine:
    def __init__(
        self,
        store: SemanticStore,
        embedder: EmbeddingProvider,
        llm: LlmClient,
        config: Optional[EngineConfig] = None,
        timer: Callable[[], float] = time.perf_counter,
    ):
        self.store = store
        self.embedder = embedder
        self.llm = llm
        self.config = config or EngineConfig()
        self.timer = timer
        self._metrics = EngineMetrics()
        self._lock = threading.Lock()

    @property
    def threshold(self) -> float:
        return self.config.similarity_threshold

    def set_threshold(self, t: float) -> float:
        t = check_threshold(t)
        with self._lock:
            previous = self.config.similarity_threshold
            self.config.similarity_threshold = t
        return previous

    def embed(self, question: str) -> np.ndarray:
        try:
            return normalize(self.embedder.embed(question))
        except EmptyText:
            raise
        except (SemgateError, ValueError) as exc:
            raise EmbeddingFailed(str(exc)) from exc

    def handle_query(
        self,
        question: str,
        ttl: Optional[int] = None,
        request: Optional[ChatRequest] = None,
    ) -> LookupOutcome:
        """Answer ``question`` from cache when a stored query is similar enough.

        ``request`` is what gets forwarded upstream on a miss; by default a
        single-message chat request for ``question``.  A hit never calls the
        LLM and never writes to the store; a failed upstream call writes
        nothing either.
        """
        if not question or not question.strip():
            raise EmptyText("question must be non-empty")
        start = self.timer()
        q = self.embed(question)
        threshold = self.threshold
        candidates = self.store.nearest(q, self.config.top_k)
        best = candidates[0] if candidates else None

        if best is not None and best[1] >= threshold:
            entry, sim = best
            outcome = LookupOutcome(
                kind="hit",
                response=entry.response,
                elapsed=self.timer() - start,
                upstream_called=False,
                similarity=sim,
                matched_entry=entry.entry_id,
                matched_question=entry.question,
            )
        else:
            req = request or ChatRequest.for_question(question, self.config.model)
            try:
                reply = self.llm.complete(req)
            except Exception as exc:
                raise UpstreamFailed(str(exc)) from exc
            if ttl is None:
                ttl = self.config.default_ttl
            entry_id = self.store.put(question, q, reply.content, ttl)
            outcome = LookupOutcome(
                kind="miss",
                response=reply.content,
                elapsed=self.timer() - start,
                upstream_called=True,
                similarity=best[1] if best else None,
                stored_entry=entry_id,
            )
        self._record(outcome)
        return outcome

    def forward(self, question: str, request: Optional[ChatRequest] = None) -> LookupOutcome:
        """Call the LLM directly with no lookup and no store write.

        Used for the no-cache baseline; not counted in hit/miss metrics.
        """
        start = self.timer()
        req = request or ChatRequest.for_question(question, self.config.model)
        try:
            reply = self.llm.complete(req)
        except Exception as exc:
            raise UpstreamFailed(str(exc)) from exc
        return LookupOutcome("miss", reply.content, self.timer() - start, True)

    def _record(self, outcome: LookupOutcome) -> None:
        with self._lock:
            m = self._metrics
            if outcome.hit:
                m.hits += 1
                m.hit_latency.add(outcome.elapsed)
            else:
                m.misses += 1
                m.miss_latency.add(outcome.elapsed)
            if outcome.similarity is not None:
                m.similarity_histogram[similarity_bucket(outcome.similarity)] += 1

    def metrics_snapshot(self) -> EngineMetrics:
        with self._lock:
            return copy.deepcopy(self._metrics)
