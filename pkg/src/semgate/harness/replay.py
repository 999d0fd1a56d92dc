"""Populate a target, replay test queries, judge hits, sweep thresholds."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Protocol, Sequence, Tuple, Union

import httpx
import numpy as np

from ..engine import SemanticCacheEngine, check_threshold
from ..errors import OutOfRange, TargetUnavailable
from .dataset import SeedRecord, TestRecord, read_seeds, read_tests


class QueryResult(NamedTuple):
    hit: bool
    elapsed: float
    similarity: Optional[float] = None
    matched_entry: Optional[int] = None
    matched_question: Optional[str] = None


class ReplayTarget(Protocol):
    """What the harness needs from a cache: an in-process engine or a gateway URL."""

    def put(self, question: str, response: str) -> int: ...

    def query(self, question: str) -> QueryResult: ...

    def query_uncached(self, question: str) -> float: ...

    def question_of(self, entry_id: int) -> Optional[str]: ...

    def set_threshold(self, t: float) -> float: ...

    def current_threshold(self) -> float: ...

    def flush(self) -> int: ...

    def upstream_calls(self) -> int: ...

    def entry_count(self) -> int: ...


class SimulatedClock:
    """Timer whose ``sleep`` advances time instead of blocking.

    Hand ``sleep`` to a mock LLM and use the instance as the engine timer:
    elapsed times then include the configured upstream delay without
    waiting for it.  With ``real=False`` only simulated time counts, which
    makes latency figures deterministic.
    """

    def __init__(self, real: bool = True):
        self.real = real
        self.offset = 0.0

    def sleep(self, seconds: float) -> None:
        self.offset += seconds

    def __call__(self) -> float:
        return (time.perf_counter() if self.real else 0.0) + self.offset


class EmbeddedTarget:
    def __init__(self, engine: SemanticCacheEngine):
        self.engine = engine

    def put(self, question: str, response: str) -> int:
        return self.engine.store.put(question, self.engine.embed(question), response)

    def query(self, question: str) -> QueryResult:
        o = self.engine.handle_query(question)
        return QueryResult(o.hit, o.elapsed, o.similarity, o.matched_entry, o.matched_question)

    def query_uncached(self, question: str) -> float:
        return self.engine.forward(question).elapsed

    def question_of(self, entry_id: int) -> Optional[str]:
        entry = self.engine.store.get(entry_id)
        return entry.question if entry else None

    def set_threshold(self, t: float) -> float:
        return self.engine.set_threshold(t)

    def current_threshold(self) -> float:
        return self.engine.threshold

    def flush(self) -> int:
        return self.engine.store.flush()

    def upstream_calls(self) -> int:
        return self.engine.llm.call_count

    def entry_count(self) -> int:
        return len(self.engine.store)


class HttpTarget:
    """Talks to a running gateway.  ``client`` may be any ``httpx.Client``
    (including FastAPI's ``TestClient``)."""

    def __init__(self, base_url: str = "", client: Optional[httpx.Client] = None, model: str = "default"):
        self.client = client or httpx.Client(base_url=base_url, timeout=130.0)
        self.model = model
        self._questions: Dict[int, str] = {}

    def _call(self, method: str, path: str, **kw) -> httpx.Response:
        try:
            resp = self.client.request(method, path, **kw)
        except httpx.HTTPError as exc:
            raise TargetUnavailable(f"{method} {path}: {exc}") from exc
        if resp.status_code >= 400:
            raise TargetUnavailable(f"{method} {path}: HTTP {resp.status_code} {resp.text[:200]}")
        return resp

    def _chat(self, question: str, headers: Optional[dict] = None) -> httpx.Response:
        body = {"model": self.model, "messages": [{"role": "user", "content": question}]}
        return self._call("POST", "/v1/chat/completions", json=body, headers=headers or {})

    def put(self, question: str, response: str) -> int:
        eid = int(self._call("POST", "/admin/entries", json={"question": question, "response": response}).json()["entry_id"])
        self._questions[eid] = question
        return eid

    def query(self, question: str) -> QueryResult:
        start = time.perf_counter()
        resp = self._chat(question)
        elapsed = time.perf_counter() - start
        kind = resp.headers.get("x-semantic-cache")
        if kind == "hit":
            eid = int(resp.headers["x-semantic-cache-entry"])
            sim = float(resp.headers["x-semantic-cache-similarity"])
            return QueryResult(True, elapsed, sim, eid, self.question_of(eid))
        if kind == "miss":
            stored = resp.headers.get("x-semantic-cache-stored-entry")
            if stored is not None:
                self._questions[int(stored)] = question
            return QueryResult(False, elapsed)
        raise TargetUnavailable(f"gateway answered without a cache verdict header: {kind!r}")

    def query_uncached(self, question: str) -> float:
        start = time.perf_counter()
        self._chat(question, headers={"Cache-Control": "no-store"})
        return time.perf_counter() - start

    def question_of(self, entry_id: int) -> Optional[str]:
        if entry_id not in self._questions:
            try:
                resp = self.client.get(f"/admin/entries/{entry_id}")
            except httpx.HTTPError as exc:
                raise TargetUnavailable(str(exc)) from exc
            if resp.status_code != 200:
                return None
            self._questions[entry_id] = resp.json()["question"]
        return self._questions[entry_id]

    def set_threshold(self, t: float) -> float:
        return float(self._call("POST", "/admin/threshold", json={"threshold": t}).json()["previous"])

    def current_threshold(self) -> float:
        return float(self.stats()["threshold"])

    def flush(self) -> int:
        self._questions.clear()
        return int(self._call("POST", "/admin/flush").json()["removed"])

    def stats(self) -> dict:
        return self._call("GET", "/admin/stats").json()

    def upstream_calls(self) -> int:
        return int(self.stats()["upstream_calls"])

    def entry_count(self) -> int:
        return int(self.stats()["entries"])


# -- judging ---------------------------------------------------------------


class Judge(Protocol):
    def judge(self, test: TestRecord, matched_question: Optional[str], matched_entry_id: Optional[int]) -> bool: ...


class Provenance:
    """Which seed each cached question stands for (question text -> seed id).

    Seeds map to themselves; a test query cached after a miss maps to its
    own ``source_id`` (``None`` for novel queries).
    """

    def __init__(self):
        self._by_question: Dict[str, Optional[str]] = {}

    def record(self, question: str, seed_id: Optional[str]) -> None:
        self._by_question.setdefault(question, seed_id)

    def seed_of(self, question: Optional[str]) -> Optional[str]:
        return self._by_question.get(question) if question is not None else None

    def __len__(self) -> int:
        return len(self._by_question)


class OfflineJudge:
    """Positive iff the matched entry stands for the test's own source seed."""

    def __init__(self, provenance: Provenance):
        self.provenance = provenance

    def judge(self, test: TestRecord, matched_question: Optional[str], matched_entry_id: Optional[int]) -> bool:
        if test.source_id is None:
            return False
        return self.provenance.seed_of(matched_question) == test.source_id


# -- reports ---------------------------------------------------------------


@dataclass
class CategoryReport:
    category: str
    queries: int = 0
    cache_hits: int = 0
    positive_hits: int = 0
    api_calls: int = 0
    hit_rate: float = 0.0
    positive_rate: float = 0.0

    def finalize(self) -> "CategoryReport":
        self.hit_rate = self.cache_hits / self.queries if self.queries else 0.0
        self.positive_rate = self.positive_hits / self.cache_hits if self.cache_hits else 0.0
        return self


@dataclass
class LatencyStats:
    count: int
    mean: float
    p50: float
    p95: float

    @classmethod
    def of(cls, samples: Sequence[float]) -> "LatencyStats":
        if not samples:
            return cls(0, 0.0, 0.0, 0.0)
        arr = np.asarray(samples, dtype=np.float64)
        return cls(len(arr), float(arr.mean()), float(np.percentile(arr, 50)), float(np.percentile(arr, 95)))


@dataclass
class ReplayReport:
    threshold: float
    categories: List[CategoryReport]
    cached_latency: LatencyStats
    uncached_latency: Optional[LatencyStats]
    upstream_calls: int  # upstream call-count delta over the cached arm

    @property
    def total(self) -> CategoryReport:
        t = CategoryReport("TOTAL")
        for c in self.categories:
            t.queries += c.queries
            t.cache_hits += c.cache_hits
            t.positive_hits += c.positive_hits
            t.api_calls += c.api_calls
        return t.finalize()

    def category(self, name: str) -> CategoryReport:
        for c in self.categories:
            if c.category == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayReport":
        unc = d.get("uncached_latency")
        return cls(
            threshold=d["threshold"],
            categories=[CategoryReport(**c) for c in d["categories"]],
            cached_latency=LatencyStats(**d["cached_latency"]),
            uncached_latency=LatencyStats(**unc) if unc is not None else None,
            upstream_calls=d["upstream_calls"],
        )


# -- operations ------------------------------------------------------------


def _load_seeds(seeds: Union[str, Path, Sequence[SeedRecord]]) -> Sequence[SeedRecord]:
    return read_seeds(seeds) if isinstance(seeds, (str, Path)) else seeds


def _load_tests(tests: Union[str, Path, Sequence[TestRecord]]) -> Sequence[TestRecord]:
    return read_tests(tests) if isinstance(tests, (str, Path)) else tests


def populate(
    seeds: Union[str, Path, Sequence[SeedRecord]],
    target: ReplayTarget,
    provenance: Optional[Provenance] = None,
) -> int:
    """One put per seed record; returns the number inserted."""
    n = 0
    for rec in _load_seeds(seeds):
        target.put(rec.question, rec.answer)
        if provenance is not None:
            provenance.record(rec.question, rec.id)
        n += 1
    return n


def replay(
    tests: Union[str, Path, Sequence[TestRecord]],
    target: ReplayTarget,
    judge: Optional[Judge] = None,
    provenance: Optional[Provenance] = None,
    *,
    threshold: Optional[float] = None,
    measure_uncached: bool = True,
    parallel: int = 1,
) -> ReplayReport:
    """Run every test query once, in file order, and assemble the report.

    The no-cache arm runs as a separate pass afterwards so it cannot touch
    the cache.  With ``parallel > 1`` queries are issued from a thread pool.
    """
    tests = _load_tests(tests)
    provenance = provenance if provenance is not None else Provenance()
    judge = judge or OfflineJudge(provenance)
    if threshold is not None:
        target.set_threshold(check_threshold(threshold))
    current = target.current_threshold()

    calls_before = target.upstream_calls()
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(lambda t: target.query(t.query), tests))
    else:
        results = [target.query(t.query) for t in tests]
    calls_delta = target.upstream_calls() - calls_before

    for test, res in zip(tests, results):
        if not res.hit:
            provenance.record(test.query, test.source_id)

    cats: Dict[str, CategoryReport] = {}
    for test, res in zip(tests, results):
        c = cats.setdefault(test.category, CategoryReport(test.category))
        c.queries += 1
        if res.hit:
            c.cache_hits += 1
            matched_q = res.matched_question
            if matched_q is None and res.matched_entry is not None:
                matched_q = target.question_of(res.matched_entry)
            if judge.judge(test, matched_q, res.matched_entry):
                c.positive_hits += 1
        else:
            c.api_calls += 1

    uncached = None
    if measure_uncached:
        uncached = LatencyStats.of([target.query_uncached(t.query) for t in tests])

    return ReplayReport(
        threshold=current,
        categories=[c.finalize() for c in cats.values()],
        cached_latency=LatencyStats.of([r.elapsed for r in results]),
        uncached_latency=uncached,
        upstream_calls=calls_delta,
    )


def threshold_range(start: float, stop: float, step: float) -> List[float]:
    if step <= 0:
        raise OutOfRange("step must be positive")
    n = int(round((stop - start) / step))
    if n < 0:
        raise OutOfRange("--to must not be below --from")
    return [round(start + i * step, 10) for i in range(n + 1)]


def sweep_threshold(
    tests: Union[str, Path, Sequence[TestRecord]],
    seeds: Union[str, Path, Sequence[SeedRecord]],
    target: ReplayTarget,
    thresholds: Sequence[float],
    *,
    measure_uncached: bool = False,
    parallel: int = 1,
) -> List[Tuple[float, ReplayReport]]:
    """One full replay per threshold, each against a freshly repopulated cache."""
    thresholds = [check_threshold(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise OutOfRange("thresholds must be sorted ascending")
    tests = _load_tests(tests)
    seeds = _load_seeds(seeds)
    out = []
    for t in thresholds:
        target.flush()
        prov = Provenance()
        populate(seeds, target, prov)
        report = replay(
            tests, target, provenance=prov, threshold=t,
            measure_uncached=measure_uncached, parallel=parallel,
        )
        out.append((t, report))
    return out
