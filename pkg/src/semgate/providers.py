"""Embedding and completion clients: remote HTTP implementations and offline mocks."""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence

import httpx
import numpy as np

from .errors import AuthFailure, EmptyText, SchemaError, UpstreamUnavailable
from .vectorops import normalize

MOCK_DIM = 64
RETRY_BACKOFF = (0.1, 0.4)
EMBED_TIMEOUT = 30.0
COMPLETE_TIMEOUT = 120.0

# Dropped by the mock embedder, so stopword edits do not move a text's vector.
STOPWORDS = frozenset(
    """a an and are as at be but by can could do does for from have how i if in
    is it me my of on or please should so that the there this to was we what
    when where which who why will with would you your""".split()
)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def stable_hash64(text: str) -> int:
    """64-bit hash that is stable across processes and platforms."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def tokenize(text: str) -> List[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def content_tokens(text: str) -> List[str]:
    tokens = tokenize(text)
    content = [t for t in tokens if t not in STOPWORDS]
    return content or tokens


def token_bucket(token: str, dim: int = MOCK_DIM) -> int:
    return stable_hash64(token) % dim


# -- chat wire types -------------------------------------------------------


@dataclass
class ChatMessage:
    role: str
    content: str
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {**self.extra, "role": self.role, "content": self.content}


@dataclass
class ChatRequest:
    model: str
    messages: List[ChatMessage]
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")

    @classmethod
    def for_question(cls, question: str, model: str = "default") -> "ChatRequest":
        return cls(model=model, messages=[ChatMessage("user", question)])

    @property
    def last_user_message(self) -> str:
        return self.messages[-1].content

    def to_json(self) -> Dict[str, Any]:
        body = dict(self.extra)
        body["model"] = self.model
        body["messages"] = [m.to_json() for m in self.messages]
        return body


@dataclass
class ChatResponse:
    content: str
    upstream_latency: float  # seconds


# -- interfaces ------------------------------------------------------------


class EmbeddingProvider(Protocol):
    def dim(self) -> int: ...

    def embed(self, text: str) -> np.ndarray: ...


class LlmClient(Protocol):
    call_count: int

    def complete(self, request: ChatRequest) -> ChatResponse: ...


class _Counter:
    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def incr(self) -> None:
        with self._lock:
            self._value += 1

    @property
    def value(self) -> int:
        return self._value


# -- mocks -----------------------------------------------------------------


class MockEmbeddingProvider:
    """Hashed bag-of-tokens embedding.

    Texts are lowercased, split on non-alphanumerics, stripped of stopwords
    (unless nothing else is left), and each token adds 1 to bucket
    ``blake2b64(token) % 64``.  The count vector is normalized.  Token order
    and stopwords therefore never change the vector.
    """

    def __init__(self, dim: int = MOCK_DIM):
        self._dim = dim

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        tokens = content_tokens(text or "")
        if not tokens:
            raise EmptyText("cannot embed empty text")
        vec = np.zeros(self._dim, dtype=np.float64)
        for tok in tokens:
            vec[token_bucket(tok, self._dim)] += 1.0
        return normalize(vec)


def mock_embed(text: str) -> np.ndarray:
    return MockEmbeddingProvider().embed(text)


def mock_answer(question: str) -> str:
    return f"ANSWER({stable_hash64(question):016x})"


class MockLlmClient:
    """Answers ``ANSWER(<hash of last user message>)`` after an optional delay.

    ``sleep`` is injectable so benchmarks can charge the delay to a virtual
    clock instead of blocking.
    """

    def __init__(self, delay: float = 0.0, sleep: Callable[[float], None] = time.sleep):
        self.delay = delay
        self._sleep = sleep
        self._calls = _Counter()
        self.last_request: Optional[ChatRequest] = None
        self.fail_with: Optional[Exception] = None

    @property
    def call_count(self) -> int:
        return self._calls.value

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._calls.incr()
        self.last_request = request
        if self.fail_with is not None:
            raise self.fail_with
        if self.delay > 0:
            self._sleep(self.delay)
        return ChatResponse(mock_answer(request.last_user_message), self.delay)


# -- remote ----------------------------------------------------------------


@dataclass
class EndpointConfig:
    base_url: str
    api_key: str = ""
    model: str = ""
    dim: Optional[int] = None
    timeout: float = EMBED_TIMEOUT
    max_retries: int = 2
    backoff: Sequence[float] = RETRY_BACKOFF


def _post_with_retry(
    client: httpx.Client,
    cfg: EndpointConfig,
    path: str,
    body: Dict[str, Any],
    sleep: Callable[[float], None],
) -> Any:
    url = cfg.base_url.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    last: Exception = UpstreamUnavailable("no attempt made")
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(cfg.backoff[min(attempt - 1, len(cfg.backoff) - 1)])
        try:
            resp = client.post(url, json=body, headers=headers, timeout=cfg.timeout)
        except httpx.HTTPError as exc:
            last = UpstreamUnavailable(f"{url}: {exc}")
            continue
        if resp.status_code in (401, 403):
            raise AuthFailure(f"{url}: HTTP {resp.status_code}")
        if resp.status_code >= 500:
            last = UpstreamUnavailable(f"{url}: HTTP {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise SchemaError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise SchemaError(f"{url}: response is not JSON") from exc
    raise last


class RemoteEmbeddingProvider:
    """POST {base_url}/embeddings with {"model", "input"}."""

    def __init__(
        self,
        cfg: EndpointConfig,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not cfg.dim:
            raise ValueError("remote embedding provider needs a configured dim")
        self.cfg = cfg
        self._client = client or httpx.Client()
        self._sleep = sleep

    def dim(self) -> int:
        return int(self.cfg.dim)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        data = _post_with_retry(
            self._client, self.cfg, "/embeddings", {"model": self.cfg.model, "input": text}, self._sleep
        )
        try:
            values = data["data"][0]["embedding"]
            vec = np.asarray(values, dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise SchemaError("embedding response missing data[0].embedding") from exc
        if vec.ndim != 1 or vec.shape[0] != self.dim():
            raise SchemaError(f"expected {self.dim()} values, got {vec.size}")
        if not np.all(np.isfinite(vec)):
            raise SchemaError("embedding contains non-finite values")
        return vec


class RemoteLlmClient:
    """POST {base_url}/chat/completions, returning the first choice's content."""

    def __init__(
        self,
        cfg: EndpointConfig,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._client = client or httpx.Client()
        self._sleep = sleep
        self._calls = _Counter()

    @property
    def call_count(self) -> int:
        return self._calls.value

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._calls.incr()
        start = time.perf_counter()
        data = _post_with_retry(self._client, self.cfg, "/chat/completions", request.to_json(), self._sleep)
        latency = time.perf_counter() - start
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise SchemaError("completion response missing choices[0].message.content") from exc
        if not isinstance(content, str):
            raise SchemaError("completion content is not a string")
        return ChatResponse(content, latency)
