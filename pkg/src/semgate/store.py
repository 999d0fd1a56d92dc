"""In-process semantic store: one HNSW index per embedding dimension, with TTL.

Expiry is lazy on read plus an explicit ``purge_expired`` sweep.  Embeddings
are kept as float32; the index receives the float32 values re-normalized in
float64, so an index rebuilt from a snapshot sees bit-identical vectors.

Snapshot layout (little-endian)::

    b"SGC1" | version u8 (=1) | partition count u32
    per partition: dim u32 | entry count u64
        per entry: entry_id u64 | created_at_ms u64 | ttl_secs u64
                   | question len u32 + utf-8 | response len u32 + utf-8
                   | dim x float32
    CRC32 u32 of every preceding byte
"""
from __future__ import annotations

import io
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Optional, Protocol, Tuple, Union

import numpy as np

from .ann_index import HnswIndex, HnswParams
from .errors import CorruptSnapshot, InvalidEntry, IoFailure
from .vectorops import as_embedding, normalize

MAGIC = b"SGC1"
VERSION = 1
DEFAULT_TTL_SECS = 24 * 60 * 60
REBUILD_RATIO = 0.3

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_PART = struct.Struct("<IQ")
_ENTRY = struct.Struct("<QQQ")


class Clock(Protocol):
    def now_ms(self) -> int: ...


class SystemClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class ManualClock:
    """Clock for tests: time moves only when told to."""

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = int(start_ms)
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += int(round(seconds * 1000))


@dataclass
class CacheEntry:
    entry_id: int
    question: str
    response: str
    embedding: np.ndarray  # float32
    created_at: int  # ms since epoch
    ttl: int  # seconds, 0 = never expires

    def expired(self, now_ms: int) -> bool:
        return self.ttl > 0 and now_ms >= self.created_at + self.ttl * 1000

    def same_as(self, other: "CacheEntry") -> bool:
        return (
            self.entry_id == other.entry_id
            and self.question == other.question
            and self.response == other.response
            and self.created_at == other.created_at
            and self.ttl == other.ttl
            and self.embedding.dtype == other.embedding.dtype
            and self.embedding.tobytes() == other.embedding.tobytes()
        )


def _index_vector(embedding32: np.ndarray) -> np.ndarray:
    return normalize(embedding32.astype(np.float64))


@dataclass
class Partition:
    dim: int
    index: HnswIndex
    entries: Dict[int, CacheEntry] = field(default_factory=dict)
    node_of: Dict[int, int] = field(default_factory=dict)
    entry_of: Dict[int, int] = field(default_factory=dict)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def add(self, entry: CacheEntry) -> None:
        node = self.index.insert(_index_vector(entry.embedding))
        self.entries[entry.entry_id] = entry
        self.node_of[entry.entry_id] = node
        self.entry_of[node] = entry.entry_id

    def drop(self, entry_id: int) -> bool:
        entry = self.entries.pop(entry_id, None)
        if entry is None:
            return False
        node = self.node_of.pop(entry_id)
        del self.entry_of[node]
        self.index.remove(node)
        return True

    def rebuild(self) -> None:
        fresh, mapping = self.index.rebuild()
        self.entry_of = {new: self.entry_of[old] for old, new in mapping.items()}
        self.node_of = {eid: node for node, eid in self.entry_of.items()}
        self.index = fresh


@dataclass
class PartitionStats:
    dim: int
    entries: int
    tombstones: int


@dataclass
class StoreStats:
    partitions: List[PartitionStats]
    entries: int
    tombstones: int


class SemanticStore:
    """Dimension-partitioned cache of (question, embedding, response) entries."""

    def __init__(
        self,
        params: Optional[HnswParams] = None,
        clock: Optional[Clock] = None,
        default_ttl: int = DEFAULT_TTL_SECS,
        rebuild_ratio: float = REBUILD_RATIO,
    ):
        if default_ttl < 0:
            raise ValueError("default_ttl must be >= 0")
        self.params = params or HnswParams()
        self.clock = clock or SystemClock()
        self.default_ttl = int(default_ttl)
        self.rebuild_ratio = rebuild_ratio
        self.rebuild_count = 0
        self._partitions: Dict[int, Partition] = {}
        self._lock = threading.RLock()
        self._next_id = 0

    def _partition(self, dim: int, create: bool = False) -> Optional[Partition]:
        with self._lock:
            part = self._partitions.get(dim)
            if part is None and create:
                part = Partition(dim, HnswIndex(dim, self.params))
                self._partitions[dim] = part
            return part

    def _allocate_id(self) -> int:
        with self._lock:
            eid = self._next_id
            self._next_id += 1
            return eid

    def __len__(self) -> int:
        return sum(len(p.entries) for p in list(self._partitions.values()))

    @property
    def dims(self) -> List[int]:
        return sorted(self._partitions)

    def put(
        self,
        question: str,
        embedding,
        response: str,
        ttl: Optional[int] = None,
    ) -> int:
        if not question or not question.strip():
            raise InvalidEntry("question must be non-empty")
        if not response:
            raise InvalidEntry("response must be non-empty")
        if ttl is not None and ttl < 0:
            raise InvalidEntry("ttl must be >= 0")
        try:
            vec = normalize(embedding).astype(np.float32)
        except ValueError as exc:
            raise InvalidEntry(f"bad embedding: {exc}") from exc
        part = self._partition(vec.shape[0], create=True)
        entry = CacheEntry(
            entry_id=self._allocate_id(),
            question=question,
            response=response,
            embedding=vec,
            created_at=self.clock.now_ms(),
            ttl=self.default_ttl if ttl is None else int(ttl),
        )
        with part.lock:
            part.add(entry)
        return entry.entry_id

    def get(self, entry_id: int) -> Optional[CacheEntry]:
        for part in list(self._partitions.values()):
            entry = part.entries.get(entry_id)
            if entry is not None:
                return entry
        return None

    def nearest(self, q, k: int) -> List[Tuple[CacheEntry, float]]:
        """Up to ``k`` unexpired entries most similar to ``q``, best first."""
        if k < 1:
            raise ValueError("k must be positive")
        q = as_embedding(q)
        part = self._partition(q.shape[0])
        if part is None:
            return []
        q = normalize(q)
        now = self.clock.now_ms()
        with part.lock:
            live = len(part.index)
            fetch = k
            while True:
                hits = part.index.search(q, fetch)
                out = []
                for hit in hits:
                    entry = part.entries[part.entry_of[hit.node]]
                    if not entry.expired(now):
                        out.append((entry, hit.similarity))
                # expired entries can crowd out live ones; widen and retry
                if len(out) >= k or len(hits) < fetch or fetch >= live:
                    return out[:k]
                fetch = min(fetch * 2, live)

    def remove(self, entry_id: int) -> bool:
        for part in list(self._partitions.values()):
            with part.lock:
                if part.drop(entry_id):
                    return True
        return False

    def purge_expired(self) -> int:
        now = self.clock.now_ms()
        removed = 0
        for part in list(self._partitions.values()):
            with part.lock:
                stale = [eid for eid, e in part.entries.items() if e.expired(now)]
                for eid in stale:
                    part.drop(eid)
                removed += len(stale)
                if part.index.tombstone_ratio() > self.rebuild_ratio:
                    part.rebuild()
                    self.rebuild_count += 1
        return removed

    def flush(self) -> int:
        with self._lock:
            removed = len(self)
            self._partitions = {}
        return removed

    def entries(self) -> Iterator[CacheEntry]:
        for dim in self.dims:
            part = self._partitions[dim]
            with part.lock:
                items = sorted(part.entries.values(), key=lambda e: e.entry_id)
            yield from items

    def stats(self) -> StoreStats:
        parts = []
        for dim in self.dims:
            part = self._partitions[dim]
            with part.lock:
                parts.append(
                    PartitionStats(dim, len(part.entries), part.index.stats().tombstone_count)
                )
        return StoreStats(
            partitions=parts,
            entries=sum(p.entries for p in parts),
            tombstones=sum(p.tombstones for p in parts),
        )

    def check_consistency(self) -> None:
        """Assert the entry <-> live-node bijection in every partition."""
        for part in self._partitions.values():
            with part.lock:
                live = {n for n in range(part.index.node_count) if part.index.is_live(n)}
                assert live == set(part.entry_of), "index nodes != entry nodes"
                assert set(part.node_of) == set(part.entries), "entry ids out of sync"
                for eid, node in part.node_of.items():
                    assert part.entry_of[node] == eid
                    assert part.entries[eid].embedding.shape == (part.dim,)

    # -- snapshots ---------------------------------------------------------

    def _serialize(self) -> bytes:
        now = self.clock.now_ms()
        with self._lock:
            parts = [self._partitions[d] for d in sorted(self._partitions)]
            buf = io.BytesIO()
            buf.write(MAGIC)
            buf.write(bytes([VERSION]))
            buf.write(_U32.pack(len(parts)))
            for part in parts:
                with part.lock:
                    live = sorted(
                        (e for e in part.entries.values() if not e.expired(now)),
                        key=lambda e: e.entry_id,
                    )
                    buf.write(_PART.pack(part.dim, len(live)))
                    for e in live:
                        q = e.question.encode("utf-8")
                        r = e.response.encode("utf-8")
                        buf.write(_ENTRY.pack(e.entry_id, e.created_at, e.ttl))
                        buf.write(_U32.pack(len(q)))
                        buf.write(q)
                        buf.write(_U32.pack(len(r)))
                        buf.write(r)
                        buf.write(e.embedding.astype("<f4").tobytes())
        body = buf.getvalue()
        return body + _U32.pack(zlib.crc32(body))

    def snapshot_save(self, destination: Union[str, Path, BinaryIO]) -> int:
        """Write a snapshot of all unexpired entries; returns bytes written."""
        data = self._serialize()
        if hasattr(destination, "write"):
            destination.write(data)
            return len(data)
        path = Path(destination)
        tmp = path.with_name(path.name + ".tmp")
        try:
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc
        return len(data)

    @classmethod
    def snapshot_load(
        cls,
        source: Union[str, Path, BinaryIO, bytes],
        params: Optional[HnswParams] = None,
        clock: Optional[Clock] = None,
        default_ttl: int = DEFAULT_TTL_SECS,
    ) -> "SemanticStore":
        if isinstance(source, (bytes, bytearray)):
            data = bytes(source)
        elif hasattr(source, "read"):
            data = source.read()
        else:
            try:
                data = Path(source).read_bytes()
            except OSError as exc:
                raise IoFailure(f"cannot read snapshot {source}: {exc}") from exc

        store = cls(params=params, clock=clock, default_ttl=default_ttl)
        max_id = -1
        for dim, entries in _parse(data):
            part = store._partition(dim, create=True)
            for entry in sorted(entries, key=lambda e: e.entry_id):
                if entry.entry_id in part.entries:
                    raise CorruptSnapshot(f"duplicate entry id {entry.entry_id}")
                try:
                    part.add(entry)
                except ValueError as exc:
                    raise CorruptSnapshot(f"invalid embedding in entry {entry.entry_id}") from exc
                max_id = max(max_id, entry.entry_id)
        store._next_id = max_id + 1
        return store


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptSnapshot("snapshot truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))


def _parse(data: bytes) -> List[Tuple[int, List[CacheEntry]]]:
    if len(data) < len(MAGIC) + 1 + _U32.size + _U32.size:
        raise CorruptSnapshot("snapshot truncated")
    if data[:4] != MAGIC:
        raise CorruptSnapshot("bad magic")
    if data[4] != VERSION:
        raise CorruptSnapshot(f"unsupported snapshot version {data[4]}")
    body, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptSnapshot("checksum mismatch")

    rd = _Reader(body)
    rd.pos = 5
    (nparts,) = rd.unpack(_U32)
    out = []
    seen = set()
    for _ in range(nparts):
        dim, count = rd.unpack(_PART)
        if dim == 0 or dim in seen:
            raise CorruptSnapshot(f"bad partition dim {dim}")
        seen.add(dim)
        entries = []
        for _ in range(count):
            eid, created, ttl = rd.unpack(_ENTRY)
            try:
                (qlen,) = rd.unpack(_U32)
                question = rd.take(qlen).decode("utf-8")
                (rlen,) = rd.unpack(_U32)
                response = rd.take(rlen).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptSnapshot(f"invalid utf-8 in entry {eid}") from exc
            vec = np.frombuffer(rd.take(4 * dim), dtype="<f4").astype(np.float32)
            if not np.all(np.isfinite(vec)) or not question or not response:
                raise CorruptSnapshot(f"invalid entry {eid}")
            entries.append(CacheEntry(eid, question, response, vec, created, ttl))
        out.append((dim, entries))
    if rd.pos != len(body):
        raise CorruptSnapshot("trailing bytes after last partition")
    return out
