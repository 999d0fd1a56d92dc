"""Hierarchical Navigable Small World index over unit embeddings.

Similarity is the dot product of unit vectors (cosine).  Neighbor lists are
pruned by keeping the most similar edges only; there is no
relative-neighborhood heuristic.  Deleted nodes become tombstones: they
still route searches but never appear in results, and ``rebuild`` compacts
them away.

The index is not internally synchronized.  Searches mutate scratch state
(visited tags, the distance counter), so the owner must serialize access.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import _hnsw_kernels as K
from .errors import DimensionMismatch
from .vectorops import as_embedding

LMAX = 16
_SEED_MULT = 6364136223846793005
_SEED_INC = 1442695040888963407


@dataclass(frozen=True)
class HnswParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    level_lambda: float = field(default=0.0)
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < self.m:
            raise ValueError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")
        if self.level_lambda <= 0.0:
            object.__setattr__(self, "level_lambda", 1.0 / math.log(self.m))


class SearchHit(NamedTuple):
    node: int
    similarity: float


@dataclass
class IndexStats:
    live_count: int
    tombstone_count: int
    max_level: int
    distance_count: int


def derive_seed(seed: int) -> int:
    """Deterministic successor seed used by ``rebuild`` (one LCG step)."""
    return (seed * _SEED_MULT + _SEED_INC) % (1 << 64)


class HnswIndex:
    def __init__(self, dim: int, params: Optional[HnswParams] = None, capacity: int = 64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self._rng = np.random.default_rng(self.params.seed)
        self._n = 0
        self._entry: Optional[int] = None
        self._max_level = 0
        self._tombstones: set[int] = set()
        self._distance_count = 0
        self._tag = 1
        self._n_upper = 0
        self._alloc(max(capacity, 1), max(capacity // 8, 1))

    # -- storage -----------------------------------------------------------

    def _alloc(self, cap: int, ucap: int) -> None:
        m = self.params.m
        self._vectors = np.zeros((cap, self.dim), dtype=np.float64)
        self._levels = np.zeros(cap, dtype=np.int32)
        self._dead = np.zeros(cap, dtype=np.uint8)
        self._link0 = np.zeros((cap, 2 * m), dtype=np.int32)
        self._cnt0 = np.zeros(cap, dtype=np.int32)
        self._uslot = np.full(cap, -1, dtype=np.int64)
        self._visited = np.zeros(cap, dtype=np.int64)
        self._linkU = np.zeros((ucap, LMAX, m), dtype=np.int32)
        self._cntU = np.zeros((ucap, LMAX), dtype=np.int32)

    @staticmethod
    def _grow(arr: np.ndarray, size: int, fill=0) -> np.ndarray:
        out = np.full((size,) + arr.shape[1:], fill, dtype=arr.dtype)
        out[: arr.shape[0]] = arr
        return out

    def _ensure_capacity(self) -> None:
        cap = self._vectors.shape[0]
        if self._n < cap:
            return
        new = cap * 2
        self._vectors = self._grow(self._vectors, new)
        self._levels = self._grow(self._levels, new)
        self._dead = self._grow(self._dead, new)
        self._link0 = self._grow(self._link0, new)
        self._cnt0 = self._grow(self._cnt0, new)
        self._uslot = self._grow(self._uslot, new, -1)
        self._visited = self._grow(self._visited, new)

    def _ensure_upper_capacity(self) -> None:
        ucap = self._linkU.shape[0]
        if self._n_upper < ucap:
            return
        self._linkU = self._grow(self._linkU, ucap * 2)
        self._cntU = self._grow(self._cntU, ucap * 2)

    def _graph(self):
        return (self._vectors, self._link0, self._cnt0, self._linkU, self._cntU, self._uslot)

    def _check_query(self, v) -> np.ndarray:
        arr = as_embedding(v)
        if arr.shape[0] != self.dim:
            raise DimensionMismatch(f"index dim {self.dim}, vector dim {arr.shape[0]}")
        return arr

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # (0, 1]
        return min(int(math.floor(-math.log(u) * self.params.level_lambda)), LMAX - 1)

    # -- public API --------------------------------------------------------

    def __len__(self) -> int:
        return self._n - len(self._tombstones)

    @property
    def entry_point(self) -> Optional[int]:
        return self._entry

    @property
    def max_level(self) -> int:
        return self._max_level

    @property
    def tombstones(self) -> frozenset:
        return frozenset(self._tombstones)

    @property
    def node_count(self) -> int:
        """Number of node ids ever assigned (live + tombstoned)."""
        return self._n

    def vector(self, node: int) -> np.ndarray:
        if not 0 <= node < self._n:
            raise KeyError(node)
        return self._vectors[node].copy()

    def is_live(self, node: int) -> bool:
        return 0 <= node < self._n and node not in self._tombstones

    def level_of(self, node: int) -> int:
        return int(self._levels[node])

    def neighbors(self, node: int, level: int) -> List[int]:
        if level > self._levels[node]:
            return []
        if level == 0:
            return self._link0[node, : self._cnt0[node]].tolist()
        s = self._uslot[node]
        return self._linkU[s, level, : self._cntU[s, level]].tolist()

    def insert(self, v) -> int:
        """Add a unit vector and return its NodeId."""
        q = self._check_query(v)
        self._ensure_capacity()
        node = self._n
        level = self._draw_level()
        self._vectors[node] = q
        self._levels[node] = level
        if level > 0:
            self._ensure_upper_capacity()
            self._uslot[node] = self._n_upper
            self._n_upper += 1
        self._n += 1

        if self._entry is None:
            self._entry = node
            self._max_level = level
            return node

        n_dist, self._tag = K.insert(
            node, level, self._entry, self._max_level, self.params.m,
            self.params.ef_construction, *self._graph(), self._visited, self._tag,
        )
        self._distance_count += int(n_dist)
        if level > self._max_level:
            self._entry = node
            self._max_level = level
        return node

    def _finish(self, q: np.ndarray, ids: np.ndarray, k: int) -> List[SearchHit]:
        if ids.size == 0:
            return []
        sims = K.similarities(q, self._vectors, ids.astype(np.int64))
        order = np.lexsort((ids, -sims))
        return [SearchHit(int(ids[i]), float(sims[i])) for i in order[:k]]

    def search(self, q, k: int, ef_search: Optional[int] = None) -> List[SearchHit]:
        """Approximate top-``k`` live nodes by cosine similarity."""
        q = self._check_query(q)
        if k < 1:
            raise ValueError("k must be positive")
        if self._entry is None:
            return []
        ef = max(ef_search or self.params.ef_search, k + len(self._tombstones))
        eps, n1, self._tag = K.descend(
            q, self._entry, self._max_level, *self._graph(), self._visited, self._tag
        )
        _, ids, n2 = K.search_layer(q, eps, ef, 0, *self._graph(), self._visited, self._tag)
        self._tag += 1
        self._distance_count += int(n1) + int(n2)
        if self._tombstones:
            ids = ids[self._dead[ids] == 0]
        return self._finish(q, ids, k)

    def brute_force_search(self, q, k: int) -> List[SearchHit]:
        """Exact top-``k`` by full scan; the correctness oracle for ``search``."""
        q = self._check_query(q)
        if k < 1:
            raise ValueError("k must be positive")
        if len(self) == 0:
            return []
        sims = K.brute_force(q, self._vectors, self._n, self._dead)
        ids = np.arange(self._n, dtype=np.int64)
        order = np.lexsort((ids, -sims))
        out = []
        for i in order[:k]:
            if self._dead[i]:
                break
            out.append(SearchHit(int(i), float(sims[i])))
        return out

    def remove(self, node: int) -> bool:
        if not self.is_live(node):
            return False
        self._tombstones.add(node)
        self._dead[node] = 1
        if len(self) == 0:
            self._entry = None
            self._max_level = 0
        return True

    def rebuild(self) -> Tuple["HnswIndex", Dict[int, int]]:
        """Fresh index over the live nodes, reinserted in NodeId order.

        Returns the new index and the old -> new NodeId mapping.
        """
        params = HnswParams(
            m=self.params.m,
            ef_construction=self.params.ef_construction,
            ef_search=self.params.ef_search,
            level_lambda=self.params.level_lambda,
            seed=derive_seed(self.params.seed),
        )
        fresh = HnswIndex(self.dim, params, capacity=max(len(self), 1))
        mapping = {}
        for old in range(self._n):
            if not self._dead[old]:
                mapping[old] = fresh.insert(self._vectors[old])
        return fresh, mapping

    def stats(self) -> IndexStats:
        return IndexStats(
            live_count=len(self),
            tombstone_count=len(self._tombstones),
            max_level=self._max_level,
            distance_count=self._distance_count,
        )

    def tombstone_ratio(self) -> float:
        return len(self._tombstones) / self._n if self._n else 0.0


def recall_at_k(approx: Sequence[SearchHit], exact: Sequence[SearchHit]) -> float:
    """Fraction of the exact top-k node ids present in ``approx``."""
    if not exact:
        return 1.0
    want = {h.node for h in exact}
    return len(want & {h.node for h in approx}) / len(want)
