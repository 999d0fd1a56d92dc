"""Compiled inner loops for the HNSW index.

Graph layout (all arrays owned by ``HnswIndex``):

- ``vectors``  float64 (cap, dim), unit rows
- ``link0``    int32 (cap, 2M) level-0 adjacency, ``cnt0`` its fill counts
- ``linkU``    int32 (ucap, LMAX, M) adjacency for levels >= 1, addressed
  through ``uslot[node]`` (-1 for nodes that live only on level 0)

Distances are ``-similarity`` so the heaps order by (distance, node id),
which gives the "ties go to the smaller id" rule for free.
"""
import heapq

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _dot(q, vectors, node):
    s = 0.0
    for i in range(q.shape[0]):
        s += q[i] * vectors[node, i]
    return s


@njit(cache=True)
def similarities(q, vectors, ids):
    out = np.empty(ids.shape[0], dtype=np.float64)
    for j in range(ids.shape[0]):
        out[j] = _dot(q, vectors, ids[j])
    return out


@njit(cache=True)
def brute_force(q, vectors, n, dead):
    """Similarity of ``q`` to every live row; dead rows get -inf."""
    out = np.empty(n, dtype=np.float64)
    for j in range(n):
        if dead[j]:
            out[j] = -np.inf
        else:
            out[j] = _dot(q, vectors, j)
    return out


@njit(cache=True)
def _neighbors(node, level, link0, cnt0, linkU, cntU, uslot):
    if level == 0:
        return link0[node, : cnt0[node]]
    s = uslot[node]
    return linkU[s, level, : cntU[s, level]]


@njit(cache=True)
def search_layer(q, eps, ef, level, vectors, link0, cnt0, linkU, cntU, uslot, visited, tag):
    """Best-first beam search on one level.

    Returns ``(dists, ids, n_dist)`` with the beam sorted ascending by
    (distance, id).  ``visited`` holds per-node tags; a node counts as
    visited when ``visited[node] == tag``.
    """
    n_dist = 0
    cand = [(0.0, np.int64(0))]
    cand.pop()
    best = [(0.0, np.int64(0))]  # max-heap via negated keys
    best.pop()
    for i in range(eps.shape[0]):
        e = np.int64(eps[i])
        if visited[e] == tag:
            continue
        visited[e] = tag
        d = -_dot(q, vectors, e)
        n_dist += 1
        heapq.heappush(cand, (d, e))
        heapq.heappush(best, (-d, -e))
        if len(best) > ef:
            heapq.heappop(best)

    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        wd = -best[0][0]
        wid = -best[0][1]
        if d > wd or (d == wd and c > wid):
            break
        nb = _neighbors(c, level, link0, cnt0, linkU, cntU, uslot)
        for j in range(nb.shape[0]):
            e = np.int64(nb[j])
            if visited[e] == tag:
                continue
            visited[e] = tag
            de = -_dot(q, vectors, e)
            n_dist += 1
            wd = -best[0][0]
            wid = -best[0][1]
            if len(best) < ef or de < wd or (de == wd and e < wid):
                heapq.heappush(cand, (de, e))
                heapq.heappush(best, (-de, -e))
                if len(best) > ef:
                    heapq.heappop(best)

    m = len(best)
    dists = np.empty(m, dtype=np.float64)
    ids = np.empty(m, dtype=np.int64)
    for i in range(m - 1, -1, -1):
        nd, nid = heapq.heappop(best)
        dists[i] = -nd
        ids[i] = -nid
    return dists, ids, n_dist


@njit(cache=True)
def _remove_edge(src, dst, level, link0, cnt0, linkU, cntU, uslot):
    if level == 0:
        c = cnt0[src]
        for i in range(c):
            if link0[src, i] == dst:
                link0[src, i] = link0[src, c - 1]
                cnt0[src] = c - 1
                return
    else:
        s = uslot[src]
        c = cntU[s, level]
        for i in range(c):
            if linkU[s, level, i] == dst:
                linkU[s, level, i] = linkU[s, level, c - 1]
                cntU[s, level] = c - 1
                return


@njit(cache=True)
def _add_edge(src, dst, level, cap, vectors, link0, cnt0, linkU, cntU, uslot):
    """Append ``dst`` to ``src``'s list; on overflow keep the ``cap`` most
    similar neighbors and drop the reverse edge of every evicted one.

    Returns True when ``dst`` survived the pruning.
    """
    if level == 0:
        c = cnt0[src]
        if c < cap:
            link0[src, c] = dst
            cnt0[src] = c + 1
            return True
        cur = np.empty(c + 1, dtype=np.int64)
        for i in range(c):
            cur[i] = link0[src, i]
    else:
        s = uslot[src]
        c = cntU[s, level]
        if c < cap:
            linkU[s, level, c] = dst
            cntU[s, level] = c + 1
            return True
        cur = np.empty(c + 1, dtype=np.int64)
        for i in range(c):
            cur[i] = linkU[s, level, i]
    cur[c] = dst

    q = vectors[src]
    keys = np.empty(c + 1, dtype=np.float64)
    for i in range(c + 1):
        keys[i] = -_dot(q, vectors, cur[i])
    # stable sort by id first, then by distance -> (distance, id) order
    order = np.argsort(cur, kind="mergesort")
    cur = cur[order]
    keys = keys[order]
    order = np.argsort(keys, kind="mergesort")
    kept = cur[order[:cap]]
    dropped = cur[order[cap:]]

    if level == 0:
        for i in range(cap):
            link0[src, i] = kept[i]
        cnt0[src] = cap
    else:
        s = uslot[src]
        for i in range(cap):
            linkU[s, level, i] = kept[i]
        cntU[s, level] = cap
    survived = True
    for i in range(dropped.shape[0]):
        x = dropped[i]
        if x == dst:
            survived = False
        _remove_edge(x, src, level, link0, cnt0, linkU, cntU, uslot)
    return survived


@njit(cache=True)
def insert(
    node, node_level, entry, max_level, m, ef_construction,
    vectors, link0, cnt0, linkU, cntU, uslot, visited, tag,
):
    """Wire ``node`` (vector already stored) into the graph.

    Returns ``(n_dist, next_tag)``.  The caller updates entry point and
    max level.
    """
    q = vectors[node]
    n_dist = 0
    eps = np.empty(1, dtype=np.int64)
    eps[0] = entry
    lc = max_level
    while lc > node_level:
        dists, ids, nd = search_layer(
            q, eps, 1, lc, vectors, link0, cnt0, linkU, cntU, uslot, visited, tag
        )
        tag += 1
        n_dist += nd
        eps = ids[:1].copy()
        lc -= 1

    lc = min(node_level, max_level)
    while lc >= 0:
        dists, ids, nd = search_layer(
            q, eps, ef_construction, lc, vectors, link0, cnt0, linkU, cntU, uslot, visited, tag
        )
        tag += 1
        n_dist += nd
        cap = 2 * m if lc == 0 else m
        k = min(cap, ids.shape[0])
        for i in range(k):
            nb = ids[i]
            if nb == node:
                continue
            if _add_edge(node, nb, lc, cap, vectors, link0, cnt0, linkU, cntU, uslot):
                _add_edge(nb, node, lc, cap, vectors, link0, cnt0, linkU, cntU, uslot)
        eps = ids
        lc -= 1
    return n_dist, tag


@njit(cache=True)
def descend(q, entry, max_level, vectors, link0, cnt0, linkU, cntU, uslot, visited, tag):
    """Greedy (beam 1) descent from the top level down to level 1."""
    n_dist = 0
    eps = np.empty(1, dtype=np.int64)
    eps[0] = entry
    lc = max_level
    while lc > 0:
        dists, ids, nd = search_layer(
            q, eps, 1, lc, vectors, link0, cnt0, linkU, cntU, uslot, visited, tag
        )
        tag += 1
        n_dist += nd
        eps = ids[:1].copy()
        lc -= 1
    return eps, n_dist, tag
