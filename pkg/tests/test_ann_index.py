import numpy as np
import pytest

from semgate.ann_index import HnswIndex, HnswParams, derive_seed, recall_at_k
from semgate.errors import DimensionMismatch

from conftest import unit_rows


def build(vectors, **kw):
    idx = HnswIndex(vectors.shape[1], HnswParams(**kw))
    for v in vectors:
        idx.insert(v)
    return idx


def mean_recall(idx, queries, k=10, ef=None):
    return float(np.mean([recall_at_k(idx.search(q, k, ef_search=ef), idx.brute_force_search(q, k)) for q in queries]))


@pytest.fixture(scope="module")
def data1000():
    return unit_rows(np.random.default_rng(7), 1000, 64)


@pytest.fixture(scope="module")
def index1000(data1000):
    return build(data1000)


def test_empty_index():
    idx = HnswIndex(4)
    assert idx.search([1, 0, 0, 0], 3) == []
    assert idx.brute_force_search([1, 0, 0, 0], 3) == []
    assert idx.entry_point is None
    s = idx.stats()
    assert (s.live_count, s.tombstone_count, s.max_level, s.distance_count) == (0, 0, 0, 0)


def test_first_insert_is_entry_point():
    idx = HnswIndex(3)
    assert idx.insert([1, 0, 0]) == 0
    assert idx.entry_point == 0


def test_orthogonal_self_retrieval():
    idx = HnswIndex(3)
    for v in np.eye(3):
        idx.insert(v)
    for i, v in enumerate(np.eye(3)):
        hit = idx.search(v, 1)[0]
        assert hit.node == i and abs(hit.similarity - 1.0) < 1e-9


def test_two_node_example():
    idx = HnswIndex(2)
    a = idx.insert([1, 0])
    idx.insert([0, 1])
    assert idx.search([1, 0], 1) == [(a, 1.0)]
    assert idx.brute_force_search([0.3, 0.2], 1)[0].node == a


def test_dimension_mismatch():
    idx = HnswIndex(3)
    with pytest.raises(DimensionMismatch):
        idx.insert([1, 0])
    idx.insert([1, 0, 0])
    with pytest.raises(DimensionMismatch):
        idx.search([1, 0], 1)
    with pytest.raises(DimensionMismatch):
        idx.brute_force_search([1, 0], 1)


def test_param_validation():
    with pytest.raises(ValueError):
        HnswParams(m=16, ef_construction=8)
    with pytest.raises(ValueError):
        HnswParams(ef_search=0)
    assert HnswParams(m=16).level_lambda == pytest.approx(1 / np.log(16))


def test_degree_caps_and_symmetry(index1000):
    m = index1000.params.m
    for node in range(index1000.node_count):
        for level in range(index1000.level_of(node) + 1):
            nbrs = index1000.neighbors(node, level)
            assert len(nbrs) <= (2 * m if level == 0 else m)
            assert node not in nbrs
            for nb in nbrs:
                assert index1000.level_of(nb) >= level
                assert node in index1000.neighbors(nb, level)


def test_recall_2000x32_ef64():
    rng = np.random.default_rng(11)
    data = unit_rows(rng, 2000, 32)
    idx = build(data)
    assert mean_recall(idx, unit_rows(rng, 100, 32), ef=64) >= 0.95


def test_self_retrieval_rate(index1000, data1000):
    found = 0
    for i, v in enumerate(data1000):
        hit = index1000.search(v, 1)[0]
        found += hit.node == i and abs(hit.similarity - 1.0) < 1e-9
    assert found / len(data1000) >= 0.99


def test_similarities_match_dot_and_oracle_dominates(index1000, data1000):
    rng = np.random.default_rng(3)
    for q in unit_rows(rng, 20, 64):
        approx = index1000.search(q, 10)
        exact = index1000.brute_force_search(q, 10)
        for h in approx:
            assert abs(h.similarity - float(data1000[h.node] @ q)) < 1e-9
        sims = [h.similarity for h in approx]
        assert sims == sorted(sims, reverse=True)
        for e, a in zip(exact, approx):
            assert e.similarity >= a.similarity - 1e-12


def test_duplicate_ties_by_node_id():
    idx = HnswIndex(4)
    v = np.array([0.5, 0.5, 0.5, 0.5])
    idx.insert([1, 0, 0, 0])
    ids = [idx.insert(v) for _ in range(3)]
    assert [h.node for h in idx.search(v, 3)] == ids
    assert [h.node for h in idx.brute_force_search(v, 3)] == ids


def test_remove_semantics():
    idx = HnswIndex(2)
    a = idx.insert([1, 0])
    idx.insert([0.9, 0.1])
    assert idx.remove(a) is True
    assert idx.remove(a) is False
    assert idx.remove(99) is False
    assert all(h.node != a for h in idx.search([1, 0], 2))
    assert len(idx.search([1, 0], 5)) == 1


def test_entry_point_empty_iff_no_live_nodes():
    idx = HnswIndex(2)
    nodes = [idx.insert(v) for v in ([1, 0], [0, 1], [1, 1])]
    for n in nodes:
        assert idx.entry_point is not None
        idx.remove(n)
    assert idx.entry_point is None
    assert idx.search([1, 0], 1) == []


def test_recall_after_half_tombstoned():
    rng = np.random.default_rng(5)
    idx = build(unit_rows(rng, 1000, 64))
    for n in rng.permutation(1000)[:500]:
        idx.remove(int(n))
    queries = unit_rows(rng, 100, 64)
    assert mean_recall(idx, queries) >= 0.90
    for q in queries[:10]:
        assert len(idx.search(q, 10)) == 10


def test_rebuild_restores_recall():
    rng = np.random.default_rng(6)
    data = unit_rows(rng, 1000, 64)
    idx = build(data)
    dead = set(int(n) for n in rng.permutation(1000)[:300])
    for n in dead:
        idx.remove(n)
    fresh, mapping = idx.rebuild()
    assert len(fresh) == 700 and not fresh.tombstones
    assert sorted(mapping) == sorted(set(range(1000)) - dead)
    assert sorted(mapping.values()) == list(range(700))
    for old, new in mapping.items():
        np.testing.assert_array_equal(fresh.vector(new), data[old])
    assert fresh.params.seed == derive_seed(idx.params.seed)
    assert mean_recall(fresh, unit_rows(rng, 100, 64)) >= 0.95


def test_rebuild_edge_cases():
    idx = HnswIndex(2)
    for v in ([1, 0], [0, 1]):
        idx.insert(v)
    same, mapping = idx.rebuild()
    assert mapping == {0: 0, 1: 1} and len(same) == 2
    idx.remove(0)
    idx.remove(1)
    empty, mapping = idx.rebuild()
    assert len(empty) == 0 and mapping == {} and empty.entry_point is None


def test_determinism():
    rng = np.random.default_rng(8)
    data = unit_rows(rng, 500, 32)
    a, b = build(data, seed=42), build(data, seed=42)
    for q in unit_rows(rng, 30, 32):
        assert a.search(q, 10) == b.search(q, 10)


def test_stats_counters(index1000):
    idx = HnswIndex(8)
    rng = np.random.default_rng(9)
    for v in unit_rows(rng, 10, 8):
        idx.insert(v)
    assert idx.stats().live_count == 10
    before = index1000.stats().distance_count
    index1000.search(unit_rows(rng, 1, 64)[0], 5)
    mid = index1000.stats().distance_count
    index1000.search(unit_rows(rng, 1, 64)[0], 5)
    assert before < mid < index1000.stats().distance_count
