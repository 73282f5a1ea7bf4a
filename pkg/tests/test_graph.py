import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatgait.errors import DisconnectedGraphError, ZeroDegreeError
from heatgait.graph import (
    UNREACHABLE,
    SkeletonGraph,
    aggregation_operators,
    bias_report,
    coco17,
    hop_adjacency_set,
    hop_distances,
    k_adjacency,
    path_graph,
    polynomial_adjacency,
    sym_normalize,
)
from oracles import floyd_warshall, k_adjacency_by_definition, naive_matrix_power, random_connected_graph


@st.composite
def connected_graphs(draw, max_vertices=20):
    seed = draw(st.integers(0, 2**32 - 1))
    m, edges = random_connected_graph(np.random.default_rng(seed), max_vertices)
    return SkeletonGraph(m, tuple(edges))


def test_skeleton_graph_invariants():
    a = coco17().adjacency
    assert (a == a.T).all()
    assert (np.diag(a) == 0).all()
    assert set(np.unique(a)) <= {0, 1}
    assert a.sum() == 2 * 16
    with pytest.raises(ValueError):
        SkeletonGraph(3, ((0, 0),))
    with pytest.raises(ValueError):
        SkeletonGraph(3, ((0, 3),))


def test_hop_distances_path():
    assert hop_distances(path_graph(3)).tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]


def test_hop_distances_single_vertex_and_empty():
    assert hop_distances(SkeletonGraph(1, ())).tolist() == [[0]]
    assert hop_distances(SkeletonGraph(0, ())).tolist() == []


def test_unreachable_sentinel():
    d = hop_distances(SkeletonGraph(3, ((0, 1),)))
    assert d[0, 2] is UNREACHABLE
    assert d[0, 1] == 1
    assert not d.connected
    k = k_adjacency(SkeletonGraph(3, ((0, 1),)), 0)
    assert (k == np.eye(3)).all()
    with pytest.raises(DisconnectedGraphError):
        d.diameter()


def test_hop_distances_match_floyd_warshall_50_graphs():
    rng = np.random.default_rng(1234)
    for _ in range(50):
        m, edges = random_connected_graph(rng, 20)
        d = hop_distances(SkeletonGraph(m, tuple(edges))).tolist()
        assert d == floyd_warshall(m, edges)


@given(connected_graphs())
@settings(max_examples=60, deadline=None)
def test_hop_distance_metric_properties(g):
    d = hop_distances(g)
    h = d.hops
    assert (np.diag(h) == 0).all()
    assert (h == h.T).all()
    m = g.num_vertices
    # triangle inequality
    assert (h[:, None, :] <= h[:, :, None] + h[None, :, :]).all() or m == 0


def test_k_adjacency_examples():
    p = path_graph(3)
    assert (k_adjacency(p, 0) == np.eye(3)).all()
    assert (k_adjacency(p, 1) == p.adjacency + np.eye(3)).all()
    assert (k_adjacency(p, 2) == [[1, 0, 1], [0, 1, 0], [1, 0, 1]]).all()
    g = coco17()
    assert (k_adjacency(g, 1) == g.adjacency + np.eye(17)).all()


@given(connected_graphs())
@settings(max_examples=60, deadline=None)
def test_k_adjacency_matches_definition(g):
    diam = hop_distances(g).diameter()
    for k in range(diam + 2):
        expected = k_adjacency_by_definition(g.num_vertices, g.edges, k)
        assert np.array_equal(k_adjacency(g, k), expected)


@given(connected_graphs())
@settings(max_examples=60, deadline=None)
def test_hop_adjacency_partition(g):
    diam = hop_distances(g).diameter()
    mats = hop_adjacency_set(g, diam)
    assert (mats[0] == np.eye(g.num_vertices)).all()
    off = np.ones((g.num_vertices,) * 2, dtype=bool) & ~np.eye(g.num_vertices, dtype=bool)
    cover = sum(m for m in mats[1:]) if diam else np.zeros_like(mats[0])
    # every distinct pair is covered by exactly one scale k >= 1
    assert (np.asarray(cover)[off] == 1).all()
    for m in mats:
        assert (m == m.T).all() and (np.diag(m) == 1).all()


def test_sym_normalize_examples():
    assert np.allclose(sym_normalize(np.eye(4)), np.eye(4))
    assert np.allclose(sym_normalize(np.ones((2, 2))), 0.5)
    s6 = 1 / math.sqrt(6)
    expected = np.array([[1 / 2, s6, 0], [s6, 1 / 3, s6], [0, s6, 1 / 2]])
    np.testing.assert_allclose(sym_normalize(k_adjacency(path_graph(3), 1)), expected, rtol=0, atol=1e-15)


def test_sym_normalize_zero_degree():
    with pytest.raises(ZeroDegreeError):
        sym_normalize(np.array([[0.0, 0.0], [0.0, 1.0]]))


def _power_iteration(a, iters=2000):
    v = np.ones(a.shape[0]) / math.sqrt(a.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = a @ v
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


@given(connected_graphs())
@settings(max_examples=40, deadline=None)
def test_sym_normalize_symmetric_with_spectral_radius_at_most_one(g):
    n = sym_normalize(g.adjacency + np.eye(g.num_vertices))
    assert np.allclose(n, n.T, atol=0)
    assert _power_iteration(n) <= 1 + 1e-6


def test_polynomial_adjacency_examples():
    p = path_graph(3)
    a_hat = sym_normalize(p.adjacency + np.eye(3))
    assert np.allclose(polynomial_adjacency(p, 0), np.eye(3))
    assert np.allclose(polynomial_adjacency(p, 1), a_hat, atol=0)
    np.testing.assert_allclose(polynomial_adjacency(p, 2), naive_matrix_power(a_hat, 2), rtol=0, atol=1e-12)
    np.testing.assert_allclose(polynomial_adjacency(p, 7), naive_matrix_power(a_hat, 7), rtol=0, atol=1e-12)


@given(connected_graphs(max_vertices=12), st.integers(0, 6), st.integers(0, 6))
@settings(max_examples=40, deadline=None)
def test_polynomial_adjacency_semigroup(g, j, k):
    lhs = polynomial_adjacency(g, j + k)
    rhs = polynomial_adjacency(g, j) @ polynomial_adjacency(g, k)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_biased_weighting_on_path5(k):
    a = polynomial_adjacency(path_graph(5), k)
    assert a[0, 1] > a[0, k]


def test_bias_report_path5():
    rep = bias_report(path_graph(5), 4, centers=[0])
    row = next(r for r in rep.rows if r.scale == 3)
    assert row.poly_mean_d1 > row.poly_mean_dk
    for r in rep.rows:
        assert r.poly_biased


def test_raw_hop_adjacency_uniform_weights():
    g = coco17()
    for k in range(1, 5):
        a = k_adjacency(g, k)
        off = a[~np.eye(17, dtype=bool)]
        assert set(np.unique(off)) <= {0, 1}


def test_bias_report_coco_nose():
    rep = bias_report(coco17(), 4, centers=[0])
    assert [r.scale for r in rep.rows] == [2, 3, 4]
    assert all(r.poly_mean_d1 > r.poly_mean_dk for r in rep.rows)
    rows = json.loads(rep.to_json())
    assert set(rows[0]) == {"center", "scale", "poly_mean_d1", "poly_mean_dk", "hop_mean_d1", "hop_mean_dk"}
    table = rep.to_table().splitlines()
    assert len(table) == 4 and "poly_mean_d1" in table[0]


def test_bias_report_errors():
    with pytest.raises(DisconnectedGraphError):
        bias_report(SkeletonGraph(3, ((0, 1),)), 2)
    with pytest.raises(ValueError):
        bias_report(path_graph(3), 1)


def test_aggregation_operators_k1_agree():
    g = coco17()
    hop = aggregation_operators(g, 1, "hop_extracted")
    poly = aggregation_operators(g, 1, "polynomial")
    np.testing.assert_allclose(hop, poly, rtol=0, atol=1e-15)
