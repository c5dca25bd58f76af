import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fairmivr.socio_graph import (GraphError, ZoneSet, build_demo_correlation, build_distance_adjacency,
                                  build_zone_graph, enrich_adjacency, fairness_weights, normalize_adjacency,
                                  rank_one_decompose)

from oracles import gaussian_kernel, leading_triple, pearson


def zones(xy):
    return ZoneSet(tuple(range(1, len(xy) + 1)), np.asarray(xy, dtype=float))


def test_kernel_diagonal_is_one():
    W = build_distance_adjacency(zones([(0, 0), (500, 0), (0, 900)]))
    assert np.allclose(np.diag(W), 1.0)


def test_kernel_at_sigma():
    # with two zones the pairwise distances have zero spread, so use three
    # collinear zones and check the pair whose distance equals sigma
    xy = [(0, 0), (1, 0), (3, 0)]  # distances 1, 3, 2 -> std sqrt(2/3)
    W = build_distance_adjacency(zones(xy))
    sigma = math.sqrt(2 / 3)
    assert W[0, 1] == pytest.approx(math.exp(-1 / sigma**2), abs=1e-15)


def test_kernel_three_zone_oracle():
    xy = [(0, 0), (1000, 0), (0, 2000)]
    W = build_distance_adjacency(zones(xy))
    np.testing.assert_allclose(W, gaussian_kernel(xy), rtol=0, atol=1e-14)


def test_kernel_needs_spread():
    with pytest.raises(GraphError):
        build_distance_adjacency(zones([(0, 0), (1, 0)]))


def test_correlation_examples():
    z = np.array([[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1], [0, 0, 0, 0], [0.1, 0.2, 0.3, 0.4]])
    C = build_demo_correlation(z)
    assert C[0, 3] == pytest.approx(1.0)
    assert C[0, 1] == pytest.approx(-1.0)
    assert np.all(C[2] == 0) and np.all(C[:, 2] == 0)


def test_correlation_matches_scalar_pearson():
    rng = np.random.default_rng(3)
    z = rng.random((5, 6))
    C = build_demo_correlation(z)
    for i in range(5):
        for j in range(5):
            assert C[i, j] == pytest.approx(pearson(z[i], z[j]), abs=1e-12)


def test_correlation_constant_vector_is_zero():
    C = build_demo_correlation(np.array([[0.3, 0.3, 0.3], [0.1, 0.5, 0.2]]))
    assert C[0, 0] == 0 and C[0, 1] == 0
    assert C[1, 1] == pytest.approx(1.0)


def test_enrich_examples():
    W = np.array([[1.0, 0.5], [0.5, 1.0]])
    C = np.array([[1.0, 0.1], [0.1, 1.0]])
    out = enrich_adjacency(W, C)
    assert out[0, 0] == 1.0 and out[0, 1] == 0.0


def test_enrich_random_oracle():
    rng = np.random.default_rng(11)
    W, C = rng.random((4, 4)), rng.uniform(-1, 1, (4, 4))
    out = enrich_adjacency(W, C)
    for i in range(4):
        for j in range(4):
            p = W[i, j] * C[i, j]
            assert out[i, j] == (p if p >= 0.1 else 0.0)


def test_enrich_shape_mismatch():
    with pytest.raises(GraphError):
        enrich_adjacency(np.eye(2), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-1, 1)), arrays(np.float64, (5, 5), elements=st.floats(0, 1)))
def test_enriched_entries_are_zero_or_above_threshold(C, W):
    out = enrich_adjacency(W, C)
    assert np.all((out == 0) | (out >= 0.1))
    assert np.count_nonzero(out) <= np.count_nonzero(W)


def test_rank_one_exact_input():
    u, v = np.array([1.0, 2.0, 0.5]), np.array([3.0, 0.0, 4.0])
    r = rank_one_decompose(np.outer(u, v))
    assert r.value == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)
    np.testing.assert_allclose(r.left, u / np.linalg.norm(u), atol=1e-10)
    np.testing.assert_allclose(r.right, v / np.linalg.norm(v), atol=1e-10)


def test_rank_one_identity():
    r = rank_one_decompose(np.eye(2))
    assert r.value == pytest.approx(1.0)
    assert np.linalg.norm(np.eye(2) - r.matrix()) == pytest.approx(1.0, abs=1e-9)


def test_rank_one_against_jacobi_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        A = rng.random((5, 5))
        A = (A + A.T) / 2
        sigma, u, v = leading_triple(A)
        r = rank_one_decompose(A)
        assert r.value == pytest.approx(sigma, abs=1e-8)
        np.testing.assert_allclose(r.matrix(), sigma * np.outer(u, v), atol=1e-8)


def test_rank_one_sign_and_norms():
    r = rank_one_decompose(-np.outer([1.0, 2.0], [1.0, 3.0]))
    assert r.value > 0
    assert r.right[np.argmax(np.abs(r.right))] > 0
    assert np.linalg.norm(r.left) == pytest.approx(1.0)
    assert np.linalg.norm(r.right) == pytest.approx(1.0)


def test_rank_one_zero_matrix():
    with pytest.raises(GraphError):
        rank_one_decompose(np.zeros((3, 3)))


def test_weights_examples():
    np.testing.assert_allclose(fairness_weights([0, 1, 3]), [1.0, 1 - 0.1 / 3, 0.9])
    assert np.all(fairness_weights([2.0, 2.0]) == 1.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 10), elements=st.floats(-10, 10)))
def test_weights_range(b):
    w = fairness_weights(b)
    assert np.all((w >= 0.9 - 1e-12) & (w <= 1.0))
    if np.ptp(b) > 0:
        assert w.min() == pytest.approx(0.9) and w.max() == 1.0


def test_normalize_rows():
    out = normalize_adjacency(np.array([[2.0, 2.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 3.0]]))
    np.testing.assert_allclose(out[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(out[1], [0.0, 1.0, 0.0])
    rng = np.random.default_rng(2)
    assert np.allclose(normalize_adjacency(rng.random((4, 4))).sum(axis=1), 1.0, atol=1e-12)


def test_zone_graph_two_clusters():
    xy = [(0, 0), (800, 0), (0, 800), (6000, 0), (0, 6000), (-6000, 0)]
    years = 3
    demo = []
    for i in range(6):
        base = 0.2 if i < 3 else 0.5
        trend = -0.01 if i < 3 else 0.02
        demo.append([base + trend * t + 0.001 * i for t in range(years)] * 2)
    g = build_zone_graph(zones(xy), np.array(demo))
    assert np.all(g.weights >= 0.9) and np.all(g.weights <= 1.0)
    assert np.allclose(g.normalized.sum(axis=1), 1.0)
    assert np.allclose(g.distance_adjacency, g.distance_adjacency.T)


def test_zoneset_validation():
    with pytest.raises(GraphError):
        ZoneSet((1, 1), np.zeros((2, 2)))
    with pytest.raises(GraphError):
        ZoneSet((1, 2), np.zeros((3, 2)))
