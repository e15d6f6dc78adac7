import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droopnet.errors import (
    DimensionMismatch,
    DisconnectedGraph,
    DuplicateEdge,
    EigensolverFailure,
    NonpositiveWeight,
)
from droopnet.graph import active_graph, build_network, spectral_summary, symmetric_eigh
from droopnet.testing import random_network


def laplacian_by_hand(n, edges):
    L = np.zeros((n, n))
    for i, j, w in edges:
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    return L


def test_incidence_orientation_two_nodes():
    net = build_network(2, [(0, 1, 1.0)])
    eta = net.BV.T @ np.array([1.0, 0.0])
    assert eta == pytest.approx([-1.0])
    assert net.B[:, 0].tolist() == [-1.0, 1.0]


def test_laplacian_matches_definition(rng):
    for _ in range(20):
        net = random_network(int(rng.integers(2, 8)), rng)
        assert np.allclose(net.L, laplacian_by_hand(net.n, net.edges))
        assert np.allclose(net.L @ np.ones(net.n), 0)


def test_edge_laplacian_shares_nonzero_spectrum(rng):
    net = random_network(6, rng, extra=0.6)
    a = np.sort(np.linalg.eigvalsh(net.L))
    b = np.sort(np.linalg.eigvalsh(net.L_edge))
    tol = 1e-9 * a[-1]
    assert np.allclose(a[a > tol], b[b > tol])


def test_path_is_tight():
    net = build_network(3, [(0, 1, 1.0), (1, 2, 1.0)])
    s = spectral_summary(net)
    assert s.lambda_max == pytest.approx(3.0)
    assert s.lower_bound == pytest.approx(3.0)
    assert s.upper_bound == pytest.approx(4.0)
    assert s.lambda_min_plus == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 9))
def test_eigenvalue_bounds_property(seed, n):
    r = np.random.default_rng(seed)
    net = random_network(n, r, extra=float(r.uniform(0, 1)), w_range=(0.1, 5.0))
    s = spectral_summary(net)
    assert s.lower_bound <= s.lambda_max * (1 + 1e-12)
    assert s.lambda_max <= s.upper_bound * (1 + 1e-12)


@pytest.mark.parametrize("n, edges, exc", [
    (1, [], DimensionMismatch),
    (3, [(0, 1, 1.0)], DisconnectedGraph),
    (2, [(0, 1, 1.0), (0, 1, 2.0)], DuplicateEdge),
    (2, [(0, 1, 0.0)], NonpositiveWeight),
    (2, [(0, 1, -1.0)], NonpositiveWeight),
    (2, [(0, 2, 1.0)], DimensionMismatch),
    (2, [(1, 0, 1.0)], DimensionMismatch),
])
def test_build_network_rejects(n, edges, exc):
    with pytest.raises(exc):
        build_network(n, edges)


def test_active_graph_is_grounded_laplacian(rng):
    for _ in range(20):
        net = random_network(int(rng.integers(3, 8)), rng)
        k = int(rng.integers(1, net.n))
        act = sorted(rng.choice(net.n, size=k, replace=False).tolist())
        ag = active_graph(net, act)
        assert np.allclose(ag.L_I, net.L[np.ix_(act, act)])
        # proper subset of a connected graph: positive definite
        assert np.linalg.eigvalsh(ag.L_I).min() > 0


def test_active_graph_boundary_edges_are_self_loops():
    net = build_network(3, [(0, 1, 2.0), (1, 2, 3.0)])
    ag = active_graph(net, [0])
    assert ag.L_I.tolist() == [[2.0]]
    assert np.diag(ag.W_I).tolist() == [2.0, 0.0]


def test_edge_projector(rng):
    net = random_network(6, rng, extra=0.7)
    Pi = net.edge_projector
    assert np.allclose(Pi @ Pi, Pi)
    assert np.allclose(Pi, Pi.T)
    # rank equals n - 1 for a connected graph
    assert np.linalg.matrix_rank(Pi) == net.n - 1


def test_with_edge_and_has_edge():
    net = build_network(3, [(0, 1, 1.0), (1, 2, 1.0)])
    assert net.has_edge(1, 0) and not net.has_edge(0, 2)
    net2 = net.with_edge(2, 0, 0.5)
    assert net2.has_edge(0, 2) and net2.e == 3
    assert net.e == 2
    with pytest.raises(DuplicateEdge):
        net2.with_edge(0, 2, 1.0)


def test_symmetric_eigh():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    vals, vecs = symmetric_eigh(A)
    assert vals == pytest.approx([1.0, 3.0])
    assert np.allclose(vecs.T @ vecs, np.eye(2))
    with pytest.raises(EigensolverFailure):
        symmetric_eigh(np.array([[np.nan, 0.0], [0.0, 1.0]]))
