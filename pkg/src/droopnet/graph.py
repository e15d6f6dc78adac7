"""Weighted undirected power networks and their spectral quantities.

Edges are stored as ``(i, j, w)`` with ``i < j``. The oriented incidence
matrix ``B`` has ``-1`` in row ``i`` and ``+1`` in row ``j`` of the column of
edge ``(i, j)``, so that ``(B.T @ theta)[k] = theta[j] - theta[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    DuplicateEdge,
    EigensolverFailure,
    NonpositiveWeight,
    ValidationError,
)

#: eigenvalues below this fraction of the largest one are treated as zero
ZERO_EIG_RTOL = 1e-9


def symmetric_eigh(A, residual_rtol=1e-10):
    """Eigen-decomposition of a real symmetric matrix with a residual check.

    Returns ascending eigenvalues and orthonormal eigenvectors (columns).
    Raises :class:`EigensolverFailure` if LAPACK does not converge or the
    residual ``max_k ||A v_k - lam_k v_k||`` exceeds ``residual_rtol * ||A||``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    if not np.all(np.isfinite(A)):
        raise EigensolverFailure("matrix has non-finite entries")
    A = 0.5 * (A + A.T)
    try:
        vals, vecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    scale = max(np.linalg.norm(A, 2), 1.0)
    resid = np.linalg.norm(A @ vecs - vecs * vals, axis=0).max()
    if not np.isfinite(resid) or resid > residual_rtol * scale:
        raise EigensolverFailure(f"eigen-residual {resid:.3e} exceeds tolerance")
    return vals, vecs


def smallest_positive_eigenvalue(vals):
    """Smallest eigenvalue above the zero threshold ``ZERO_EIG_RTOL * max``."""
    vals = np.asarray(vals)
    top = vals.max()
    pos = vals[vals > ZERO_EIG_RTOL * max(top, 0.0)]
    if pos.size == 0:
        raise EigensolverFailure("no positive eigenvalue")
    return float(pos.min())


@dataclass(frozen=True)
class PowerNetwork:
    """Simple, connected, undirected graph with positive edge weights.

    Use :func:`build_network` to construct one; the derived matrices are
    computed lazily and cached. Instances are treated as immutable.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    @property
    def e(self) -> int:
        return len(self.edges)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.edges], dtype=float)

    @cached_property
    def B(self) -> np.ndarray:
        """Oriented incidence matrix, shape ``(n, e)``."""
        B = np.zeros((self.n, self.e))
        for k, (i, j, _) in enumerate(self.edges):
            B[i, k] = -1.0
            B[j, k] = 1.0
        return B

    @cached_property
    def W(self) -> np.ndarray:
        return np.diag(self.weights)

    @cached_property
    def V(self) -> np.ndarray:
        return np.diag(np.sqrt(self.weights))

    @cached_property
    def BV(self) -> np.ndarray:
        return self.B * np.sqrt(self.weights)

    @cached_property
    def L(self) -> np.ndarray:
        """Weighted Laplacian ``B W B^T``."""
        return (self.B * self.weights) @ self.B.T

    @cached_property
    def L_edge(self) -> np.ndarray:
        """Edge Laplacian ``V B^T B V``."""
        return self.BV.T @ self.BV

    @cached_property
    def degrees(self) -> np.ndarray:
        """Unweighted node degrees."""
        return np.abs(self.B).sum(axis=1).astype(int)

    @cached_property
    def edge_projector(self) -> np.ndarray:
        """Orthogonal projector onto ``Im(V B^T)`` in edge space."""
        return np.linalg.pinv(self.BV) @ self.BV

    def has_edge(self, i: int, j: int) -> bool:
        a, b = min(i, j), max(i, j)
        return any(p == a and q == b for p, q, _ in self.edges)

    def with_edge(self, i: int, j: int, w: float) -> "PowerNetwork":
        a, b = min(i, j), max(i, j)
        return build_network(self.n, list(self.edges) + [(a, b, w)])

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}


def build_network(n: int, edges: Iterable[Sequence]) -> PowerNetwork:
    """Validate an edge list and return a :class:`PowerNetwork`.

    Parameters
    ----------
    n : int
        Number of nodes (at least two).
    edges : iterable of (i, j, w)
        Undirected edges with ``0 <= i < j < n`` and susceptance ``w > 0``.

    Raises
    ------
    DimensionMismatch
        If ``n < 2`` or an edge index is out of range or ``i >= j``.
    DuplicateEdge, NonpositiveWeight, DisconnectedGraph
    """
    n = int(n)
    if n < 2:
        raise DimensionMismatch(f"a network needs at least two nodes, got n={n}")
    seen = set()
    clean = []
    for edge in edges:
        if len(edge) != 3:
            raise ValidationError(f"edge {edge!r} is not a triple (i, j, w)")
        i, j, w = int(edge[0]), int(edge[1]), float(edge[2])
        if not (0 <= i < j < n):
            raise DimensionMismatch(f"edge ({i}, {j}) violates 0 <= i < j < {n}")
        if (i, j) in seen:
            raise DuplicateEdge(f"edge ({i}, {j}) appears twice")
        if not (w > 0 and np.isfinite(w)):
            raise NonpositiveWeight(f"edge ({i}, {j}) has weight {w}")
        seen.add((i, j))
        clean.append((i, j, w))
    rows = [i for i, _, _ in clean]
    cols = [j for _, j, _ in clean]
    adj = coo_matrix((np.ones(len(clean)), (rows, cols)), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise DisconnectedGraph(f"network has {ncomp} connected components")
    return PowerNetwork(n=n, edges=tuple(clean))


@dataclass(frozen=True)
class SpectralSummary:
    lambda_max: float
    lambda_min_plus: float
    d_max: int
    w_min: float
    w_max: float
    w_sigma: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def lower_bound(self) -> float:
        """``w_min (1 + d_max)``."""
        return self.w_min * (1 + self.d_max)

    @property
    def upper_bound(self) -> float:
        """``2 w_max d_max``."""
        return 2.0 * self.w_max * self.d_max


def spectral_summary(net: PowerNetwork) -> SpectralSummary:
    """Laplacian spectrum summary with the degree/weight eigenvalue bounds.

    The bounds ``w_min (1 + d_max) <= lambda_max(L) <= 2 w_max d_max`` are
    checked and a :class:`EigensolverFailure` is raised if the computed
    spectrum violates them beyond rounding.
    """
    vals, _ = symmetric_eigh(net.L)
    w = net.weights
    s = SpectralSummary(
        lambda_max=float(vals[-1]),
        lambda_min_plus=smallest_positive_eigenvalue(vals),
        d_max=int(net.degrees.max()),
        w_min=float(w.min()),
        w_max=float(w.max()),
        w_sigma=float(w.sum()),
        eigenvalues=vals,
    )
    slack = 1e-10 * max(s.lambda_max, 1.0)
    if not (s.lower_bound - slack <= s.lambda_max <= s.upper_bound + slack):
        raise EigensolverFailure(
            f"lambda_max={s.lambda_max} outside [{s.lower_bound}, {s.upper_bound}]"
        )
    return s


@dataclass(frozen=True)
class ActiveGraph:
    """Laplacian restricted to an active node set.

    Edges between two active nodes keep their off-diagonal coupling; edges
    from an active to an inactive node only contribute to the diagonal
    (they appear as self-loops).
    """

    active_nodes: tuple[int, ...]
    B_I: np.ndarray
    W_I: np.ndarray
    L_I: np.ndarray


def active_graph(net: PowerNetwork, active: Iterable[int]) -> ActiveGraph:
    nodes = tuple(sorted(set(int(i) for i in active)))
    if any(i < 0 or i >= net.n for i in nodes):
        raise DimensionMismatch(f"active set {nodes} not within 0..{net.n - 1}")
    idx = list(nodes)
    B_I = net.B[idx, :]
    touched = np.abs(B_I).sum(axis=0) > 0
    W_I = np.diag(np.where(touched, net.weights, 0.0))
    L_I = (B_I * np.diag(W_I)) @ B_I.T
    return ActiveGraph(active_nodes=nodes, B_I=B_I, W_I=W_I, L_I=L_I)
