"""Constrained flow problem on a power network.

In nodal coordinates the problem is

    min_theta  1/2 ||P - P*||_M^2   s.t.   P_lo <= P = L theta + P_L <= P_hi

and in edge coordinates ``eta = V B^T theta`` the injections become
``P = B V eta + P_L`` with the box constraints row-scaled by
``K_I = diag(sqrt(k_I))``. Multipliers reported in :class:`KktPoint` belong to
the scaled (edge) constraints.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.linalg

from .errors import (
    AllNodesActive,
    AmbiguousActiveSet,
    DimensionMismatch,
    EmptyActiveSet,
    EnumerationTooLarge,
    NoKktPointFound,
    NumericalError,
    ValidationError,
)
from .graph import PowerNetwork, active_graph, symmetric_eigh

MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class FlowProblem:
    """Loads, setpoints, limits and gains of the constrained flow problem.

    All power quantities are per-unit. ``k_i`` holds the integral gains
    ``k_{I,i}``; the constraint scaling matrix uses their square roots.
    ``k_p`` is only used by the projection-based controller and defaults to
    ``k_i``.
    """

    net: PowerNetwork
    p_load: np.ndarray
    p_star: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    m: np.ndarray
    k_i: np.ndarray
    rho: float
    k_p: np.ndarray = None

    def __post_init__(self):
        n = self.net.n
        for name in ("p_load", "p_star", "p_lo", "p_hi", "m", "k_i", "k_p"):
            val = getattr(self, name)
            if val is None and name == "k_p":
                val = self.k_i
            arr = np.array(val, dtype=float).reshape(-1)
            if arr.shape != (n,):
                raise DimensionMismatch(f"{name} has length {arr.size}, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "rho", float(self.rho))
        for name in ("m", "k_i", "k_p"):
            if np.any(getattr(self, name) <= 0):
                raise ValidationError(f"gains {name} must be strictly positive")
        if not self.rho > 0:
            raise ValidationError(f"rho must be strictly positive, got {self.rho}")

    @property
    def n(self) -> int:
        return self.net.n

    @cached_property
    def sqrt_k(self) -> np.ndarray:
        """Diagonal of ``K_I``."""
        return np.sqrt(self.k_i)

    def with_load(self, p_load) -> "FlowProblem":
        return replace(self, p_load=np.asarray(p_load, dtype=float))

    def with_rho(self, rho: float) -> "FlowProblem":
        return replace(self, rho=float(rho))

    def with_network(self, net: PowerNetwork) -> "FlowProblem":
        return replace(self, net=net)

    def scaled(self, s: float) -> "FlowProblem":
        """Gains ``k_i -> s k_i`` and ``rho -> rho / sqrt(s)``; ``k_p`` untouched."""
        return replace(self, k_i=s * self.k_i, rho=self.rho / np.sqrt(s))


@dataclass(frozen=True)
class FeasibilityReport:
    limits_ordered: bool
    load_within_sums: bool
    setpoints_within_limits: bool
    messages: tuple[str, ...] = ()

    @property
    def assumption1(self) -> bool:
        """Limits ordered and total load strictly inside the total limits.

        Equivalent to the existence of angles with strictly feasible
        injections.
        """
        return self.limits_ordered and self.load_within_sums

    @property
    def assumption2(self) -> bool:
        return self.setpoints_within_limits

    @property
    def feasible(self) -> bool:
        return self.assumption1 and self.assumption2


def check_feasibility(fp: FlowProblem) -> FeasibilityReport:
    msgs = []
    ordered = bool(np.all(fp.p_lo < fp.p_hi))
    if not ordered:
        bad = np.flatnonzero(fp.p_lo >= fp.p_hi).tolist()
        msgs.append(f"P_lo < P_hi violated at nodes {bad}")
    s_lo, s_load, s_hi = fp.p_lo.sum(), fp.p_load.sum(), fp.p_hi.sum()
    within = bool(s_lo < s_load < s_hi)
    if not s_lo < s_load:
        msgs.append(f"sum(P_lo)={s_lo:.6g} < sum(P_L)={s_load:.6g} violated")
    if not s_load < s_hi:
        msgs.append(f"sum(P_L)={s_load:.6g} < sum(P_hi)={s_hi:.6g} violated")
    sp = bool(np.all((fp.p_lo < fp.p_star) & (fp.p_star < fp.p_hi)))
    if not sp:
        bad = np.flatnonzero(~((fp.p_lo < fp.p_star) & (fp.p_star < fp.p_hi))).tolist()
        msgs.append(f"P_lo < P* < P_hi violated at nodes {bad}")
    return FeasibilityReport(ordered, within, sp, tuple(msgs))


@dataclass(frozen=True)
class KktPoint:
    """Optimizer of the flow problem with multipliers of the scaled constraints."""

    theta: np.ndarray
    eta: np.ndarray
    P: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    active_lo: tuple[int, ...]
    active_hi: tuple[int, ...]
    omega_s: float
    residuals: dict = field(default_factory=dict, compare=False)

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(sorted(self.active_lo + self.active_hi))

    @property
    def inactive(self) -> tuple[int, ...]:
        act = set(self.active)
        return tuple(i for i in range(self.P.size) if i not in act)

    @property
    def mu(self) -> np.ndarray:
        return np.concatenate([self.mu_lo, self.mu_hi])

    def nodal_duals(self, fp: FlowProblem) -> tuple[np.ndarray, np.ndarray]:
        """Integrator states of the projection-free controller, ``K_I^{-1} mu``."""
        return self.mu_lo / fp.sqrt_k, self.mu_hi / fp.sqrt_k

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "eta": self.eta.tolist(),
            "P": self.P.tolist(),
            "mu_lo": self.mu_lo.tolist(),
            "mu_hi": self.mu_hi.tolist(),
            "active_lo": list(self.active_lo),
            "active_hi": list(self.active_hi),
            "omega_s": self.omega_s,
            "residuals": dict(self.residuals),
        }


def balance_frequency(fp: FlowProblem, active_lo, active_hi) -> float:
    """Synchronous frequency from power balance and droop at free nodes.

    ``omega_s = (sum_free P* + sum_hi P_hi + sum_lo P_lo - sum P_L) / sum_free 1/m``
    """
    lo, hi = list(active_lo), list(active_hi)
    free = [i for i in range(fp.n) if i not in set(lo) | set(hi)]
    if not free:
        raise AllNodesActive(f"all {fp.n} nodes are at a limit; omega_s is not determined")
    num = (
        fp.p_star[free].sum() + fp.p_hi[hi].sum() + fp.p_lo[lo].sum() - fp.p_load.sum()
    )
    return float(num / (1.0 / fp.m[free]).sum())


def _angles(fp: FlowProblem, P) -> np.ndarray:
    # gauge theta_0 = 0
    L = fp.net.L
    theta = np.zeros(fp.n)
    theta[1:] = np.linalg.solve(L[1:, 1:], (P - fp.p_load)[1:])
    return theta


def _solve_candidate(fp: FlowProblem, state):
    """Equality-constrained QP for one lower/free/upper assignment.

    ``state[i]`` is -1 (at lower limit), 0 (free) or +1 (at upper limit).
    Returns ``(P, nu, xi)`` with ``M (P - P*) + nu 1 + xi = 0`` or ``None``
    if the fixed injections are inconsistent with the power balance.
    """
    n = fp.n
    fixed = [i for i in range(n) if state[i] != 0]
    A = np.zeros((1 + len(fixed), n))
    A[0] = 1.0
    b = np.zeros(1 + len(fixed))
    b[0] = fp.p_load.sum()
    for r, i in enumerate(fixed, start=1):
        A[r, i] = 1.0
        b[r] = fp.p_hi[i] if state[i] > 0 else fp.p_lo[i]
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.diag(fp.m)
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([fp.m * fp.p_star, b])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(K, rhs, assume_a="sym", check_finite=False)
        ok = np.all(np.isfinite(sol))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        ok = False
    if not ok or len(fixed) == n:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    resid = np.linalg.norm(K @ sol - rhs)
    if resid > 1e-9 * max(1.0, np.linalg.norm(rhs)):
        return None
    P = sol[:n]
    y = sol[n:]
    xi = np.zeros(n)
    xi[fixed] = y[1:]
    return P, y[0], xi


def solve_kkt_oracle(fp: FlowProblem, tol: float = 1e-9) -> KktPoint:
    """Brute-force KKT point by enumerating all ``3^n`` active-set patterns.

    Each pattern fixes some injections at a limit; the remaining
    equality-constrained QP is solved through its (symmetric indefinite)
    KKT system and the pattern is accepted if the injections are feasible
    and the multipliers of the fixed injections have the right sign.

    Raises
    ------
    EnumerationTooLarge
        If ``3^n`` exceeds one million.
    NoKktPointFound
        No pattern passes (assumptions violated or numerical trouble).
    AmbiguousActiveSet
        More than one pattern passes; happens when a multiplier of an
        active constraint is zero (no strict complementarity).
    """
    n = fp.n
    if 3**n > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"3^{n} active-set patterns exceed {MAX_ENUMERATION}")
    p_scale = 1.0 + np.abs(np.concatenate([fp.p_lo, fp.p_hi, fp.p_star])).max()
    passing = []
    for state in itertools.product((-1, 0, 1), repeat=n):
        cand = _solve_candidate(fp, state)
        if cand is None:
            continue
        P, nu, xi = cand
        if np.any(P < fp.p_lo - tol * p_scale) or np.any(P > fp.p_hi + tol * p_scale):
            continue
        d_scale = 1.0 + np.abs(fp.m * (fp.p_star - P)).max()
        st = np.asarray(state)
        # upper: xi >= 0, lower: xi <= 0
        if np.any(xi[st > 0] < -tol * d_scale) or np.any(xi[st < 0] > tol * d_scale):
            continue
        passing.append((state, P, nu, xi))
    if not passing:
        raise NoKktPointFound("no active-set pattern satisfies the KKT conditions")
    if len(passing) > 1:
        pats = [p[0] for p in passing]
        raise AmbiguousActiveSet(f"{len(passing)} active-set patterns pass: {pats}")
    state, P, nu, xi = passing[0]
    st = np.asarray(state)
    active_lo = tuple(int(i) for i in np.flatnonzero(st < 0))
    active_hi = tuple(int(i) for i in np.flatnonzero(st > 0))
    # projected onto the box to remove rounding noise on fixed injections
    P = P.copy()
    P[list(active_lo)] = fp.p_lo[list(active_lo)]
    P[list(active_hi)] = fp.p_hi[list(active_hi)]
    mu_lo = np.zeros(n)
    mu_hi = np.zeros(n)
    mu_hi[st > 0] = np.maximum(xi[st > 0], 0.0) / fp.sqrt_k[st > 0]
    mu_lo[st < 0] = np.maximum(-xi[st < 0], 0.0) / fp.sqrt_k[st < 0]
    theta = _angles(fp, P)
    eta = fp.net.V @ fp.net.B.T @ theta
    kkt = KktPoint(
        theta=theta,
        eta=eta,
        P=P,
        mu_lo=mu_lo,
        mu_hi=mu_hi,
        active_lo=active_lo,
        active_hi=active_hi,
        omega_s=float(nu),
    )
    res = kkt_residuals(fp, kkt)
    object.__setattr__(kkt, "residuals", res)
    return kkt


def kkt_residuals(fp: FlowProblem, kkt: KktPoint) -> dict:
    """Primal, dual, complementarity and stationarity residuals (edge form)."""
    net = fp.net
    P = net.BV @ kkt.eta + fp.p_load
    g_lo = fp.sqrt_k * (fp.p_lo - P)
    g_hi = fp.sqrt_k * (P - fp.p_hi)
    grad = net.BV.T @ (fp.m * (P - fp.p_star) + fp.sqrt_k * (kkt.mu_hi - kkt.mu_lo))
    return {
        "primal": float(max(g_lo.max(), g_hi.max(), 0.0)),
        "dual": float(max(-kkt.mu_lo.min(), -kkt.mu_hi.min(), 0.0)),
        "complementarity": float(max(np.abs(kkt.mu_lo * g_lo).max(), np.abs(kkt.mu_hi * g_hi).max())),
        "stationarity": float(np.linalg.norm(grad)),
    }


def jacobian(fp: FlowProblem) -> np.ndarray:
    """Rows ``K_I B V`` of the (upper) constraints in edge coordinates."""
    return fp.sqrt_k[:, None] * fp.net.BV


def kappa(fp: FlowProblem, active: Iterable[int], agree_tol: float = 1e-10) -> float:
    """Smallest eigenvalue of the active-constraint Gram matrix.

    Computed from the Jacobian rows ``(K_I B V)_I`` and, independently, as
    ``lambda_min(K_{I,I} L_I K_{I,I})`` with ``L_I`` from
    :func:`~droopnet.graph.active_graph`; the two must agree to
    ``agree_tol``.
    """
    idx = sorted(set(int(i) for i in active))
    if not idx:
        raise EmptyActiveSet("kappa needs at least one active node")
    J = jacobian(fp)[idx, :]
    via_jac = symmetric_eigh(J @ J.T)[0][0]
    ag = active_graph(fp.net, idx)
    kd = fp.sqrt_k[idx]
    via_lap = symmetric_eigh(kd[:, None] * ag.L_I * kd[None, :])[0][0]
    if abs(via_jac - via_lap) > agree_tol:
        raise NumericalError(f"kappa routes disagree: {via_jac!r} vs {via_lap!r}")
    return float(max(via_lap, 0.0))


def check_licq(fp: FlowProblem, kkt: KktPoint, rtol: float = 1e-8) -> bool:
    """Linear independence of the active constraint gradients at ``kkt``."""
    idx = list(kkt.active)
    if not idx:
        return True
    sv = np.linalg.svd(jacobian(fp)[idx, :], compute_uv=False)
    if sv.size < len(idx):
        return False
    return bool(sv.min() > rtol * sv.max())


@dataclass(frozen=True)
class EdgeProblemData:
    """Matrices of the edge-coordinate problem.

    Objective ``1/2 eta^T Q eta + c^T eta`` with ``Q = V B^T M B V`` and
    ``c = V B^T M (P_L - P*)``; constraints ``lower <= A eta <= upper`` with
    ``A = K_I B V``.
    """

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def edge_problem_data(fp: FlowProblem) -> EdgeProblemData:
    BV = fp.net.BV
    Q = BV.T @ (fp.m[:, None] * BV)
    c = BV.T @ (fp.m * (fp.p_load - fp.p_star))
    A = jacobian(fp)
    return EdgeProblemData(
        Q=Q,
        c=c,
        A=A,
        lower=fp.sqrt_k * (fp.p_lo - fp.p_load),
        upper=fp.sqrt_k * (fp.p_hi - fp.p_load),
    )


def edge_distance(fp: FlowProblem, kkt: KktPoint, eta, mu_lo, mu_hi) -> np.ndarray:
    """Distance of edge-coordinate states to the KKT set.

    The KKT set is ``{eta : B V eta = P_opt - P_L} x {mu*}``; the component
    of ``eta`` in ``ker(B V)`` is free, so only the projection onto
    ``Im(V B^T)`` is compared. Accepts single states or stacked rows.
    """
    single = np.ndim(eta) == 1
    eta = np.atleast_2d(eta)
    mu_lo = np.atleast_2d(mu_lo)
    mu_hi = np.atleast_2d(mu_hi)
    d_eta = eta @ fp.net.edge_projector.T - kkt.eta
    d2 = (d_eta**2).sum(axis=1) + ((mu_lo - kkt.mu_lo) ** 2).sum(axis=1)
    d2 += ((mu_hi - kkt.mu_hi) ** 2).sum(axis=1)
    out = np.sqrt(d2)
    return float(out[0]) if single else out
