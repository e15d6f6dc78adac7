"""Networked frequency dynamics under power-limiting droop control.

Three systems are provided:

``projection_free``
    nodal dynamics of the projection-free controller; per node

        d theta_i/dt = m_i (P*_i - P_i) - k_i [rho (P_i - P_hi,i) + lam_hi,i]_+
                                        + k_i [rho (P_lo,i - P_i) + lam_lo,i]_+
        rho d lam/dt = [rho g(P) + lam]_+ - lam

``projection_based``
    nodal dynamics of the projection-based controller with integrators
    projected onto the tangent cone of the nonnegative orthant and a
    proportional channel acting on limit violations.

``edge_primal_dual``
    primal-dual gradient dynamics of the augmented Lagrangian of the
    edge-coordinate problem, state ``(eta, mu)``.

Under ``eta = V B^T theta`` and ``mu = K_I lambda`` the projection-free
nodal trajectories map exactly onto the edge trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, NegativeDualState, NonFiniteState, ValidationError
from .flowproblem import FlowProblem, edge_problem_data

TANGENT_CONE_TOL = 1e-12


def project_nonneg(v):
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def constraint_function(fp: FlowProblem, P_net) -> tuple[np.ndarray, np.ndarray]:
    """Limit violations ``g_lo = P_lo - P_net - P_L`` and ``g_hi = P_net + P_L - P_hi``.

    ``P_net`` is the network part ``L theta`` (or ``B V eta``) of the injections.
    """
    P = np.asarray(P_net, dtype=float) + fp.p_load
    return fp.p_lo - P, P - fp.p_hi


@dataclass(frozen=True)
class NodalState:
    theta: np.ndarray
    lambda_lo: np.ndarray
    lambda_hi: np.ndarray

    @classmethod
    def from_vector(cls, x, n: int) -> "NodalState":
        x = np.asarray(x, dtype=float)
        if x.shape != (3 * n,):
            raise DimensionMismatch(f"nodal state has shape {x.shape}, expected ({3 * n},)")
        return cls(x[:n].copy(), x[n : 2 * n].copy(), x[2 * n :].copy())

    @classmethod
    def zeros(cls, n: int) -> "NodalState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.lambda_lo, self.lambda_hi]).astype(float)


@dataclass(frozen=True)
class EdgeState:
    eta: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray

    @classmethod
    def from_vector(cls, x, e: int, n: int) -> "EdgeState":
        x = np.asarray(x, dtype=float)
        if x.shape != (e + 2 * n,):
            raise DimensionMismatch(f"edge state has shape {x.shape}, expected ({e + 2 * n},)")
        return cls(x[:e].copy(), x[e : e + n].copy(), x[e + n :].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.mu_lo, self.mu_hi]).astype(float)


def _as_array(v, n, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} has length {arr.size}, expected {n}")
    return arr


class System:
    """A vector field built from a flow problem, with a fixed-step stepper.

    Subclasses define ``kind``, ``method`` and the compiled kernel; the load
    vector is a runtime argument so that load steps need no rebuild.
    """

    kind: str
    method: str

    def __init__(self, fp: FlowProblem):
        self.fp = fp
        self.n = fp.n
        self.e = fp.net.e

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def params(self, p_load) -> tuple:
        raise NotImplementedError

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"state has shape {x.shape}, expected ({self.dim},)")
        return x

    def __call__(self, x, p_load=None) -> np.ndarray:
        p_load = self.fp.p_load if p_load is None else np.asarray(p_load, dtype=float)
        x = np.ascontiguousarray(self.check_state(x))
        return self._kernel(x, self.params(p_load))

    def advance(self, x, p_load, dt, nsteps, offset=0, every=1):
        f = self._kernel
        x = np.ascontiguousarray(x, dtype=float)
        if self.method == "rk4":
            return _kernels.rk4_run(f, x, self.params(p_load), dt, nsteps, offset, every)
        return _kernels.euler_clamp_run(
            f, x, self.params(p_load), dt, nsteps, offset, every, self.dim - 2 * self.n
        )

    # gauge-free pieces of the state and its derivative
    def edge_view(self, x) -> np.ndarray:
        raise NotImplementedError

    def injections(self, x, p_load) -> np.ndarray:
        raise NotImplementedError


class _Nodal(System):
    @property
    def dim(self) -> int:
        return 3 * self.n

    def edge_view(self, x):
        x = np.atleast_2d(x)
        n = self.n
        eta = x[:, :n] @ self.fp.net.BV
        return np.hstack([eta, x[:, n:]])

    def injections(self, x, p_load):
        x = np.atleast_2d(x)
        return x[:, : self.n] @ self.fp.net.L.T + p_load


class ProjectionFreeNodal(_Nodal):
    kind = "projection_free"
    method = "rk4"
    _kernel = staticmethod(_kernels.projection_free_nodal)

    def params(self, p_load):
        fp = self.fp
        return (
            np.ascontiguousarray(fp.net.L),
            np.asarray(p_load, dtype=float),
            fp.p_star, fp.p_lo, fp.p_hi, fp.m, fp.k_i, fp.rho,
        )


class ProjectionBasedNodal(_Nodal):
    kind = "projection_based"
    method = "euler_clamp"
    _kernel = staticmethod(_kernels.projection_based_nodal)

    def params(self, p_load):
        fp = self.fp
        return (
            np.ascontiguousarray(fp.net.L),
            np.asarray(p_load, dtype=float),
            fp.p_star, fp.p_lo, fp.p_hi, fp.m, fp.sqrt_k, fp.k_p, TANGENT_CONE_TOL,
        )

    def check_state(self, x):
        x = super().check_state(x)
        if np.any(x[self.n :] < 0):
            raise NegativeDualState("projection-based integrators must start nonnegative")
        return x


class PrimalDualEdge(System):
    kind = "edge_primal_dual"
    method = "rk4"
    _kernel = staticmethod(_kernels.primal_dual_edge)

    @property
    def dim(self) -> int:
        return self.e + 2 * self.n

    def params(self, p_load):
        fp = self.fp
        BV = np.ascontiguousarray(fp.net.BV)
        return (
            BV, np.ascontiguousarray(BV.T),
            np.asarray(p_load, dtype=float),
            fp.p_star, fp.p_lo, fp.p_hi, fp.m, fp.sqrt_k, fp.rho,
        )

    def edge_view(self, x):
        return np.atleast_2d(x)

    def injections(self, x, p_load):
        x = np.atleast_2d(x)
        return x[:, : self.e] @ self.fp.net.BV.T + p_load


SYSTEMS = {
    cls.kind: cls for cls in (ProjectionFreeNodal, ProjectionBasedNodal, PrimalDualEdge)
}


def make_system(fp: FlowProblem, kind: str) -> System:
    try:
        return SYSTEMS[kind](fp)
    except KeyError:
        raise ValidationError(f"unknown controller {kind!r}; choose from {sorted(SYSTEMS)}") from None


def rhs_projection_free_nodal(fp: FlowProblem, state: NodalState) -> NodalState:
    """Time derivative of the projection-free nodal dynamics.

    The ``theta`` component is the vector of node frequencies ``omega``.
    """
    n = fp.n
    x = np.concatenate([
        _as_array(state.theta, n, "theta"),
        _as_array(state.lambda_lo, n, "lambda_lo"),
        _as_array(state.lambda_hi, n, "lambda_hi"),
    ])
    return NodalState.from_vector(ProjectionFreeNodal(fp)(x), n)


def rhs_projection_based_nodal(fp: FlowProblem, state: NodalState) -> NodalState:
    n = fp.n
    x = np.concatenate([
        _as_array(state.theta, n, "theta"),
        _as_array(state.lambda_lo, n, "lambda_lo"),
        _as_array(state.lambda_hi, n, "lambda_hi"),
    ])
    sys = ProjectionBasedNodal(fp)
    return NodalState.from_vector(sys(sys.check_state(x)), n)


def rhs_primal_dual_edge(fp: FlowProblem, state: EdgeState) -> EdgeState:
    n, e = fp.n, fp.net.e
    x = np.concatenate([
        _as_array(state.eta, e, "eta"),
        _as_array(state.mu_lo, n, "mu_lo"),
        _as_array(state.mu_hi, n, "mu_hi"),
    ])
    return EdgeState.from_vector(PrimalDualEdge(fp)(x), e, n)


def _penalty(x, mu, rho):
    """Two-branch augmented Lagrangian penalty, elementwise."""
    return np.where(rho * x + mu >= 0, x * mu + 0.5 * rho * x**2, -0.5 * mu**2 / rho)


def augmented_lagrangian_value(fp: FlowProblem, eta, mu_lo, mu_hi) -> float:
    """Augmented Lagrangian of the edge-coordinate flow problem."""
    d = edge_problem_data(fp)
    eta = _as_array(eta, fp.net.e, "eta")
    mu_lo = _as_array(mu_lo, fp.n, "mu_lo")
    mu_hi = _as_array(mu_hi, fp.n, "mu_hi")
    Aeta = d.A @ eta
    # lower: -a^T eta - b with b = K_I (P_L - P_lo); upper: a^T eta - c
    x_lo = d.lower - Aeta
    x_hi = Aeta - d.upper
    obj = 0.5 * eta @ d.Q @ eta + d.c @ eta
    return float(obj + _penalty(x_lo, mu_lo, fp.rho).sum() + _penalty(x_hi, mu_hi, fp.rho).sum())


def augmented_lagrangian_grad_eta(fp: FlowProblem, eta, mu_lo, mu_hi) -> np.ndarray:
    d = edge_problem_data(fp)
    Aeta = d.A @ np.asarray(eta, dtype=float)
    z_lo = project_nonneg(fp.rho * (d.lower - Aeta) + mu_lo)
    z_hi = project_nonneg(fp.rho * (Aeta - d.upper) + mu_hi)
    return d.Q @ eta + d.c + d.A.T @ (z_hi - z_lo)


def map_to_edge(fp: FlowProblem, theta, lambda_lo, lambda_hi):
    """Apply ``T = blkdiag(V B^T, K_I)``: returns ``(eta, mu_lo, mu_hi)``."""
    n = fp.n
    theta = _as_array(theta, n, "theta")
    eta = fp.net.BV.T @ theta
    return eta, fp.sqrt_k * _as_array(lambda_lo, n, "lambda_lo"), fp.sqrt_k * _as_array(lambda_hi, n, "lambda_hi")


def rk4_step(f: Callable, x, dt: float):
    """One classical Runge-Kutta step of ``dx/dt = f(x)``."""
    x = np.asarray(x, dtype=float)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    """Sampled solution of one of the systems.

    ``loads[i]`` is the load vector in force at ``times[i]``.
    """

    system: System
    times: np.ndarray
    states: np.ndarray
    loads: np.ndarray

    @property
    def kind(self) -> str:
        return self.system.kind

    def __len__(self):
        return self.times.size

    def _block(self, start, stop):
        return self.states[:, start:stop]

    @property
    def theta(self):
        if self.kind == "edge_primal_dual":
            raise AttributeError("edge trajectories carry no nodal angles")
        return self._block(0, self.system.n)

    @property
    def duals(self):
        """Dual/integrator block ``(lo, hi)`` of every sample, shape ``(N, 2n)``."""
        return self.states[:, self.system.dim - 2 * self.system.n :]

    @property
    def duals_lo(self):
        return self.duals[:, : self.system.n]

    @property
    def duals_hi(self):
        return self.duals[:, self.system.n :]

    @property
    def eta(self):
        if self.kind == "edge_primal_dual":
            return self._block(0, self.system.e)
        return self.theta @ self.system.fp.net.BV

    def derivatives(self) -> np.ndarray:
        f = self.system
        return np.array([f(x, pl) for x, pl in zip(self.states, self.loads)])

    @property
    def omega(self) -> np.ndarray:
        """Node frequencies ``d theta/dt`` evaluated from the vector field."""
        if self.kind == "edge_primal_dual":
            raise AttributeError("edge trajectories carry no node frequencies")
        return self.derivatives()[:, : self.system.n]

    @property
    def P(self) -> np.ndarray:
        return self.system.injections(self.states, self.loads)

    def rhs_norms(self) -> np.ndarray:
        """Norm of the gauge-free derivative ``(V B^T d theta/dt, d lambda/dt)``."""
        return np.linalg.norm(self.system.edge_view(self.derivatives()), axis=1)

    def edge_states(self):
        """``(eta, mu_lo, mu_hi)`` per sample in edge coordinates."""
        fp = self.system.fp
        n = self.system.n
        if self.kind == "projection_free":
            mu = self.duals * np.concatenate([fp.sqrt_k, fp.sqrt_k])
        else:
            # projection-based integrators already carry the edge scaling
            mu = self.duals
        return self.eta, mu[:, :n], mu[:, n:]


def integrate(
    system,
    state0,
    t_end: float,
    dt: float,
    events: Sequence = (),
    record_every: int = 1,
    t0: float = 0.0,
    p_load=None,
) -> Trajectory:
    """Fixed-step integration with piecewise-constant loads.

    Parameters
    ----------
    system : System or callable
        A :class:`System` (RK4 for smooth fields, Euler with orthant clamping
        for the projection-based field) or a plain callable ``f(x)``
        integrated with RK4 in Python.
    state0 : array_like or NodalState/EdgeState
    t_end, dt : float
        Final time and step. ``t_end - t0`` is rounded to a whole number of
        steps.
    events : sequence of (t, delta_p_load)
        Load steps applied between integration steps, at the step boundary
        nearest to ``t``.
    record_every : int
        Keep every ``record_every``-th step (the initial state is always kept).
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if record_every < 1:
        raise ValidationError("record_every must be >= 1")
    if hasattr(state0, "to_vector"):
        state0 = state0.to_vector()
    x = np.asarray(state0, dtype=float)
    nsteps = int(round((t_end - t0) / dt))
    if not callable(getattr(system, "advance", None)):
        return _integrate_callable(system, x, t0, dt, nsteps, record_every)

    x = system.check_state(x)
    if np.any(x[system.dim - 2 * system.n :] < -1e-12):
        raise NegativeDualState("initial dual states must be nonnegative")
    p_load = np.array(system.fp.p_load if p_load is None else p_load, dtype=float)

    steps = []
    last = -np.inf
    for t_ev, delta in events:
        if t_ev < last:
            raise ValidationError("event times must be sorted")
        last = t_ev
        k = int(round((t_ev - t0) / dt))
        if 0 <= k <= nsteps:
            steps.append((k, _as_array(delta, system.n, "event delta")))

    times = [np.array([t0])]
    states = [x[None, :]]
    loads = [p_load[None, :]]
    k_now = 0
    bounds = [k for k, _ in steps] + [nsteps]
    deltas = [d for _, d in steps] + [None]
    for k_next, delta in zip(bounds, deltas):
        seg = k_next - k_now
        if seg > 0:
            x, rec, done = system.advance(x, p_load, dt, seg, k_now, record_every)
            if done < seg:
                raise NonFiniteState(f"state diverged at t={t0 + (k_now + done + 1) * dt:.6g}")
            idx = np.arange(k_now + 1, k_next + 1)
            idx = idx[idx % record_every == 0]
            times.append(t0 + idx * dt)
            states.append(rec)
            loads.append(np.repeat(p_load[None, :], idx.size, axis=0))
            k_now = k_next
        if delta is not None:
            p_load = p_load + delta
            # re-record the switching instant with the new load so that
            # derived quantities (P, omega) show the step
            if times[-1].size and np.isclose(times[-1][-1], t0 + k_now * dt):
                loads[-1] = loads[-1].copy()
                loads[-1][-1] = p_load
    return Trajectory(
        system=system,
        times=np.concatenate(times),
        states=np.vstack(states),
        loads=np.vstack(loads),
    )


def _integrate_callable(f, x, t0, dt, nsteps, every) -> Trajectory:
    times = [t0]
    states = [x.copy()]
    for i in range(1, nsteps + 1):
        x = rk4_step(f, x, dt)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"state diverged at t={t0 + i * dt:.6g}")
        if i % every == 0:
            times.append(t0 + i * dt)
            states.append(x.copy())
    states = np.array(states)
    return Trajectory(system=None, times=np.array(times), states=states,
                      loads=np.zeros((len(times), 0)))


def verify_coinciding(fp: FlowProblem, state0: NodalState, t_end: float, dt: float,
                      record_every: int = 1) -> float:
    """Largest deviation between mapped nodal and edge trajectories.

    Integrates the projection-free nodal system from ``state0`` and the edge
    primal-dual system from its image under ``T = blkdiag(V B^T, K_I)``
    with the same steps, and returns ``max_t ||T x_nodal(t) - x_edge(t)||``.
    """
    if np.any(state0.lambda_lo < 0) or np.any(state0.lambda_hi < 0):
        raise NegativeDualState("initial integrator states must be nonnegative")
    nodal = integrate(ProjectionFreeNodal(fp), state0, t_end, dt, record_every=record_every)
    eta0, mu_lo0, mu_hi0 = map_to_edge(fp, state0.theta, state0.lambda_lo, state0.lambda_hi)
    edge = integrate(PrimalDualEdge(fp), EdgeState(eta0, mu_lo0, mu_hi0), t_end, dt,
                     record_every=record_every)
    mapped = np.hstack(nodal.edge_states())
    return float(np.linalg.norm(mapped - edge.states, axis=1).max())


def steady_state_index(traj: Trajectory, tol: float = 1e-9, window: int = 100):
    """First sample index after which the gauge-free RHS norm stays below
    ``tol`` for ``window`` consecutive samples, or ``None``."""
    below = traj.rhs_norms() < tol
    run = 0
    for i, b in enumerate(below):
        run = run + 1 if b else 0
        if run >= window:
            return i - window + 1
    return None
