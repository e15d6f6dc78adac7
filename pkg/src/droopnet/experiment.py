"""Scenario files, simulation runs, comparisons and certification reports.

A scenario is a JSON document. Power quantities (``loads``, ``setpoints``,
``p_lo``, ``p_hi`` and event load steps) are in MW and converted to
per-unit on ``base_mva``; susceptances are per-unit, droop gains are in
rad/s per unit power and integral gains in the same per-unit system.

Minimal example::

    {
      "base_mva": 100,
      "network": {"n": 2, "edges": [[0, 1, 1.0]]},
      "loads": [60, 40], "setpoints": [50, 50],
      "p_lo": [0, 0], "p_hi": [100, 100],
      "droop": [1, 1], "k_i": [1, 1], "rho": 1.0,
      "events": [{"t": 5.0, "delta_p_load": [10, 0]}],
      "sim": {"t_end": 10.0, "dt": 1e-3, "record_every": 10,
              "controller": "projection_free"}
    }

Optional keys: ``name``, ``description``, ``k_p``, ``tuning: {"s": x}`` and
``initial`` (``"zero"``, ``"optimum"``, ``"random"`` or an object with
``theta``, ``lambda_lo``, ``lambda_hi``).
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .dynamics import (
    SYSTEMS,
    EdgeState,
    NodalState,
    Trajectory,
    integrate,
    make_system,
    map_to_edge,
)
from .errors import (
    EmptyActiveSet,
    InsufficientDecay,
    NumericalError,
    ParseError,
    ValidationError,
)
from .flowproblem import (
    FlowProblem,
    KktPoint,
    balance_frequency,
    check_feasibility,
    edge_distance,
    solve_kkt_oracle,
)
from .graph import build_network
from .rates import (
    admissible_edges,
    certify_beta,
    edge_addition_advisor,
    initial_distance,
    rho_window,
    tune_gains,
)

SETTLE_TOL = 1e-6
ACTIVE_TOL = 1e-6
NOISE_FLOOR = 1e-10
CSV_FMT = "%.12g"


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class SimSettings:
    t_end: float
    dt: float = 1e-3
    record_every: int = 1
    controller: str = "projection_free"


@dataclass(frozen=True)
class Scenario:
    """In-memory form of a scenario file (power in MW)."""

    n: int
    edges: tuple
    loads: tuple
    setpoints: tuple
    p_lo: tuple
    p_hi: tuple
    droop: tuple
    k_i: tuple
    rho: float
    sim: SimSettings
    base_mva: float = 100.0
    k_p: tuple | None = None
    events: tuple = ()
    tuning_s: float | None = None
    initial: object = "zero"
    name: str = ""
    description: str = ""

    # -- conversion ------------------------------------------------------

    def network(self):
        return build_network(self.n, self.edges)

    def problem(self, s: float = 1.0) -> FlowProblem:
        """Per-unit flow problem for the base load; ``s`` scales gains."""
        b = self.base_mva
        fp = FlowProblem(
            net=self.network(),
            p_load=np.array(self.loads) / b,
            p_star=np.array(self.setpoints) / b,
            p_lo=np.array(self.p_lo) / b,
            p_hi=np.array(self.p_hi) / b,
            m=np.array(self.droop),
            k_i=np.array(self.k_i),
            rho=self.rho,
            k_p=None if self.k_p is None else np.array(self.k_p),
        )
        return fp if s == 1 else fp.scaled(s)

    def event_deltas(self):
        """``[(t, delta_p_load_pu), ...]``."""
        return [(t, np.array(d) / self.base_mva) for t, d in self.events]

    def segment_loads(self):
        """Per-unit load vector in force on each segment between events."""
        load = np.array(self.loads) / self.base_mva
        out = [load]
        for _, d in self.event_deltas():
            load = load + d
            out.append(load)
        return out

    def segment_starts(self):
        return [0.0] + [t for t, _ in self.events]

    def initial_state(self, fp: FlowProblem, seed: int | None = None) -> NodalState:
        init = self.initial
        n = self.n
        if init == "zero" or init is None:
            return NodalState.zeros(n)
        if init == "optimum":
            kkt = solve_kkt_oracle(fp)
            lo, hi = kkt.nodal_duals(fp)
            return NodalState(kkt.theta.copy(), lo, hi)
        if init == "random":
            from .testing import random_state

            return random_state(n, np.random.default_rng(0 if seed is None else seed), 0.2)
        return NodalState(
            np.array(init["theta"], dtype=float),
            np.array(init.get("lambda_lo", [0.0] * n), dtype=float),
            np.array(init.get("lambda_hi", [0.0] * n), dtype=float),
        )

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "description": self.description,
            "base_mva": self.base_mva,
            "network": {"n": self.n, "edges": [list(e) for e in self.edges]},
            "loads": list(self.loads),
            "setpoints": list(self.setpoints),
            "p_lo": list(self.p_lo),
            "p_hi": list(self.p_hi),
            "droop": list(self.droop),
            "k_i": list(self.k_i),
            "rho": self.rho,
            "events": [{"t": t, "delta_p_load": list(dp)} for t, dp in self.events],
            "sim": asdict(self.sim),
            "initial": self.initial if isinstance(self.initial, str) else dict(self.initial),
        }
        if self.k_p is not None:
            d["k_p"] = list(self.k_p)
        if self.tuning_s is not None:
            d["tuning"] = {"s": self.tuning_s}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ParseError("scenario must be a JSON object", field="<root>")
        net = _get(d, "network", dict)
        n = _get(net, "n", int, "network.n")
        edges = []
        for k, e in enumerate(_get(net, "edges", list, "network.edges")):
            where = f"network.edges[{k}]"
            if not (isinstance(e, list) and len(e) == 3):
                raise ParseError("edge must be [i, j, w]", field=where)
            edges.append((_int(e[0], where), _int(e[1], where), _num(e[2], where)))

        def vec(key, required=True):
            if key not in d and not required:
                return None
            v = _get(d, key, list)
            out = tuple(_num(x, f"{key}[{i}]") for i, x in enumerate(v))
            if len(out) != n:
                raise ParseError(f"expected {n} entries, got {len(out)}", field=key)
            return out

        sim_d = _get(d, "sim", dict)
        sim = SimSettings(
            t_end=_num(_get(sim_d, "t_end", (int, float), "sim.t_end"), "sim.t_end"),
            dt=_num(sim_d.get("dt", 1e-3), "sim.dt"),
            record_every=_int(sim_d.get("record_every", 1), "sim.record_every"),
            controller=sim_d.get("controller", "projection_free"),
        )
        if sim.controller not in SYSTEMS:
            raise ParseError(f"unknown controller {sim.controller!r}", field="sim.controller")
        if not (sim.dt > 0 and sim.t_end > 0 and sim.record_every >= 1):
            raise ParseError("t_end, dt must be positive and record_every >= 1", field="sim")

        events = []
        last = -np.inf
        for k, ev in enumerate(d.get("events", [])):
            where = f"events[{k}]"
            if not isinstance(ev, dict):
                raise ParseError("event must be an object", field=where)
            t = _num(_get(ev, "t", (int, float), where + ".t"), where + ".t")
            dp = _get(ev, "delta_p_load", list, where + ".delta_p_load")
            dp = tuple(_num(x, f"{where}.delta_p_load[{i}]") for i, x in enumerate(dp))
            if len(dp) != n:
                raise ParseError(f"expected {n} entries", field=where + ".delta_p_load")
            if not t > last:
                raise ParseError("event times must be strictly increasing", field=where + ".t")
            if not 0 <= t <= sim.t_end:
                raise ParseError(f"event time {t} outside [0, t_end]", field=where + ".t")
            last = t
            events.append((t, dp))

        tuning = d.get("tuning")
        s = None
        if tuning is not None:
            s = _num(_get(tuning, "s", (int, float), "tuning.s"), "tuning.s")
            if s < 1:
                raise ParseError("tuning.s must be >= 1", field="tuning.s")

        init = d.get("initial", "zero")
        if isinstance(init, str):
            if init not in ("zero", "optimum", "random"):
                raise ParseError(f"unknown initial state {init!r}", field="initial")
        elif isinstance(init, dict):
            for key in init:
                if key not in ("theta", "lambda_lo", "lambda_hi"):
                    raise ParseError(f"unknown key {key!r}", field="initial")
                if len(init[key]) != n:
                    raise ParseError(f"expected {n} entries", field=f"initial.{key}")
            if "theta" not in init:
                raise ParseError("missing 'theta'", field="initial")
            init = {k: [float(x) for x in v] for k, v in init.items()}
        else:
            raise ParseError("must be a string or object", field="initial")

        return cls(
            n=n, edges=tuple(edges), loads=vec("loads"), setpoints=vec("setpoints"),
            p_lo=vec("p_lo"), p_hi=vec("p_hi"), droop=vec("droop"), k_i=vec("k_i"),
            k_p=vec("k_p", required=False),
            rho=_num(_get(d, "rho", (int, float)), "rho"),
            base_mva=_num(d.get("base_mva", 100.0), "base_mva"),
            sim=sim, events=tuple(events), tuning_s=s, initial=init,
            name=str(d.get("name", "")), description=str(d.get("description", "")),
        )


def _get(d, key, typ, where=None):
    if key not in d:
        raise ParseError("missing required field", field=where or key)
    val = d[key]
    if typ is int and isinstance(val, bool):
        raise ParseError("expected an integer", field=where or key)
    if not isinstance(val, typ):
        raise ParseError(f"unexpected type {type(val).__name__}", field=where or key)
    return val


def _num(x, where) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ParseError(f"expected a number, got {x!r}", field=where)
    return float(x)


def _int(x, where) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ParseError(f"expected an integer, got {x!r}", field=where)
    return int(x)


def load_scenario(path) -> Scenario:
    """Parse a scenario file; JSON syntax errors carry the line number."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    return Scenario.from_dict(d)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_dict(), indent=2) + "\n")


def bundled_scenario_path(name: str = "three_vsc_overload") -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


def validate_scenario(sc: Scenario) -> None:
    """Raise :class:`ValidationError` if any segment violates the load/limit assumptions."""
    fp = sc.problem()
    for k, load in enumerate(sc.segment_loads()):
        rep = check_feasibility(fp.with_load(load))
        if not rep.feasible:
            raise ValidationError(f"segment {k}: " + "; ".join(rep.messages))


# ---------------------------------------------------------------- analysis


def fit_decay_rate(times, distances, floor: float = NOISE_FLOOR, burn_in: float = 0.2):
    """Exponential rate of a decaying distance signal.

    Keeps samples above ``floor``, discards the first ``burn_in`` fraction and
    fits ``log d = c - beta t`` by least squares.

    Returns
    -------
    (beta_hat, r_squared)
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    keep = d > floor
    t, d = t[keep], d[keep]
    if t.size < 20:
        raise InsufficientDecay(f"only {t.size} samples above the noise floor {floor:g}")
    start = int(np.floor(burn_in * t.size))
    t, d = t[start:], d[start:]
    fit = stats.linregress(t, np.log(d))
    return float(-fit.slope), float(fit.rvalue**2)


def kkt_distances(traj: Trajectory, fp: FlowProblem, kkt: KktPoint) -> np.ndarray:
    """Distance of every sample (edge coordinates) to the KKT set of ``fp``."""
    eta, mu_lo, mu_hi = traj.edge_states()
    return edge_distance(fp, kkt, eta, mu_lo, mu_hi)


def settling_times(traj: Trajectory, starts, tol: float = SETTLE_TOL):
    """Time from each segment start until the RHS norm stays below ``tol``.

    The norm must remain below ``tol`` up to the end of the segment; a
    segment that never settles gives ``None``.
    """
    norms = traj.rhs_norms()
    t = traj.times
    bounds = list(starts) + [np.inf]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        # samples strictly after the switching instant, up to the next one
        idx = np.flatnonzero((t > a + 1e-12) & (t <= b - 1e-12))
        if b != np.inf:
            idx = idx[t[idx] < b - 1e-12]
        if idx.size == 0:
            out.append(None)
            continue
        above = np.flatnonzero(norms[idx] >= tol)
        if above.size == 0:
            out.append(float(t[idx[0]] - a))
        elif above[-1] == idx.size - 1:
            out.append(None)
        else:
            out.append(float(t[idx[above[-1] + 1]] - a))
    return out


def measured_active_sets(fp: FlowProblem, P, tol: float = ACTIVE_TOL):
    lo = tuple(int(i) for i in np.flatnonzero(P <= fp.p_lo + tol))
    hi = tuple(int(i) for i in np.flatnonzero(P >= fp.p_hi - tol))
    return lo, hi


# ---------------------------------------------------------------- outputs


def output_dir(out=None) -> Path:
    env = os.environ.get("DROOPNET_OUT")
    path = Path(env) if env else Path(out if out is not None else "droopnet_out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cols(prefix, n):
    return [f"{prefix}_{i}" for i in range(n)]


def trajectory_table(traj: Trajectory):
    """``(header, data)`` in the CSV column order."""
    n = traj.system.n
    if traj.kind == "edge_primal_dual":
        e = traj.system.e
        header = ["t"] + _cols("eta", e) + _cols("P", n) + _cols("mu_lo", n) + _cols("mu_hi", n)
        data = np.column_stack([traj.times, traj.eta, traj.P, traj.duals_lo, traj.duals_hi])
    else:
        header = (["t"] + _cols("theta", n) + _cols("omega", n) + _cols("P", n)
                  + _cols("lambda_lo", n) + _cols("lambda_hi", n))
        data = np.column_stack(
            [traj.times, traj.theta, traj.omega, traj.P, traj.duals_lo, traj.duals_hi]
        )
    return header, data


def write_csv(path, header, data) -> None:
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=CSV_FMT)


def write_trajectory(traj: Trajectory, path) -> None:
    write_csv(path, *trajectory_table(traj))


def write_plotdata(traj: Trajectory, folder, base_mva: float, suffix: str = "") -> None:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    n = traj.system.n
    t = traj.times[:, None]
    if traj.kind != "edge_primal_dual":
        write_csv(folder / f"frequencies{suffix}.csv", ["t"] + _cols("omega", n),
                  np.hstack([t, traj.omega]))
    write_csv(folder / f"powers{suffix}.csv", ["t"] + _cols("P_MW", n),
              np.hstack([t, traj.P * base_mva]))
    write_csv(folder / f"duals{suffix}.csv", ["t"] + _cols("dual_lo", n) + _cols("dual_hi", n),
              np.hstack([t, traj.duals_lo, traj.duals_hi]))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- commands


@dataclass
class RunReport:
    trajectory_path: str | None
    controller: str
    s: float
    active_lo: tuple
    active_hi: tuple
    oracle_active_lo: tuple
    oracle_active_hi: tuple
    omega_s_measured: float | None
    omega_s_formula: float | None
    converged: bool
    beta_hat: float | None
    r_squared: float | None
    settling_times: list
    certificate: dict | None = None
    wall_time: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def simulate(sc: Scenario, controller: str | None = None, s: float = 1.0,
             dt: float | None = None, seed: int | None = None):
    """Integrate a scenario; returns ``(trajectory, flow problem)``."""
    validate_scenario(sc)
    fp = sc.problem(s)
    system = make_system(fp, controller or sc.sim.controller)
    x0 = sc.initial_state(sc.problem(), seed)
    if system.kind == "edge_primal_dual":
        x0 = EdgeState(*map_to_edge(fp, x0.theta, x0.lambda_lo, x0.lambda_hi))
    elif system.kind == "projection_based":
        # the projection-based integrators carry the edge scaling directly
        x0 = NodalState(x0.theta, fp.sqrt_k * x0.lambda_lo, fp.sqrt_k * x0.lambda_hi)
    traj = integrate(system, x0, sc.sim.t_end, dt or sc.sim.dt, events=sc.event_deltas(),
                     record_every=sc.sim.record_every)
    return traj, fp


def analyse(sc: Scenario, traj: Trajectory, fp: FlowProblem, s: float = 1.0) -> RunReport:
    """Steady-state, frequency and decay summary of a finished run."""
    notes = []
    final_load = sc.segment_loads()[-1]
    fp_end = fp.with_load(final_load)
    kkt = solve_kkt_oracle(fp_end)
    P_end = traj.P[-1]
    lo, hi = measured_active_sets(fp_end, P_end)
    norms = traj.rhs_norms()
    converged = bool(norms[-1] < SETTLE_TOL)
    omega_meas = omega_formula = None
    if traj.kind != "edge_primal_dual":
        omega_meas = float(traj.omega[-1].mean())
    try:
        omega_formula = balance_frequency(fp_end, kkt.active_lo, kkt.active_hi)
    except ValidationError as exc:
        notes.append(f"omega_s formula unavailable: {exc}")
    if converged and omega_meas is not None and omega_formula is not None:
        if abs(omega_meas - omega_formula) > 1e-4:
            notes.append("measured omega_s deviates from the balance formula by more than 1e-4")

    beta_hat = r2 = None
    t_last = sc.segment_starts()[-1]
    seg = traj.times >= t_last
    try:
        d = kkt_distances(traj, fp_end, kkt)[seg]
        beta_hat, r2 = fit_decay_rate(traj.times[seg], d)
    except InsufficientDecay as exc:
        notes.append(f"decay fit skipped: {exc}")

    return RunReport(
        trajectory_path=None, controller=traj.kind, s=float(s),
        active_lo=lo, active_hi=hi,
        oracle_active_lo=kkt.active_lo, oracle_active_hi=kkt.active_hi,
        omega_s_measured=omega_meas, omega_s_formula=omega_formula, converged=converged,
        beta_hat=beta_hat, r_squared=r2,
        settling_times=settling_times(traj, sc.segment_starts()), notes=notes,
    )


def certificate_for(sc: Scenario, s: float = 1.0, seed: int | None = None):
    """Rate certificate at the base-load optimum from the scenario's initial state."""
    fp = sc.problem(s)
    kkt = solve_kkt_oracle(fp)
    if not kkt.active:
        raise EmptyActiveSet("no constraint is active at the optimizer; kappa is undefined")
    d_0 = initial_distance(fp, kkt, sc.initial_state(sc.problem(), seed))
    return fp, kkt, d_0, certify_beta(fp, kkt, d_0)


def run(sc: Scenario, out=None, dt: float | None = None, seed: int | None = None,
        with_certificate: bool = True) -> RunReport:
    """Simulate the scenario's controller and write trajectory, plot data and report."""
    t0 = time.perf_counter()
    traj, fp = simulate(sc, dt=dt, seed=seed)
    rep = analyse(sc, traj, fp)
    folder = output_dir(out)
    path = folder / "trajectory.csv"
    write_trajectory(traj, path)
    write_plotdata(traj, folder / "plotdata", sc.base_mva)
    rep.trajectory_path = str(path)
    if with_certificate:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep.certificate = certificate_for(sc, seed=seed)[3].to_dict()
        except (ValidationError, NumericalError) as exc:
            rep.notes.append(f"no certificate: {type(exc).__name__}: {exc}")
    rep.wall_time = time.perf_counter() - t0
    _write_json(folder / "report.json", rep.to_dict())
    return rep


def compare(sc: Scenario, out=None, dt: float | None = None, seed: int | None = None) -> dict:
    """Projection-based versus projection-free runs (and a gain-scaled one).

    All runs share initial conditions and events. Returns a dict keyed by
    run label; each entry is a :class:`RunReport` dict.
    """
    validate_scenario(sc)
    folder = output_dir(out)
    runs = [("projection_based", "projection_based", 1.0), ("projection_free", "projection_free", 1.0)]
    if sc.tuning_s is not None and sc.tuning_s != 1:
        runs.append((f"projection_free_s{sc.tuning_s:g}", "projection_free", sc.tuning_s))
    result = {}
    for label, kind, s in runs:
        t0 = time.perf_counter()
        traj, fp = simulate(sc, controller=kind, s=s, dt=dt, seed=seed)
        rep = analyse(sc, traj, fp, s=s)
        path = folder / f"trajectory_{label}.csv"
        write_trajectory(traj, path)
        write_plotdata(traj, folder / "plotdata", sc.base_mva, suffix=f"_{label}")
        rep.trajectory_path = str(path)
        rep.wall_time = time.perf_counter() - t0
        result[label] = rep.to_dict()
    _write_json(folder / "comparison.json", result)
    return result


def certify(sc: Scenario, out=None, seed: int | None = None) -> dict:
    """Certificate, rho window, optional gain-scaling plan and edge advisories."""
    fp, kkt, d_0, cert = certificate_for(sc, seed=seed)
    lo, hi = rho_window(fp, kkt, d_0)
    doc = {
        "certificate": cert.to_dict(),
        "inputs": {"rho": fp.rho, "k_i": fp.k_i.tolist(), "d_0": d_0},
        "rho_window": {"lower": lo, "upper": hi},
        "active_lo": list(kkt.active_lo),
        "active_hi": list(kkt.active_hi),
    }
    if sc.tuning_s is not None and sc.tuning_s != 1:
        plan = tune_gains(fp, kkt, d_0, sc.tuning_s)
        doc["tuning"] = {
            "s": plan.s, "k_i_new": plan.k_i_new.tolist(), "rho_new": plan.rho_new,
            "beta_before": plan.certificate_before.beta,
            "beta_after": plan.certificate_after.beta,
        }
    advice = []
    for cand in admissible_edges(fp.net):
        try:
            advice.append(edge_addition_advisor(fp, kkt, d_0, cand).to_dict())
        except (ValidationError, NumericalError) as exc:
            advice.append({"candidate": list(cand), "error": f"{type(exc).__name__}: {exc}"})
    doc["edge_advisories"] = advice
    _write_json(output_dir(out) / "certificate.json", doc)
    return doc


def oracle(sc: Scenario, out=None) -> dict:
    """KKT points for the load in force on every segment."""
    fp = sc.problem()
    segs = []
    for start, load in zip(sc.segment_starts(), sc.segment_loads()):
        f = fp.with_load(load)
        rep = check_feasibility(f)
        if not rep.feasible:
            raise ValidationError("; ".join(rep.messages))
        kkt = solve_kkt_oracle(f)
        entry = {"t_start": start, **kkt.to_dict()}
        entry["P_MW"] = (kkt.P * sc.base_mva).tolist()
        segs.append(entry)
    doc = {"base_mva": sc.base_mva, "segments": segs}
    _write_json(output_dir(out) / "oracle.json", doc)
    return doc
