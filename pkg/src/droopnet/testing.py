"""Seeded generators of random networks and flow problems.

Used by the test suite, the demos and ``droopnet`` when a random initial
state is requested. All functions take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import numpy as np

from .dynamics import NodalState
from .errors import NumericalError
from .flowproblem import FlowProblem, KktPoint, check_feasibility, solve_kkt_oracle
from .graph import PowerNetwork, build_network


def random_tree_edges(n: int, rng: np.random.Generator):
    """Edges of a uniformly labelled random tree (random attachment)."""
    order = rng.permutation(n)
    edges = []
    for pos in range(1, n):
        a, b = int(order[pos]), int(order[rng.integers(pos)])
        edges.append((min(a, b), max(a, b)))
    return edges


def random_network(n: int, rng: np.random.Generator, extra: float = 0.4,
                   w_range=(0.5, 2.0), tree: bool = False) -> PowerNetwork:
    """Random connected weighted graph: a spanning tree plus random chords.

    Each missing pair becomes an edge with probability ``extra``.
    """
    pairs = set(random_tree_edges(n, rng))
    if not tree:
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) not in pairs and rng.random() < extra:
                    pairs.add((i, j))
    edges = [(i, j, float(rng.uniform(*w_range))) for i, j in sorted(pairs)]
    return build_network(n, edges)


def _margins(fp: FlowProblem, kkt: KktPoint) -> float:
    """Smallest of inactive slacks and active multipliers."""
    vals = []
    for i in kkt.inactive:
        vals.append(min(kkt.P[i] - fp.p_lo[i], fp.p_hi[i] - kkt.P[i]))
    vals.extend(kkt.mu_lo[list(kkt.active_lo)])
    vals.extend(kkt.mu_hi[list(kkt.active_hi)])
    return float(min(vals)) if vals else np.inf


def random_problem(n: int, rng: np.random.Generator, *, require_active: bool | None = None,
                   margin: float = 0.05, net: PowerNetwork | None = None,
                   gain_range=(0.5, 2.0), rho_range=(0.5, 2.0), max_tries: int = 500):
    """Random feasible, nondegenerate flow problem and its KKT point.

    Parameters
    ----------
    require_active : bool or None
        ``True`` forces a nonempty proper active set, ``False`` an empty one,
        ``None`` accepts either (but never all nodes active).
    margin : float
        Minimum inactive slack and active multiplier at the optimizer.

    Returns
    -------
    (FlowProblem, KktPoint)
    """
    for _ in range(max_tries):
        network = net if net is not None else random_network(n, rng)
        p_lo = rng.uniform(-0.5, 0.0, n)
        p_hi = p_lo + rng.uniform(0.6, 1.5, n)
        p_star = p_lo + rng.uniform(0.2, 0.8, n) * (p_hi - p_lo)
        if require_active is False:
            # loads roughly matching setpoints keep everyone free
            total = p_star.sum() + rng.uniform(-0.1, 0.1)
        else:
            lo_s, hi_s = p_lo.sum(), p_hi.sum()
            total = rng.uniform(lo_s + 0.02 * (hi_s - lo_s), hi_s - 0.02 * (hi_s - lo_s))
        p_load = rng.dirichlet(np.ones(n)) * total
        fp = FlowProblem(
            net=network, p_load=p_load, p_star=p_star, p_lo=p_lo, p_hi=p_hi,
            m=rng.uniform(*gain_range, n), k_i=rng.uniform(*gain_range, n),
            rho=float(rng.uniform(*rho_range)),
        )
        if not check_feasibility(fp).feasible:
            continue
        try:
            kkt = solve_kkt_oracle(fp)
        except NumericalError:
            continue
        n_act = len(kkt.active)
        if n_act == n:
            continue
        if require_active is True and n_act == 0:
            continue
        if require_active is False and n_act > 0:
            continue
        if _margins(fp, kkt) < margin:
            continue
        return fp, kkt
    raise RuntimeError(f"no suitable random problem after {max_tries} tries")


def random_state(n: int, rng: np.random.Generator, scale: float = 1.0) -> NodalState:
    """Random nodal state with nonnegative duals."""
    return NodalState(
        theta=rng.normal(0, scale, n),
        lambda_lo=np.abs(rng.normal(0, scale, n)),
        lambda_hi=np.abs(rng.normal(0, scale, n)),
    )


def advisor_instance(binding: str, rng: np.random.Generator, uniform: bool = False,
                     max_tries: int = 200):
    """Instance on a 4-node path whose certificate binds ``binding`` ("slack"/"cubic").

    With ``uniform=True`` all weights are one and all integral gains equal
    ``2 max(m)``. The end nodes 0 and 3 have degree one, so ``(0, 3)`` is an admissible
    candidate edge. For "slack" the upper limit of one free node is moved to
    just above its optimal injection, which makes ``delta_min`` small.

    Returns ``(fp, kkt, d_0, candidate)``.
    """
    from dataclasses import replace

    from .rates import certify_beta, edge_addition_advisor, initial_distance

    for _ in range(max_tries):
        w = np.ones(3) if uniform else rng.uniform(0.5, 2.0, 3)
        net = build_network(4, [(0, 1, w[0]), (1, 2, w[1]), (2, 3, w[2])])
        fp, kkt = random_problem(4, rng, require_active=True, net=net,
                                 gain_range=(1.0, 3.0) if uniform else (0.5, 2.0))
        if uniform:
            # gains k_max = s_m m_max with s_m = 2
            fp = replace(fp, k_i=np.full(4, 2.0 * fp.m.max()))
            kkt = solve_kkt_oracle(fp)
        if binding == "slack":
            free = [i for i in kkt.inactive if fp.p_star[i] < kkt.P[i] - 1e-3]
            if not free:
                continue
            i = free[0]
            p_hi = fp.p_hi.copy()
            p_hi[i] = kkt.P[i] + 1e-4
            fp = replace(fp, p_hi=p_hi)
            if not check_feasibility(fp).feasible:
                continue
            kkt = solve_kkt_oracle(fp)
        d_0 = initial_distance(fp, kkt, random_state(4, rng, 0.3))
        try:
            cert = certify_beta(fp, kkt, d_0)
        except NumericalError:
            continue
        if cert.binding != binding:
            continue
        cand = (0, 3, float(net.weights.max()))
        if binding == "cubic" and not edge_addition_advisor(fp, kkt, d_0, cand).condition_holds:
            continue
        return fp, kkt, d_0, cand
    raise RuntimeError(f"no {binding}-binding instance after {max_tries} tries")
