import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from droopnet.errors import (
    AllNodesActive,
    DimensionMismatch,
    EmptyActiveSet,
    EnumerationTooLarge,
    ValidationError,
)
from droopnet.flowproblem import (
    FlowProblem,
    balance_frequency,
    check_feasibility,
    check_licq,
    edge_distance,
    edge_problem_data,
    kappa,
    kkt_residuals,
    solve_kkt_oracle,
)
from droopnet.graph import build_network
from droopnet.testing import random_network, random_problem


def water_fill(fp):
    """Independent optimizer: P_i(w) = clip(P*_i - w / m_i) with sum P = sum P_L.

    Any injection vector with the right total is reachable by some angles,
    so the flow problem reduces to a separable box QP with one coupling
    constraint, solved by root finding on the common frequency ``w``.
    """
    def P_of(w):
        return np.clip(fp.p_star - w / fp.m, fp.p_lo, fp.p_hi)

    total = fp.p_load.sum()
    span = 10 * (1 + np.abs(fp.m).max() * np.abs(np.r_[fp.p_lo, fp.p_hi, fp.p_star]).max())
    w = brentq(lambda w: P_of(w).sum() - total, -span, span, xtol=1e-14, rtol=1e-14)
    return P_of(w), w


def path3():
    net = build_network(3, [(0, 1, 1.0), (1, 2, 1.0)])
    return FlowProblem(
        net=net, p_load=[0.5, 0.2, 0.9], p_star=[0.5, 0.25, 0.5],
        p_lo=[0.0, 0.0, 0.0], p_hi=[1.0, 0.3, 1.0], m=[1.0, 2.0, 1.0],
        k_i=[1.0, 1.0, 1.0], rho=1.0,
    )


def test_oracle_on_path_example():
    fp = path3()
    kkt = solve_kkt_oracle(fp)
    assert kkt.active_hi == (1,) and kkt.active_lo == ()
    assert kkt.P == pytest.approx([0.65, 0.3, 0.65], abs=1e-12)
    assert kkt.omega_s == pytest.approx(-0.15, abs=1e-12)
    P, w = water_fill(fp)
    assert kkt.P == pytest.approx(P, abs=1e-10)
    assert kkt.omega_s == pytest.approx(w, abs=1e-10)


def test_oracle_matches_water_filling(rng):
    for _ in range(40):
        fp, kkt = random_problem(int(rng.integers(2, 6)), rng)
        P, w = water_fill(fp)
        assert np.abs(kkt.P - P).max() < 1e-9
        assert abs(kkt.omega_s - w) < 1e-9
        res = kkt_residuals(fp, kkt)
        assert max(res.values()) < 1e-9


def test_multipliers_from_droop_balance(rng):
    # stationarity: M (P - P*) + K (mu_hi - mu_lo) = -w 1 at the optimum
    for _ in range(30):
        fp, kkt = random_problem(int(rng.integers(2, 6)), rng, require_active=True)
        expect = (fp.m * (fp.p_star - kkt.P) - kkt.omega_s) / fp.sqrt_k
        hi, lo = list(kkt.active_hi), list(kkt.active_lo)
        assert kkt.mu_hi[hi] == pytest.approx(expect[hi], abs=1e-9)
        assert kkt.mu_lo[lo] == pytest.approx(-expect[lo], abs=1e-9)
        free = list(kkt.inactive)
        assert np.all(kkt.mu_hi[free] == 0) and np.all(kkt.mu_lo[free] == 0)
        assert kkt.omega_s == pytest.approx(
            balance_frequency(fp, kkt.active_lo, kkt.active_hi), abs=1e-10)


def test_angles_reproduce_injections(rng):
    fp, kkt = random_problem(5, rng)
    assert kkt.theta[0] == 0.0
    assert fp.net.L @ kkt.theta + fp.p_load == pytest.approx(kkt.P, abs=1e-10)
    assert kkt.eta == pytest.approx(fp.net.BV.T @ kkt.theta)


def test_edge_problem_data_objective(rng):
    fp, kkt = random_problem(4, rng)
    d = edge_problem_data(fp)
    eta = rng.normal(size=fp.net.e)
    P = fp.net.BV @ eta + fp.p_load
    direct = 0.5 * np.sum(fp.m * (P - fp.p_star) ** 2)
    const = 0.5 * np.sum(fp.m * (fp.p_load - fp.p_star) ** 2)
    assert 0.5 * eta @ d.Q @ eta + d.c @ eta + const == pytest.approx(direct)
    assert d.A @ eta == pytest.approx(fp.sqrt_k * (P - fp.p_load))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_oracle_property(seed):
    r = np.random.default_rng(seed)
    fp, kkt = random_problem(int(r.integers(2, 5)), r)
    assert check_licq(fp, kkt)
    assert np.all(kkt.P >= fp.p_lo - 1e-12) and np.all(kkt.P <= fp.p_hi + 1e-12)
    assert kkt.P.sum() == pytest.approx(fp.p_load.sum())


def test_kappa_two_routes(rng):
    for _ in range(30):
        net = random_network(int(rng.integers(2, 7)), rng)
        fp, _ = random_problem(net.n, rng, net=net)
        k = int(rng.integers(1, net.n))
        act = sorted(rng.choice(net.n, size=k, replace=False).tolist())
        Kd = np.diag(fp.sqrt_k[act])
        expect = np.linalg.eigvalsh(Kd @ net.L[np.ix_(act, act)] @ Kd).min()
        assert kappa(fp, act) == pytest.approx(expect, abs=1e-10)


def test_kappa_empty_set():
    with pytest.raises(EmptyActiveSet):
        kappa(path3(), [])


def test_feasibility_messages():
    fp = path3().with_load([1.0, 1.0, 1.0])  # total 3 > 2.3
    rep = check_feasibility(fp)
    assert not rep.assumption1 and rep.assumption2
    assert any("sum(P_hi)" in m for m in rep.messages)
    assert check_feasibility(path3()).feasible


def test_balance_frequency_all_active():
    with pytest.raises(AllNodesActive):
        balance_frequency(path3(), [0], [1, 2])


def test_problem_validation():
    net = build_network(2, [(0, 1, 1.0)])
    good = dict(net=net, p_load=[0.5, 0.5], p_star=[0.5, 0.5], p_lo=[0, 0], p_hi=[1, 1],
                m=[1, 1], k_i=[1, 1], rho=1.0)
    FlowProblem(**good)
    with pytest.raises(DimensionMismatch):
        FlowProblem(**{**good, "m": [1, 1, 1]})
    with pytest.raises(ValidationError):
        FlowProblem(**{**good, "k_i": [0, 1]})
    with pytest.raises(ValidationError):
        FlowProblem(**{**good, "rho": 0.0})
    fp = FlowProblem(**good)
    assert fp.k_p.tolist() == [1.0, 1.0]
    s = fp.scaled(4.0)
    assert s.k_i.tolist() == [4.0, 4.0] and s.rho == pytest.approx(0.5)


def test_enumeration_limit():
    n = 13
    net = build_network(n, [(i, i + 1, 1.0) for i in range(n - 1)])
    fp = FlowProblem(net=net, p_load=np.full(n, 0.5), p_star=np.full(n, 0.5),
                     p_lo=np.zeros(n), p_hi=np.ones(n), m=np.ones(n), k_i=np.ones(n), rho=1.0)
    with pytest.raises(EnumerationTooLarge):
        solve_kkt_oracle(fp)


def test_edge_distance_gauge_free(rng):
    fp, kkt = random_problem(5, rng)
    assert edge_distance(fp, kkt, kkt.eta, kkt.mu_lo, kkt.mu_hi) == pytest.approx(0, abs=1e-12)
    # adding a cycle flow (kernel of B V) does not move the point
    Pi = fp.net.edge_projector
    cyc = (np.eye(fp.net.e) - Pi) @ rng.normal(size=fp.net.e)
    assert edge_distance(fp, kkt, kkt.eta + cyc, kkt.mu_lo, kkt.mu_hi) == pytest.approx(0, abs=1e-10)
    d = edge_distance(fp, kkt, np.vstack([kkt.eta, kkt.eta]), np.vstack([kkt.mu_lo + 3, kkt.mu_lo]),
                      np.vstack([kkt.mu_hi, kkt.mu_hi + 4]))
    assert d.shape == (2,)
