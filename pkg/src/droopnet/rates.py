"""Convergence-rate certificates for the projection-free dynamics.

A certified rate ``beta`` satisfies both

    slack  beta <= kappa delta_min / (46 rho L_g^2)
    cubic  kappa alpha / (4 beta) - 4 beta^2
             >= L_g^2 + kappa/4 + (gamma + M_theta)(alpha + M_theta + 1/rho) + 1/(2 rho^2)

with ``M_theta = rho L_g^2 + M_g (rho L_g d_0 + d_0 + ||mu*||)``. The
largest such ``beta`` is returned by :func:`certify_beta`.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import NodalState, map_to_edge
from .errors import (
    AllNodesActive,
    DegenerateCertificateWarning,
    DegreeCapViolated,
    EdgeExists,
    LicqViolated,
    NonpositiveD0,
    NoPositiveBeta,
    NumericalError,
    WeightTooLarge,
)
from .flowproblem import FlowProblem, KktPoint, edge_distance, jacobian, kappa, solve_kkt_oracle
from .graph import smallest_positive_eigenvalue, spectral_summary, symmetric_eigh

BINDING_RTOL = 1e-9


@dataclass(frozen=True)
class JacobianBounds:
    M_g: float
    L_g: float
    spectral: float
    frobenius: float


def jacobian_norm_bounds(fp: FlowProblem) -> JacobianBounds:
    """Spectral and Frobenius norm bounds of the constraint Jacobian ``K_I B V``.

    ``M_g = sqrt(2 k_max w_max d_max)`` and ``L_g = sqrt(2 d_max k_max w_sum)``;
    the measured norms are checked against them.
    """
    s = spectral_summary(fp.net)
    k_max = fp.k_i.max()
    M_g = float(np.sqrt(2 * k_max * s.w_max * s.d_max))
    L_g = float(np.sqrt(2 * s.d_max * k_max * s.w_sigma))
    J = jacobian(fp)
    two_norm = float(np.linalg.norm(J, 2))
    frob = float(np.linalg.norm(J, "fro"))
    if two_norm > M_g * (1 + 1e-12) or frob > L_g * (1 + 1e-12):
        raise NumericalError(f"Jacobian norms ({two_norm}, {frob}) exceed bounds ({M_g}, {L_g})")
    return JacobianBounds(M_g, L_g, two_norm, frob)


def strong_convexity_constants(fp: FlowProblem) -> tuple[float, float, float, float]:
    """``(alpha, gamma, alpha_lower, gamma_upper)`` of the edge objective.

    ``alpha`` is the smallest positive and ``gamma`` the largest eigenvalue
    of ``V B^T M B V``; the restriction to the eigenvectors with positive
    eigenvalues is strongly convex with constant ``alpha``.
    """
    BV = fp.net.BV
    vals, _ = symmetric_eigh(BV.T @ (fp.m[:, None] * BV))
    alpha = smallest_positive_eigenvalue(vals)
    gamma = float(vals[-1])
    s = spectral_summary(fp.net)
    alpha_lower = float(fp.m.min() * s.lambda_min_plus)
    gamma_upper = float(2 * s.w_max * fp.m.max() * s.d_max)
    return alpha, gamma, alpha_lower, gamma_upper


def binding_slack(fp: FlowProblem, kkt: KktPoint) -> float:
    """Largest scaled slack ``sqrt(k_i) max(g_lo,i, g_hi,i)`` over inactive nodes.

    Each node carries a lower and an upper constraint; the less negative of
    the two is used.
    """
    free = list(kkt.inactive)
    if not free:
        raise AllNodesActive("delta_min needs at least one node away from its limits")
    g = np.maximum(fp.p_lo - kkt.P, kkt.P - fp.p_hi)
    return float((fp.sqrt_k[free] * g[free]).max())


def delta_min(fp: FlowProblem, kkt: KktPoint, d_0: float) -> float:
    """``1 - [1 + rho s / d_0]_+^2`` with ``s`` from :func:`binding_slack`."""
    if not d_0 > 0:
        raise NonpositiveD0(f"d_0 must be positive, got {d_0}")
    s = binding_slack(fp, kkt)
    val = 1.0 - max(1.0 + fp.rho * s / d_0, 0.0) ** 2
    if val <= 0:
        warnings.warn(
            f"delta_min={val:.3g}: an inactive node sits on its limit; the certificate degenerates",
            DegenerateCertificateWarning,
            stacklevel=2,
        )
    return val


def m_theta(rho, L_g, M_g, d_0, mu_norm) -> float:
    return rho * L_g**2 + M_g * (rho * L_g * d_0 + d_0 + mu_norm)


def cubic_rhs(kappa_, alpha, gamma, L_g, M_th, rho) -> float:
    return L_g**2 + kappa_ / 4 + (gamma + M_th) * (alpha + M_th + 1 / rho) + 1 / (2 * rho**2)


def _bisect_cubic(kappa_, alpha, rhs, rtol=1e-12) -> float:
    """Largest ``beta`` with ``kappa alpha / (4 beta) - 4 beta^2 >= rhs``.

    The left side decreases strictly on ``(0, inf)``; it is negative at
    ``(kappa alpha)^(1/3)``. Returns the feasible end of the final bracket.
    """
    ka = kappa_ * alpha

    def h(b):
        return ka / (4 * b) - 4 * b * b - rhs

    hi = ka ** (1 / 3)
    lo = hi
    while h(lo) < 0:
        lo *= 0.5
        if lo == 0.0:
            raise NoPositiveBeta("cubic condition infeasible for all beta > 0")
    if lo == hi:
        return hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if h(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def beta_from_constants(kappa_, alpha, gamma, L_g, M_th, delta, rho):
    """``(beta, beta_a, beta_b, binding)`` for given certificate constants."""
    if not kappa_ > 0:
        raise LicqViolated(f"kappa={kappa_} <= 0")
    if not delta > 0:
        raise NoPositiveBeta(f"delta_min={delta} <= 0 forces beta = 0")
    beta_a = kappa_ * delta / (46 * rho * L_g**2)
    beta_b = _bisect_cubic(kappa_, alpha, cubic_rhs(kappa_, alpha, gamma, L_g, M_th, rho))
    beta = min(beta_a, beta_b)
    binding = "slack" if beta_a - beta <= BINDING_RTOL * beta else "cubic"
    return beta, beta_a, beta_b, binding


@dataclass(frozen=True)
class RateCertificate:
    M_g: float
    L_g: float
    M_theta: float
    alpha: float
    gamma: float
    alpha_lower: float
    gamma_upper: float
    kappa: float
    delta_min: float
    d_0: float
    mu_star_norm: float
    beta: float
    rho: float
    beta_slack: float
    beta_cubic: float
    binding: str
    jacobian_spectral: float = field(default=float("nan"))
    jacobian_frobenius: float = field(default=float("nan"))

    def margin_slack(self) -> float:
        return self.kappa * self.delta_min / (46 * self.rho * self.L_g**2) - self.beta

    def margin_cubic(self) -> float:
        lhs = self.kappa * self.alpha / (4 * self.beta) - 4 * self.beta**2
        return lhs - cubic_rhs(self.kappa, self.alpha, self.gamma, self.L_g, self.M_theta, self.rho)

    def to_dict(self) -> dict:
        return asdict(self)


def certify_beta(fp: FlowProblem, kkt: KktPoint, d_0: float) -> RateCertificate:
    """Certified exponential decay rate at the KKT point ``kkt``.

    Raises
    ------
    LicqViolated
        If ``kappa`` at the active set is not positive.
    NoPositiveBeta
        If ``delta_min <= 0``.
    EmptyActiveSet
        If no constraint is active (``kappa`` is undefined).
    """
    jb = jacobian_norm_bounds(fp)
    alpha, gamma, alpha_lower, gamma_upper = strong_convexity_constants(fp)
    kap = kappa(fp, kkt.active)
    if kap <= 1e-12 * jb.L_g**2:
        raise LicqViolated(f"kappa={kap:.3e}: active constraint gradients are dependent")
    delta = delta_min(fp, kkt, d_0)
    mu_norm = float(np.linalg.norm(kkt.mu))
    M_th = m_theta(fp.rho, jb.L_g, jb.M_g, d_0, mu_norm)
    beta, beta_a, beta_b, binding = beta_from_constants(
        kap, alpha, gamma, jb.L_g, M_th, delta, fp.rho
    )
    cert = RateCertificate(
        M_g=jb.M_g, L_g=jb.L_g, M_theta=M_th, alpha=alpha, gamma=gamma,
        alpha_lower=alpha_lower, gamma_upper=gamma_upper, kappa=kap,
        delta_min=delta, d_0=float(d_0), mu_star_norm=mu_norm, beta=beta,
        rho=fp.rho, beta_slack=beta_a, beta_cubic=beta_b, binding=binding,
        jacobian_spectral=jb.spectral, jacobian_frobenius=jb.frobenius,
    )
    if cert.margin_slack() < 0 or cert.margin_cubic() < 0:
        raise NumericalError("certified beta violates its own conditions")
    return cert


def initial_distance(fp: FlowProblem, kkt: KktPoint, state0: NodalState) -> float:
    """Distance of a nodal initial state, mapped to edge coordinates, to the KKT set."""
    eta, mu_lo, mu_hi = map_to_edge(fp, state0.theta, state0.lambda_lo, state0.lambda_hi)
    return float(edge_distance(fp, kkt, eta, mu_lo, mu_hi))


def cardano_root(p: float, q: float) -> float:
    """Real root of ``x^3 + p x + q = 0`` (the unique one when ``p > 0``)."""
    disc = q * q / 4 + p**3 / 27
    if disc >= 0:
        r = np.sqrt(disc)
        return float(np.cbrt(-q / 2 + r) + np.cbrt(-q / 2 - r))
    # three real roots: largest from the trigonometric form
    m = 2 * np.sqrt(-p / 3)
    phi = np.arccos(3 * q / (p * m))
    return float(m * np.cos(phi / 3))


def beta_max_bounds(cert: RateCertificate) -> tuple[float, float]:
    """Lower/upper bounds on the best certifiable rate at the certificate's ``rho``.

    Lower: ``min(kappa delta_min / (46 rho L_g^2), c~)`` with ``c~`` the real
    root of ``x^3 + (c/4) x - kappa alpha_lower / 16``; upper: ``1 / (46 rho)``.
    """
    rho = cert.rho
    gbar = cert.gamma_upper
    c = 1.25 * cert.L_g**2 + (gbar + cert.M_theta) * (gbar + cert.M_theta + 1 / rho) + 1 / (2 * rho**2)
    c_tilde = cardano_root(c / 4, -cert.kappa * cert.alpha_lower / 16)
    lower = min(cert.kappa * cert.delta_min / (46 * rho * cert.L_g**2), c_tilde)
    return lower, 1 / (46 * rho)


@dataclass(frozen=True)
class TuningPlan:
    s: float
    k_i_new: np.ndarray
    rho_new: float
    certificate_before: RateCertificate
    certificate_after: RateCertificate

    @property
    def improvement(self) -> float:
        return self.certificate_after.beta / self.certificate_before.beta


def tune_gains(fp: FlowProblem, kkt: KktPoint, d_0: float, s: float) -> TuningPlan:
    """Scale integral gains by ``s`` and ``rho`` by ``1/sqrt(s)``; re-certify.

    ``d_0`` is held fixed; the multipliers of the rescaled problem are
    recomputed by the oracle.
    """
    if s < 1:
        raise ValueError(f"scaling factor must be >= 1, got {s}")
    before = certify_beta(fp, kkt, d_0)
    if s == 1:
        return TuningPlan(1.0, fp.k_i.copy(), fp.rho, before, before)
    fp2 = fp.scaled(s)
    after = certify_beta(fp2, solve_kkt_oracle(fp2), d_0)
    if not after.beta > before.beta:
        raise NumericalError(f"scaling by s={s} did not increase beta ({before.beta} -> {after.beta})")
    return TuningPlan(float(s), fp2.k_i.copy(), fp2.rho, before, after)


def rho_window(fp: FlowProblem, kkt: KktPoint, d_0: float | None = None) -> tuple[float, float]:
    """Interval ``(lower, upper]`` containing the rate-maximizing ``rho``.

    ``lower = 2 c1 / (23 kappa alpha)``, ``upper = 1 + max(2 c1, 2 gamma,
    1062/1058) / (23 kappa alpha)`` with ``c1 = L_g^2 + kappa/4 + gamma alpha``.
    Neither end depends on ``rho`` or ``d_0``.
    """
    jb = jacobian_norm_bounds(fp)
    alpha, gamma, _, _ = strong_convexity_constants(fp)
    kap = kappa(fp, kkt.active)
    if kap <= 0:
        raise LicqViolated(f"kappa={kap}")
    c1 = jb.L_g**2 + kap / 4 + gamma * alpha
    ka = 23 * kap * alpha
    return 2 * c1 / ka, 1 + max(2 * c1, 2 * gamma, 1062 / 1058) / ka


@dataclass(frozen=True)
class EdgeAdvice:
    candidate: tuple[int, int, float]
    binding: str
    condition: str
    condition_lhs: float
    condition_rhs: float
    beta_before: float
    alpha_before: float
    alpha_after: float
    beta_alpha_channel: float
    beta_full: float | None
    claim: str
    claim_holds: bool

    @property
    def condition_holds(self) -> bool:
        return self.condition_lhs >= self.condition_rhs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidate"] = list(self.candidate)
        d["condition_holds"] = self.condition_holds
        return d


def edge_addition_advisor(fp: FlowProblem, kkt: KktPoint, d_0: float, candidate) -> EdgeAdvice:
    """Effect of adding the edge ``candidate = (i, j, w)`` on the certified rate.

    The advisor reports which rate condition binds, whether the gain
    condition for a rate improvement holds (the uniform-weight variant when
    all weights are equal, ``k_max > m_max`` and ``n >= 3``), and two
    re-certifications on the augmented network: ``beta_alpha_channel``
    updates only ``alpha`` (the effect the improvement argument accounts
    for) while ``beta_full`` recomputes every constant.

    Claims checked on the alpha channel: unchanged rate when the slack condition
    binds; non-decreasing rate when the cubic one binds and the gain condition holds.
    """
    i, j, w = int(candidate[0]), int(candidate[1]), float(candidate[2])
    net = fp.net
    if i == j or net.has_edge(i, j):
        raise EdgeExists(f"edge ({i}, {j}) already present")
    s = spectral_summary(net)
    if w > s.w_max:
        raise WeightTooLarge(f"weight {w} exceeds w_max={s.w_max}")
    deg = net.degrees
    if deg[i] >= s.d_max or deg[j] >= s.d_max:
        raise DegreeCapViolated(f"nodes {i}, {j} must both have degree < d_max={s.d_max}")

    cert = certify_beta(fp, kkt, d_0)
    k_max = fp.k_i.max()
    m_max = fp.m.max()
    mu_norm = cert.mu_star_norm
    w_all = net.weights
    uniform = np.allclose(w_all, w_all[0], rtol=1e-12) and k_max > m_max and net.n >= 3
    if uniform:
        e = net.e
        s_m = k_max / m_max
        condition = "uniform"
        lhs = (21 * e - 2 * np.sqrt(e) * d_0) * fp.rho
        rhs = 2 / s_m + (d_0 + mu_norm) / np.sqrt(k_max * w_all[0])
    else:
        condition = "general"
        c = np.sqrt(s.w_max / s.w_sigma)
        lhs = (10.5 - c * d_0) * fp.rho
        rhs = (m_max / k_max) * c**2 + (d_0 + mu_norm) * c / np.sqrt(2 * k_max * s.d_max * s.w_sigma)

    net2 = net.with_edge(i, j, w)
    fp2 = fp.with_network(net2)
    alpha2 = strong_convexity_constants(fp2)[0]
    beta_alpha, *_ = beta_from_constants(
        cert.kappa, alpha2, cert.gamma, cert.L_g, cert.M_theta, cert.delta_min, cert.rho
    )
    try:
        beta_full = certify_beta(fp2, solve_kkt_oracle(fp2), d_0).beta
    except (NumericalError, ValueError):
        beta_full = None

    if cert.binding == "slack":
        claim = "unchanged"
        holds = abs(beta_alpha - cert.beta) <= 1e-12
    elif lhs >= rhs:
        claim = "nondecreasing"
        holds = beta_alpha >= cert.beta * (1 - 1e-12)
    else:
        claim = "none"
        holds = True
    return EdgeAdvice(
        candidate=(i, j, w), binding=cert.binding, condition=condition,
        condition_lhs=float(lhs), condition_rhs=float(rhs), beta_before=cert.beta,
        alpha_before=cert.alpha, alpha_after=alpha2, beta_alpha_channel=beta_alpha,
        beta_full=beta_full, claim=claim, claim_holds=bool(holds),
    )


def admissible_edges(net, weight: float | None = None):
    """Non-edges ``(i, j, w)`` between nodes of degree below ``d_max``."""
    s = spectral_summary(net)
    w = s.w_max if weight is None else weight
    deg = net.degrees
    out = []
    for i in range(net.n):
        for j in range(i + 1, net.n):
            if not net.has_edge(i, j) and deg[i] < s.d_max and deg[j] < s.d_max:
                out.append((i, j, w))
    return out
