"""Compiled vector fields and fixed-step loops.

State layouts (flat float64 vectors):

* nodal systems: ``[theta (n), lambda_lo (n), lambda_hi (n)]``
* edge system:   ``[eta (e), mu_lo (n), mu_hi (n)]``

Parameter tuples are built by :mod:`droopnet.dynamics`; keep the field order
in sync with ``_nodal_params`` / ``_edge_params`` there.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def projection_free_nodal(x, p):
    L, p_load, p_star, p_lo, p_hi, m, k, rho = p
    n = p_load.size
    theta = x[:n]
    lam_lo = x[n : 2 * n]
    lam_hi = x[2 * n :]
    P = L @ theta + p_load
    z_lo = np.maximum(rho * (p_lo - P) + lam_lo, 0.0)
    z_hi = np.maximum(rho * (P - p_hi) + lam_hi, 0.0)
    out = np.empty(3 * n)
    out[:n] = m * (p_star - P) - k * (z_hi - z_lo)
    out[n : 2 * n] = (z_lo - lam_lo) / rho
    out[2 * n :] = (z_hi - lam_hi) / rho
    return out


@njit(cache=True)
def primal_dual_edge(x, p):
    BV, VBt, p_load, p_star, p_lo, p_hi, m, sk, rho = p
    n = p_load.size
    e = x.size - 2 * n
    eta = x[:e]
    mu_lo = x[e : e + n]
    mu_hi = x[e + n :]
    P = BV @ eta + p_load
    z_lo = np.maximum(rho * sk * (p_lo - P) + mu_lo, 0.0)
    z_hi = np.maximum(rho * sk * (P - p_hi) + mu_hi, 0.0)
    out = np.empty(x.size)
    out[:e] = VBt @ (m * (p_star - P) - sk * (z_hi - z_lo))
    out[e : e + n] = (z_lo - mu_lo) / rho
    out[e + n :] = (z_hi - mu_hi) / rho
    return out


@njit(cache=True)
def projection_based_nodal(x, p):
    L, p_load, p_star, p_lo, p_hi, m, sk, kp, tol = p
    n = p_load.size
    theta = x[:n]
    lam_lo = x[n : 2 * n]
    lam_hi = x[2 * n :]
    P = L @ theta + p_load
    g_lo = p_lo - P
    g_hi = P - p_hi
    out = np.empty(3 * n)
    out[:n] = (
        m * (p_star - P)
        - sk * (lam_hi - lam_lo)
        - kp * (np.maximum(g_hi, 0.0) - np.maximum(g_lo, 0.0))
    )
    for i in range(n):
        v = sk[i] * g_lo[i]
        out[n + i] = v if lam_lo[i] > tol else max(v, 0.0)
        v = sk[i] * g_hi[i]
        out[2 * n + i] = v if lam_hi[i] > tol else max(v, 0.0)
    return out


@njit(cache=True)
def _n_records(nsteps, offset, every):
    # global step indices offset+1 .. offset+nsteps divisible by `every`
    return (offset + nsteps) // every - offset // every


@njit(cache=True)
def rk4_run(f, x0, p, dt, nsteps, offset, every):
    """Classical RK4; records the state after global steps divisible by ``every``.

    Returns ``(x_final, records, n_done)``; ``n_done < nsteps`` signals a
    non-finite state at step ``n_done + 1``.
    """
    rec = np.empty((_n_records(nsteps, offset, every), x0.size))
    x = x0.copy()
    r = 0
    h2 = 0.5 * dt
    for i in range(1, nsteps + 1):
        k1 = f(x, p)
        k2 = f(x + h2 * k1, p)
        k3 = f(x + h2 * k2, p)
        k4 = f(x + dt * k3, p)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return x, rec[:r], i - 1
        if (offset + i) % every == 0:
            rec[r] = x
            r += 1
    return x, rec, nsteps


@njit(cache=True)
def euler_clamp_run(f, x0, p, dt, nsteps, offset, every, first_dual):
    """Explicit Euler with the dual block ``x[first_dual:]`` clamped at zero."""
    rec = np.empty((_n_records(nsteps, offset, every), x0.size))
    x = x0.copy()
    r = 0
    for i in range(1, nsteps + 1):
        x = x + dt * f(x, p)
        for j in range(first_dual, x.size):
            if x[j] < 0.0:
                x[j] = 0.0
        if not np.all(np.isfinite(x)):
            return x, rec[:r], i - 1
        if (offset + i) % every == 0:
            rec[r] = x
            r += 1
    return x, rec, nsteps
