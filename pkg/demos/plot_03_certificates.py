"""
Rate certificates and gain tuning
=================================

Certify an exponential decay rate, scale the integral gains, scan rho and
ask whether adding a line would help.
"""

###########################################################################
# Certificate from a random start state.

import numpy as np

from droopnet.dynamics import ProjectionFreeNodal, integrate
from droopnet.experiment import fit_decay_rate, kkt_distances
from droopnet.rates import (
    certify_beta,
    edge_addition_advisor,
    initial_distance,
    rho_window,
    tune_gains,
)
from droopnet.testing import advisor_instance, random_problem, random_state

rng = np.random.default_rng(3)
fp, kkt = random_problem(4, rng, require_active=True)
x0 = random_state(4, rng, 0.5)
d0 = initial_distance(fp, kkt, x0)
cert = certify_beta(fp, kkt, d0)
print(f"beta = {cert.beta:.3e} ({cert.binding} binds), d_0 = {d0:.3f}")

###########################################################################
# The certificate is conservative: the simulated distance to the KKT set
# decays much faster.

traj = integrate(ProjectionFreeNodal(fp), x0, 100.0, 5e-3, record_every=20)
beta_hat, r2 = fit_decay_rate(traj.times, kkt_distances(traj, fp, kkt))
print(f"fitted rate {beta_hat:.3f} (R^2 = {r2:.4f})")

###########################################################################
# Scaling k_I by s and rho by 1/sqrt(s) raises the certified rate.

for s in (1.25, 1.66, 2.0, 4.0):
    plan = tune_gains(fp, kkt, d0, s)
    print(f"s = {s:<5} beta = {plan.certificate_after.beta:.3e}")

###########################################################################
# Certified rate over the rho window.

lo, hi = rho_window(fp, kkt, d0)
grid = np.linspace(lo, hi, 201)[1:]
betas = [certify_beta(fp.with_rho(r), kkt, d0).beta for r in grid]
print(f"window ({lo:.3f}, {hi:.3f}], best rho on the grid {grid[int(np.argmax(betas))]:.3f}")

###########################################################################
# Edge advice on a path where the end nodes may be joined.

fp, kkt, d0, cand = advisor_instance("cubic", rng)
print(edge_addition_advisor(fp, kkt, d0, cand).to_dict())
