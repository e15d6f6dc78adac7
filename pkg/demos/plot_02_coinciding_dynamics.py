"""
Nodal and edge dynamics
=======================

The projection-free controller evolves angles and integrator states at the
nodes. Mapped to edge coordinates it produces exactly the trajectory of a
primal-dual gradient flow on the augmented Lagrangian.
"""

###########################################################################
# Random instance and start state, fixed seed.

import numpy as np

from droopnet.dynamics import NodalState, ProjectionFreeNodal, integrate, verify_coinciding
from droopnet.testing import random_problem, random_state

rng = np.random.default_rng(0)
fp, kkt = random_problem(5, rng, require_active=True)
x0 = random_state(5, rng, 0.5)

###########################################################################
# Largest gap between the two trajectories over ten seconds.

print("max deviation:", verify_coinciding(fp, x0, t_end=10.0, dt=1e-3))

###########################################################################
# Long run of the nodal system: injections approach the optimizer and
# every node settles at the same frequency.

traj = integrate(ProjectionFreeNodal(fp), NodalState.zeros(5), 120.0, 5e-3, record_every=200)
print("final P:  ", np.round(traj.P[-1], 6))
print("oracle P: ", np.round(kkt.P, 6))
print("frequencies:", np.round(traj.omega[-1], 6), " omega_s:", round(kkt.omega_s, 6))
