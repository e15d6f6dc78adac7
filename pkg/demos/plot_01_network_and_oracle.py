"""
Networks, spectra and the KKT oracle
====================================

Build a small converter network, look at its Laplacian spectrum and solve
the constrained flow problem by active-set enumeration.
"""

###########################################################################
# A four-node ring with one chord. Weights are line susceptances in pu.

import numpy as np

from droopnet import FlowProblem, build_network, solve_kkt_oracle, spectral_summary
from droopnet.flowproblem import balance_frequency, kappa

net = build_network(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.5), (0, 3, 1.0), (0, 2, 0.5)])
s = spectral_summary(net)
print("eigenvalues of L:", np.round(s.eigenvalues, 4))
print(f"{s.lower_bound:.3f} <= lambda_max = {s.lambda_max:.3f} <= {s.upper_bound:.3f}")

###########################################################################
# Loads, setpoints and limits. Node 1 has a tight upper limit and the
# total load exceeds the total setpoint, so the network runs below nominal
# frequency and node 1 saturates.

fp = FlowProblem(
    net=net,
    p_load=[0.6, 0.5, 0.3, 0.4],
    p_star=[0.4, 0.35, 0.3, 0.35],
    p_lo=[0.0, 0.0, 0.0, 0.0],
    p_hi=[1.0, 0.4, 1.0, 1.0],
    m=[1.0, 2.0, 1.5, 1.0],
    k_i=[2.0, 2.0, 2.0, 2.0],
    rho=1.0,
)
kkt = solve_kkt_oracle(fp)
print("optimal injections:", np.round(kkt.P, 4))
print("at upper limit:", kkt.active_hi, " at lower limit:", kkt.active_lo)
print("synchronous frequency:", round(kkt.omega_s, 6))

###########################################################################
# The frequency follows from power balance and the droop law at the
# nodes that are not saturated.

print("balance formula:", round(balance_frequency(fp, kkt.active_lo, kkt.active_hi), 6))
print("kappa at the active set:", round(kappa(fp, kkt.active), 6))
