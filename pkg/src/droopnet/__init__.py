"""Power-limiting droop control of converter networks: simulation, KKT
oracle and convergence-rate certificates."""

from .graph import PowerNetwork, build_network, spectral_summary, active_graph
from .flowproblem import (
    FlowProblem,
    KktPoint,
    check_feasibility,
    solve_kkt_oracle,
    kappa,
    check_licq,
    edge_problem_data,
)
from .dynamics import (
    NodalState,
    EdgeState,
    ProjectionFreeNodal,
    ProjectionBasedNodal,
    PrimalDualEdge,
    integrate,
    verify_coinciding,
)
from .rates import RateCertificate, certify_beta, tune_gains, rho_window, edge_addition_advisor

__version__ = "0.1.0"
