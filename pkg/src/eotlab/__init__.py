"""Discrete entropic optimal transport laboratory.

Sinkhorn potentials (:mod:`eotlab.sinkhorn`), exact Kantorovich potentials
by the transportation simplex (:mod:`eotlab.exact`), the multimarginal
extension (:mod:`eotlab.multimarginal`) and small-noise experiments
(:mod:`eotlab.lab`).
"""

from .exact import ExactSolution, brute_force_assignment, c_transform, check_optimality, solve_exact
from .lab import (
    ConvergenceReport,
    CostFamily,
    EpsSchedule,
    LdpReport,
    example52,
    invariant_audit,
    ldp_estimate,
    run_schedule,
)
from .measures import (
    INFINITE_ENTROPY,
    Coupling,
    CostKernel,
    CostMatrix,
    DiscreteMeasure,
    InstanceError,
    NonFiniteError,
    PotentialPair,
    build_cost_matrix,
    dual_value,
    marginal_residuals,
    primal_value,
    relative_entropy,
)
from .multimarginal import MultiProblem, PotentialFamily, mm_exact, mm_sinkhorn
from .sinkhorn import (
    MaxIterExceeded,
    SinkhornConfig,
    SinkhornSolution,
    normalize_pair,
    plan_from_potentials,
    sinkhorn_solve,
    softmin_update,
)

__version__ = "0.1.0"
