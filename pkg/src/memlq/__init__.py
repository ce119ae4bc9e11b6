"""LQ optimal control of linear evolutions with memory of the inputs.

Desk-scale numerical library: model setup (including the boundary-controlled
heat benchmark), discrete forward/adjoint operator tables, open-loop solve
via the optimality condition, the optimal-cost operator triplet by three
independent routes, feedback synthesis, and brute-force oracles.
"""

from .model import (
    ControlSystem,
    ControlTrajectory,
    MemoryKernel,
    StatePoint,
    StateTrajectory,
    TimeGrid,
    build_heat_model,
    kernel_eval,
    system_from_config,
)
from .propagator import (
    DiscreteOperators,
    LambdaTable,
    SemigroupTable,
    build_tables,
    mild_solution,
    semigroup_apply,
)
from .openloop import (
    PsiZTables,
    QuadraticForm,
    assemble_quadratic_form,
    build_psi_z,
    cost_eval,
    open_loop_from_psi_z,
    solve_open_loop,
)
from .riccati import (
    BlockOperatorBundle,
    GainTables,
    RiccatiTriplet,
    build_gains,
    cost_from_triplet,
    dre_residual,
    riccati_backward,
    riccati_by_quadrature,
    riccati_picard,
    triplet_distance,
)
from .closedloop import FeedbackRun, dp_consistency_check, simulate_closed_loop
from .oracle import (
    brute_force_minimize,
    classical_dre,
    refined_convolution,
    scalar_riccati_closed_form,
)

__version__ = "0.1.0"
