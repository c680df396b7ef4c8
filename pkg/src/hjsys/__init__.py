"""Discounted and ergodic weakly coupled Hamilton-Jacobi systems on the torus.

The public surface re-exports the problem model, the monotone upwind scheme,
the discounted solver, occupation measures and the vanishing-discount /
ergodic machinery.
"""

__version__ = "0.1.0"

from .problem import (
    BUILTINS,
    ControlSet,
    ProblemError,
    ProblemInstance,
    TorusGrid,
    ValidationReport,
    builtin_problem,
    load_problem,
    serialize_problem,
    validate_problem,
)
from .monotone import (
    MonotoneCheck,
    MonotonicityError,
    NormalForm,
    Permutation,
    is_monotone,
    normal_form,
    row_sums,
    shifted,
    strongly_connected_components,
)
from .hamiltonian import (
    coercivity_margin,
    coercivity_margins,
    eval_H,
    eval_H_phi,
    hamiltonian_table,
    sample_directions,
)
from .scheme import (
    DiscreteOperator,
    assemble,
    bellman_apply,
    build_operator,
    check_subsolution,
    check_supersolution,
    contraction_factor,
    equation_residual,
)
from .solver import (
    ConvergenceError,
    ValueFunction,
    comparison_test,
    diagnostics,
    solve_discounted,
)
from .measures import (
    DiscreteMeasure,
    MeasureError,
    ProbabilityMeasure,
    adjoint_residual,
    brute_force_oracle,
    from_probability,
    green_poisson,
    mather_limit,
    mather_residual,
    normalization,
    pairing,
    test_vectors,
    to_probability,
)
from .ergodic import (
    ErgodicError,
    ErgodicSolution,
    default_schedule,
    ergodic_constant_block,
    ergodic_constant_scalar,
    extrapolate,
    lambda_sweep,
    solve_ergodic,
    vanishing_limit,
)
