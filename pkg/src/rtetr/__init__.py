"""Discrete-ordinates radiative transport with time-reversal inversion and
minimum-norm boundary control."""

from .grid import (
    Rod1D,
    Box2D,
    Disk2D,
    PhaseSpaceGrid,
    Field,
    BoundaryTrace,
    INFLOW,
    OUTFLOW,
    FULL,
    build_grid,
    refine_grid,
    phase_inner,
    phase_norm,
    graph_inner,
    graph_norm,
    trace_inner,
    trace_norm,
    trace_series_inner,
    trace_series_norm,
    directional_derivative,
    restrict_trace,
    green_identity_residual,
)
from .medium import (
    Kernel,
    Medium,
    RegimeReport,
    build_medium,
    isotropic_kernel,
    henyey_greenstein_kernel,
    table_kernel,
    apply_scattering,
    apply_scattering_adjoint,
    validate_kernel,
    regime_report,
    operator_norm_estimate,
)
from .evolution import (
    CflError,
    EvolutionSpec,
    Trajectory,
    cfl_timestep,
    stability_timestep,
    evolve_direct,
    evolve_reversed,
    evolve_ballistic,
    propagate,
    propagate_adjoint,
    semigroup_norm,
)
from .stationary import (
    ConvergenceError,
    StationarySpec,
    solve_stationary_direct,
    solve_stationary_reversed,
    stationary_residual_direct,
    stationary_residual_reversed,
    infsup_witness,
    reversed_form,
    direct_form,
)
from .timereversal import (
    LIFT_ZERO,
    LIFT_STATIONARY,
    DivergenceError,
    Measurement,
    ReconstructionReport,
    measure,
    reflect_angle,
    reflect_time,
    time_reversal,
    apply_error_operator,
    apply_error_operator_adjoint,
    contraction_factor,
    reconstruct_neumann,
    solve_fredholm,
    suggest_tau,
    resolve_dt,
)
from .control import (
    ADJOINT_EXACT,
    ADJOINT_REFLECTION,
    ControlSolveReport,
    steer,
    adjoint_steer,
    min_norm_control,
)

__version__ = "0.1.0"
