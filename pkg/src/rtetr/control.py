"""Boundary steering: drive the field from rest to a target state.

The steering map takes inflow boundary data on [0, tau] to the final
state.  Its adjoint comes in two flavors: the exact transpose of the
discrete stepping (used by the normal-equation solver, adjoint identity
tight to roundoff), and the reflection composition that mirrors the
continuum duality between steering and measurement (first-order
consistent with the exact one; their gap shrinks under refinement).

The minimum-norm control is recovered through conjugate gradients on the
normal operator steer(adjoint(.)), mirroring the pseudo-inverse formula:
the solution is in the range of the adjoint by construction, hence
orthogonal to the null space of the steering map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import (
    Field,
    BoundaryTrace,
    PhaseSpaceGrid,
    INFLOW,
    _sample_boundary_raw,
    phase_inner,
    phase_norm,
)
from .medium import Medium, regime_report
from .evolution import (
    EvolutionSpec,
    evolve_direct,
    resolve_steps,
    step_adjoint_raw,
)
from .timereversal import measure, reflect_angle, reflect_time, resolve_dt

ADJOINT_EXACT = "exact"
ADJOINT_REFLECTION = "reflection"


def steer(
    grid: PhaseSpaceGrid,
    medium: Medium,
    h: BoundaryTrace,
    tau: float,
) -> Field:
    """Final state reached from rest under the inflow data h; linear in h."""
    if h.part != INFLOW:
        raise ValueError("steering data must be an inflow trace")
    if not h.is_series or h.dt is None:
        raise ValueError("steering data must be a sampled series with dt")
    spec = EvolutionSpec(tau=tau, dt=h.dt, inflow=h, record_trace=False)
    traj = evolve_direct(grid, medium, Field.zeros(grid), spec)
    return traj.final


def adjoint_steer(
    grid: PhaseSpaceGrid,
    medium: Medium,
    g: Field,
    tau: float,
    mode: str = ADJOINT_EXACT,
    dt: float | None = None,
) -> BoundaryTrace:
    """Adjoint of the steering map, as an inflow series on [0, tau].

    mode="exact": transpose of the discrete stepping (inflow injection
    transposes into boundary sampling, each step into its flip-conjugate);
    pairs with ``steer`` to roundoff in the time-integrated boundary inner
    product.  mode="reflection": time-and-angle reflection of the measurement of
    the angle-flipped state, the continuum duality composition.  The
    composition carries the crossing-time normalization c/diam: without it
    the duality pairing only balances on unit-diameter domains.
    """
    dt = resolve_dt(grid, tau, dt)
    if mode == ADJOINT_REFLECTION:
        mm = measure(grid, medium, reflect_angle(g), tau, dt)
        flipped = reflect_time(mm.trace, tau)
        return BoundaryTrace(
            grid, (grid.c / grid.l) * flipped.values, INFLOW, dt=dt
        )
    if mode != ADJOINT_EXACT:
        raise ValueError(f"unknown adjoint mode {mode!r}")
    n_steps = resolve_steps(tau, dt)
    nf, nd = grid.faces.n_faces, grid.n_dirs
    out = np.zeros((nf, nd, n_steps + 1))
    in_mask = grid.faces.inflow_mask
    scale = grid.c / grid.l
    psi = g.values.copy()
    for n in range(n_steps - 1, -1, -1):
        out[:, :, n] = scale * _sample_boundary_raw(grid, psi) * in_mask
        psi = step_adjoint_raw(grid, medium, psi, dt, sign=+1.0)
    return BoundaryTrace(grid, out, INFLOW, dt=dt)


@dataclass(eq=False)
class ControlSolveReport:
    h_min: BoundaryTrace
    normal_solution: Field            # w with h_min = adjoint(w)
    cg_iterations: int
    residual_history: np.ndarray      # relative normal-equation residuals
    energy_history: np.ndarray        # CG quadratic; strictly decreasing
    achieved: float                   # |steer(h_min) - target| / |target|
    converged: bool


def min_norm_control(
    grid: PhaseSpaceGrid,
    medium: Medium,
    v_star: Field,
    tau: float,
    tol: float = 1e-3,
    max_iter: int = 200,
    adjoint_mode: str = ADJOINT_EXACT,
    dt: float | None = None,
    tikhonov: float = 0.0,
) -> ControlSolveReport:
    """Smallest-norm inflow data steering rest to the target state.

    Conjugate gradients on the self-adjoint normal operator; the returned
    control is the adjoint image of the normal solution.  Running past
    ``max_iter`` is reported, not raised: a large achieved residual usually
    means the target has components that are only weakly reachable on this
    grid.  ``tikhonov`` adds a diagonal shift for ill-conditioned targets
    (off by default).
    """
    if tau < grid.T:
        raise ValueError(
            f"tau={tau} is below the domain crossing time {grid.T}; no signal "
            "can traverse the domain"
        )
    if not regime_report(medium, grid).satisfied:
        warnings.warn(
            "weak-scattering condition violated: surjectivity of the "
            "steering map is not guaranteed",
            RuntimeWarning,
        )
    dt = resolve_dt(grid, tau, dt)

    def normal_apply(w: Field) -> Field:
        h = adjoint_steer(grid, medium, w, tau, mode=adjoint_mode, dt=dt)
        out = steer(grid, medium, h, tau)
        if tikhonov > 0.0:
            out = out + tikhonov * w
        return out

    bnorm = phase_norm(v_star)
    n_steps = resolve_steps(tau, dt)
    if bnorm == 0.0:
        return ControlSolveReport(
            h_min=BoundaryTrace.zeros(grid, INFLOW, n_steps + 1, dt),
            normal_solution=Field.zeros(grid),
            cg_iterations=0,
            residual_history=np.zeros(0),
            energy_history=np.zeros(0),
            achieved=0.0,
            converged=True,
        )

    x = Field.zeros(grid)
    r = v_star.copy()
    p = r.copy()
    rs = phase_inner(r, r)
    history, energies = [], []
    converged = False
    iterations = 0
    for _ in range(max_iter):
        ap = normal_apply(p)
        denom = phase_inner(p, ap)
        if denom <= 0.0:
            warnings.warn(
                "normal operator lost positivity in finite precision; "
                "stopping the iteration",
                RuntimeWarning,
            )
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = phase_inner(r, r)
        iterations += 1
        rel = float(np.sqrt(max(rs_new, 0.0)) / bnorm)
        history.append(rel)
        # CG quadratic 0.5<Ax,x> - <b,x> = -0.5 <b + r, x>
        energies.append(-0.5 * (phase_inner(v_star, x) + phase_inner(r, x)))
        if rel <= tol:
            converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new

    h_min = adjoint_steer(grid, medium, x, tau, mode=adjoint_mode, dt=dt)
    achieved = phase_norm(steer(grid, medium, h_min, tau) - v_star) / bnorm
    return ControlSolveReport(
        h_min=h_min,
        normal_solution=x,
        cg_iterations=iterations,
        residual_history=np.asarray(history),
        energy_history=np.asarray(energies),
        achieved=float(achieved),
        converged=converged,
    )
