"""Time stepping for the transport field: direct, reversed, and ballistic.

Explicit Euler in time with first-order upwinding in space.  The update is
deliberately a plain linear stencil: every solver downstream (time
reversal, duality-based control, operator-norm estimation) relies on the
step being cheap and exactly transposable.  Prescribed inflow data enters
as upwind ghost values; the outflow trace is sampled at every step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import (
    Field,
    BoundaryTrace,
    PhaseSpaceGrid,
    INFLOW,
    OUTFLOW,
    _apply_inflow_correction,
    _inflow_index_arrays,
    _sample_boundary_raw,
    _upwind_derivative_raw,
)
from .medium import Medium


class CflError(ValueError):
    """Time step exceeds the explicit stability bound."""


def stability_timestep(grid: PhaseSpaceGrid) -> float:
    """Largest stable explicit step: 1 / (c * max_k sum_a |theta_ka|/dx_a)."""
    rates = np.abs(grid.directions) @ (1.0 / np.asarray(grid.dx))
    return float(1.0 / (grid.c * rates.max()))


def cfl_timestep(grid: PhaseSpaceGrid, cfl_safety: float = 0.9) -> float:
    if not 0.0 < cfl_safety <= 1.0:
        raise ValueError("cfl_safety must lie in (0, 1]")
    return cfl_safety * stability_timestep(grid)


def resolve_steps(tau: float, dt: float) -> int:
    """Number of steps covering [0, tau]; tau must be an integer multiple
    of dt up to 1e-9 relative slack."""
    if tau < 0 or dt <= 0:
        raise ValueError("need tau >= 0 and dt > 0")
    n = int(round(tau / dt))
    if abs(n * dt - tau) > 1e-9 * max(tau, dt):
        raise ValueError(f"tau={tau} is not an integer number of steps of dt={dt}")
    return n


@dataclass(eq=False)
class EvolutionSpec:
    """Run parameters for one evolution.

    forcing may be a constant Field or a callable t -> Field (scaled by 1/l
    inside the equation); inflow is a sampled series trace with one sample
    per step boundary (n_steps + 1 in total).
    """

    tau: float
    dt: float
    forcing: Field | Callable[[float], Field] | None = None
    inflow: BoundaryTrace | None = None
    record_trace: bool = True
    record_every: int = 0


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    snapshots: list
    final: Field
    outflow: BoundaryTrace | None


def _forcing_values(forcing, t: float, grid: PhaseSpaceGrid):
    if forcing is None:
        return None
    f = forcing(t) if callable(forcing) else forcing
    if f.grid.field_shape() != grid.field_shape():
        raise ValueError("forcing field shape does not match the grid")
    return f.values


def _evolve_core(
    grid: PhaseSpaceGrid,
    medium: Medium,
    vals0: np.ndarray,
    n_steps: int,
    dt: float,
    *,
    sign: float,
    use_scatter: bool,
    inflow_vals: np.ndarray | None = None,
    inflow_shift: int = 0,
    forcing=None,
    record_trace: bool = True,
    record_every: int = 0,
    growth_bound: float | None = None,
):
    """Shared explicit stepper.

    sign=+1 gives the absorbing (direct) reaction, sign=-1 the emitting
    (reversed) one; with scattering enabled the kernel application is the
    forward table for sign=+1 and its weighted transpose for sign=-1.
    Step n consumes inflow sample n + inflow_shift.
    """
    c, l = grid.c, grid.l
    mu_a, mu_s = medium.mu_a, medium.mu_s
    if use_scatter:
        kmat = (
            medium.scattering_matrix if sign > 0 else medium.scattering_matrix_adjoint
        )
    reaction = sign * (mu_a + mu_s)[..., None]
    mask = grid.mask
    inflow_cache = _inflow_index_arrays(grid) if inflow_vals is not None else None

    vals = np.array(vals0, dtype=float)
    if not np.isfinite(vals).all():
        raise ValueError("initial field contains non-finite entries")

    nf, nd = grid.faces.n_faces, grid.n_dirs
    out_mask = grid.faces.outflow_mask
    trace = np.zeros((nf, nd, n_steps + 1)) if record_trace else None

    snaps, times = [], []
    if record_every > 0:
        snaps.append(Field(grid, vals.copy()))
        times.append(0.0)
    if record_trace:
        trace[:, :, 0] = _sample_boundary_raw(grid, vals) * out_mask

    norm0 = float(np.sqrt(np.sum(vals * vals)))
    for n in range(n_steps):
        rate = _upwind_derivative_raw(grid, vals)
        if inflow_vals is not None:
            s = min(n + inflow_shift, inflow_vals.shape[2] - 1)
            _apply_inflow_correction(grid, rate, inflow_vals[:, :, s], inflow_cache)
        rate += reaction * vals
        if use_scatter:
            rate -= (sign * mu_s)[..., None] * (vals @ kmat.T)
        new = vals - (c * dt) * rate
        fv = _forcing_values(forcing, n * dt, grid)
        if fv is not None:
            new += (c * dt / l) * fv
        if mask is not None:
            new *= mask[..., None]
        vals = new

        if (n + 1) % 100 == 0 or n + 1 == n_steps:
            if not np.isfinite(vals).all():
                raise FloatingPointError(
                    f"non-finite field at step {n + 1} (t={(n + 1) * dt:.6g}); "
                    "check the CFL bound and the medium"
                )
            if growth_bound is not None and norm0 > 0:
                cur = float(np.sqrt(np.sum(vals * vals)))
                limit = growth_bound * norm0
                if cur > 10.0 * limit:
                    warnings.warn(
                        f"reversed evolution norm {cur:.3e} exceeds 10x the "
                        f"analytic growth bound {limit:.3e} at t={(n + 1) * dt:.6g}",
                        RuntimeWarning,
                    )
                    growth_bound = None  # warn once

        if record_trace:
            trace[:, :, n + 1] = _sample_boundary_raw(grid, vals) * out_mask
        if record_every > 0 and (n + 1) % record_every == 0:
            snaps.append(Field(grid, vals.copy()))
            times.append((n + 1) * dt)

    outflow = (
        BoundaryTrace(grid, trace, OUTFLOW, dt=dt) if record_trace else None
    )
    return Trajectory(
        times=np.asarray(times),
        snapshots=snaps,
        final=Field(grid, vals),
        outflow=outflow,
    )


def _prepare(grid: PhaseSpaceGrid, spec: EvolutionSpec):
    if spec.dt > stability_timestep(grid) * (1.0 + 1e-12):
        raise CflError(
            f"dt={spec.dt:.6g} exceeds the stability bound "
            f"{stability_timestep(grid):.6g}"
        )
    n_steps = resolve_steps(spec.tau, spec.dt)
    inflow_vals = None
    if spec.inflow is not None:
        h = spec.inflow
        if h.part != INFLOW:
            raise ValueError("prescribed boundary data must be an inflow trace")
        if not h.is_series:
            inflow_vals = np.repeat(h.values[:, :, None], n_steps + 1, axis=2)
        else:
            if h.n_times != n_steps + 1:
                raise ValueError(
                    f"inflow series has {h.n_times} samples, expected {n_steps + 1}"
                )
            inflow_vals = h.values
    return n_steps, inflow_vals


def evolve_direct(
    grid: PhaseSpaceGrid, medium: Medium, u0: Field, spec: EvolutionSpec
) -> Trajectory:
    """March the absorbing/scattering transport problem forward in time."""
    n_steps, inflow_vals = _prepare(grid, spec)
    return _evolve_core(
        grid,
        medium,
        u0.values,
        n_steps,
        spec.dt,
        sign=+1.0,
        use_scatter=True,
        inflow_vals=inflow_vals,
        forcing=spec.forcing,
        record_trace=spec.record_trace,
        record_every=spec.record_every,
    )


def _reversed_growth_bound(grid: PhaseSpaceGrid, medium: Medium, tau: float) -> float:
    n0 = float(np.exp(grid.l * (medium.mu_a_bar + medium.mu_s_bar)))
    return n0 * float(np.exp(n0 * grid.c * medium.mu_s_bar * tau))


def evolve_reversed(
    grid: PhaseSpaceGrid,
    medium: Medium,
    psi0: Field,
    spec: EvolutionSpec,
    inflow_shift: int = 0,
) -> Trajectory:
    """March the reversed problem (emitting reaction, transposed kernel).

    Solutions may grow; a warning fires if the norm exceeds ten times the
    analytic growth bound.  ``inflow_shift=1`` makes step n consume inflow
    sample n+1, which is the mirror image of the direct stepper's
    begin-of-step convention under time reflection.
    """
    n_steps, inflow_vals = _prepare(grid, spec)
    return _evolve_core(
        grid,
        medium,
        psi0.values,
        n_steps,
        spec.dt,
        sign=-1.0,
        use_scatter=True,
        inflow_vals=inflow_vals,
        inflow_shift=inflow_shift,
        forcing=spec.forcing,
        record_trace=spec.record_trace,
        record_every=spec.record_every,
        growth_bound=_reversed_growth_bound(grid, medium, spec.tau),
    )


def evolve_ballistic(
    grid: PhaseSpaceGrid,
    medium: Medium,
    u0: Field,
    spec: EvolutionSpec,
    reversed: bool = False,
) -> Trajectory:
    """Pure transport with total attenuation mu_a + mu_s and no scattering
    re-emission; the exactly-solvable backbone used as an oracle."""
    n_steps, inflow_vals = _prepare(grid, spec)
    return _evolve_core(
        grid,
        medium,
        u0.values,
        n_steps,
        spec.dt,
        sign=-1.0 if reversed else +1.0,
        use_scatter=False,
        inflow_vals=inflow_vals,
        forcing=spec.forcing,
        record_trace=spec.record_trace,
        record_every=spec.record_every,
        growth_bound=_reversed_growth_bound(grid, medium, spec.tau)
        if reversed
        else None,
    )


# ---------------------------------------------------------------------------
# Single zero-input steps and their exact transposes (adjoint pipelines)


def step_raw(
    grid: PhaseSpaceGrid,
    medium: Medium,
    vals: np.ndarray,
    dt: float,
    sign: float,
) -> np.ndarray:
    """One explicit step with zero inflow and zero forcing, on raw values."""
    kmat = medium.scattering_matrix if sign > 0 else medium.scattering_matrix_adjoint
    rate = _upwind_derivative_raw(grid, vals)
    rate += sign * (medium.mu_a + medium.mu_s)[..., None] * vals
    rate -= sign * medium.mu_s[..., None] * (vals @ kmat.T)
    new = vals - (grid.c * dt) * rate
    if grid.mask is not None:
        new *= grid.mask[..., None]
    return new


def step_adjoint_raw(
    grid: PhaseSpaceGrid,
    medium: Medium,
    vals: np.ndarray,
    dt: float,
    sign: float,
) -> np.ndarray:
    """Exact weighted transpose of ``step_raw``: the step conjugated with
    the direction flip (upwind stencils and the kernel table both transpose
    into their direction-negated counterparts)."""
    neg = grid.neg_index
    return step_raw(grid, medium, vals[..., neg], dt, sign)[..., neg]


# ---------------------------------------------------------------------------
# Operator-norm estimation for the evolution maps


def propagate(
    grid: PhaseSpaceGrid,
    medium: Medium,
    f: Field,
    t: float,
    which: str = "direct",
    dt: float | None = None,
) -> Field:
    """Final state of the zero-forcing, zero-inflow evolution from f."""
    if t == 0.0:
        return f.copy()
    if dt is None:
        dt_max = cfl_timestep(grid, 0.9)
        n = max(1, int(np.ceil(t / dt_max - 1e-12)))
        dt = t / n
    spec = EvolutionSpec(tau=t, dt=dt, record_trace=False)
    if which == "direct":
        return evolve_direct(grid, medium, f, spec).final
    if which == "reversed":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return evolve_reversed(grid, medium, f, spec).final
    raise ValueError("which must be 'direct' or 'reversed'")


def propagate_adjoint(
    grid: PhaseSpaceGrid,
    medium: Medium,
    f: Field,
    t: float,
    which: str = "direct",
    dt: float | None = None,
) -> Field:
    """Exact discrete adjoint of ``propagate``.

    The upwind stencil transposes into the upwind stencil of the flipped
    direction and the kernel table transposes by direction negation, so the
    adjoint evolution is the evolution conjugated with the angular flip.
    """
    flipped = Field(grid, f.values[..., grid.neg_index])
    out = propagate(grid, medium, flipped, t, which=which, dt=dt)
    return Field(grid, out.values[..., grid.neg_index])


def semigroup_norm(
    grid: PhaseSpaceGrid,
    medium: Medium,
    t: float,
    which: str = "direct",
    iters: int = 30,
    seed: int = 0,
    dt: float | None = None,
) -> float:
    """Power-iteration estimate of the evolution operator norm at time t."""
    from .medium import operator_norm_estimate

    if iters < 3:
        raise ValueError("need at least 3 power iterations")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return operator_norm_estimate(
        lambda u: propagate(grid, medium, u, t, which=which, dt=dt),
        grid,
        iters=iters,
        seed=seed,
        apply_adjoint=lambda u: propagate_adjoint(grid, medium, u, t, which=which, dt=dt),
    )
