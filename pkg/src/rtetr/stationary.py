"""Steady-state transport solves by source iteration over upwind sweeps.

Each sweep solves the direction-decoupled attenuation problem exactly by
marching cells in upwind topological order (forward substitution); the
angular coupling is lagged one iteration.  The same first-order stencils
as the time stepper are used, so the converged field satisfies the
discrete stationary equation of the evolution operators, which the
time-reversal lift construction depends on.

The reversed problem carries the emitting sign on the reaction term and
the weighted-transpose kernel; it converges under the same weak-scattering
smallness condition as the evolution estimates but is attempted (with a
warning) outside it.
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
    _apply_inflow_correction,
    _inflow_index_arrays,
    _upwind_derivative_raw,
    phase_inner,
    phase_norm,
)
from .medium import Medium, regime_report


class ConvergenceError(RuntimeError):
    """Source iteration failed to reach the residual tolerance."""


@dataclass(eq=False)
class StationarySpec:
    source: Field | None = None
    inflow: BoundaryTrace | None = None
    tol: float | None = None
    max_sweeps: int = 500


def _march_1d(a: float, denom: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    u = np.zeros_like(rhs)
    prev = 0.0
    for i in range(rhs.shape[0]):
        prev = (rhs[i] + a * prev) / denom[i]
        u[i] = prev
    return u


def _march_2d(
    a_x: float,
    a_y: float,
    denom: np.ndarray,
    rhs: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Forward substitution in ascending (i, j), vectorized over wavefronts
    i + j = const (entries on a wavefront only depend on earlier ones).

    Masked-out cells are forced to zero as they are passed, so active cells
    downstream of them see the same zero ghost as the evolution stencil.
    """
    nx, ny = rhs.shape
    u = np.zeros_like(rhs)
    for d in range(nx + ny - 1):
        i0 = max(0, d - (ny - 1))
        i1 = min(nx - 1, d)
        ii = np.arange(i0, i1 + 1)
        jj = d - ii
        up_x = np.where(ii > 0, u[np.maximum(ii - 1, 0), jj], 0.0)
        up_y = np.where(jj > 0, u[ii, np.maximum(jj - 1, 0)], 0.0)
        vals = (rhs[ii, jj] + a_x * up_x + a_y * up_y) / denom[ii, jj]
        if mask is not None:
            vals = vals * mask[ii, jj]
        u[ii, jj] = vals
    return u


def _transport_sweep(
    grid: PhaseSpaceGrid,
    sigma: np.ndarray,
    rhs_vals: np.ndarray,
    sgn: float,
) -> np.ndarray:
    """Solve (theta.grad + sgn*sigma) u = rhs per direction, zero ghosts.

    Inflow data must already be folded into rhs.  Raises when the emitting
    reaction makes a diagonal entry nonpositive (cells too coarse).
    """
    out = np.zeros_like(rhs_vals)
    for k in range(grid.n_dirs):
        theta = grid.directions[k]
        coeffs = np.abs(theta) / np.asarray(grid.dx)
        denom = coeffs.sum() + sgn * sigma
        if np.any(denom <= 1e-14):
            raise ConvergenceError(
                "sweep diagonal is nonpositive; refine the grid so that "
                "sum |theta|/dx exceeds the reaction rate"
            )
        rhs_k = rhs_vals[..., k]
        if grid.dim == 1:
            sol = (
                _march_1d(coeffs[0], denom, rhs_k)
                if theta[0] > 0
                else _march_1d(coeffs[0], denom[::-1], rhs_k[::-1])[::-1]
            )
        else:
            sl = tuple(
                slice(None, None, -1 if theta[a] < 0 else None) for a in range(2)
            )
            mask = grid.mask[sl] if grid.mask is not None else None
            sol = _march_2d(coeffs[0], coeffs[1], denom[sl], rhs_k[sl], mask)[sl]
        out[..., k] = sol
    if grid.mask is not None:
        out *= grid.mask[..., None]
    return out


def _inject_inflow(grid: PhaseSpaceGrid, rhs: np.ndarray, trace: BoundaryTrace):
    f_idx, k_idx, lin, coef = _inflow_index_arrays(grid)
    np.add.at(rhs.reshape(-1), lin, coef * trace.values[f_idx, k_idx])


def _residual(
    grid: PhaseSpaceGrid,
    medium: Medium,
    vals: np.ndarray,
    source_vals: np.ndarray,
    inflow: BoundaryTrace | None,
    sgn: float,
) -> float:
    """Norm of the full discrete stationary equation, evaluated from scratch."""
    r = _upwind_derivative_raw(grid, vals)
    if inflow is not None:
        _apply_inflow_correction(grid, r, inflow.values)
    kmat = medium.scattering_matrix if sgn > 0 else medium.scattering_matrix_adjoint
    r += sgn * (medium.mu_a + medium.mu_s)[..., None] * vals
    r -= sgn * medium.mu_s[..., None] * (vals @ kmat.T)
    r -= source_vals / grid.l
    if grid.mask is not None:
        r *= grid.mask[..., None]
    return phase_norm(Field(grid, r))


def _solve(grid, medium, spec: StationarySpec, sgn: float):
    source = spec.source if spec.source is not None else Field.zeros(grid)
    if spec.inflow is not None and spec.inflow.part != INFLOW:
        raise ValueError("stationary boundary data must be an inflow trace")
    if spec.max_sweeps < 1:
        raise ValueError("max_sweeps must be at least 1")
    tol = spec.tol
    if tol is None:
        tol = 1e-10 * (1.0 + phase_norm(source))
    if tol <= 0:
        raise ValueError("tol must be positive")

    sigma = medium.mu_a + medium.mu_s
    kmat = medium.scattering_matrix if sgn > 0 else medium.scattering_matrix_adjoint
    base_rhs = source.values / grid.l
    if spec.inflow is not None:
        base_rhs = base_rhs.copy()
        _inject_inflow(grid, base_rhs, spec.inflow)

    vals = np.zeros(grid.field_shape())
    residual = _residual(grid, medium, vals, source.values, spec.inflow, sgn)
    if residual <= tol:
        return Field(grid, vals), residual, 0
    for sweep in range(1, spec.max_sweeps + 1):
        rhs = base_rhs + sgn * medium.mu_s[..., None] * (vals @ kmat.T)
        vals = _transport_sweep(grid, sigma, rhs, sgn)
        residual = _residual(grid, medium, vals, source.values, spec.inflow, sgn)
        if residual <= tol:
            return Field(grid, vals), residual, sweep
    raise ConvergenceError(
        f"source iteration reached max_sweeps={spec.max_sweeps} with "
        f"residual {residual:.3e} > tol {tol:.3e}"
    )


def solve_stationary_direct(
    grid: PhaseSpaceGrid, medium: Medium, spec: StationarySpec
) -> Field:
    """Stationary absorbing/scattering solve; the returned field satisfies
    the discrete equation with residual at most the requested tolerance."""
    field, _, _ = _solve(grid, medium, spec, sgn=+1.0)
    return field


def solve_stationary_reversed(
    grid: PhaseSpaceGrid, medium: Medium, spec: StationarySpec
) -> Field:
    """Stationary solve with the emitting reaction and transposed kernel.

    Outside the weak-scattering regime the solve still runs but carries no
    convergence guarantee; a warning is emitted in that case.
    """
    if not regime_report(medium, grid).satisfied:
        warnings.warn(
            "weak-scattering condition violated: the reversed stationary "
            "problem has no solvability guarantee",
            RuntimeWarning,
        )
    field, _, _ = _solve(grid, medium, spec, sgn=-1.0)
    return field


def stationary_residual_direct(
    grid, medium, u: Field, source: Field, inflow: BoundaryTrace | None = None
) -> float:
    return _residual(grid, medium, u.values, source.values, inflow, +1.0)


def stationary_residual_reversed(
    grid, medium, psi: Field, source: Field, inflow: BoundaryTrace | None = None
) -> float:
    return _residual(grid, medium, psi.values, source.values, inflow, -1.0)


# ---------------------------------------------------------------------------
# Variational-form utilities (used by the validation suite)


def infsup_witness(grid: PhaseSpaceGrid, medium: Medium, psi: Field) -> Field:
    """Test function l*(theta.grad psi - (mu_a+mu_s) psi) whose pairing with
    the reversed form stays bounded below, witnessing solvability."""
    d = _upwind_derivative_raw(grid, psi.values)
    vals = grid.l * (d - (medium.mu_a + medium.mu_s)[..., None] * psi.values)
    return Field(grid, vals)


def reversed_form(grid: PhaseSpaceGrid, medium: Medium, psi: Field, phi: Field) -> float:
    """Bilinear form of the reversed stationary equation, l <B psi, phi>."""
    r = _upwind_derivative_raw(grid, psi.values)
    r -= (medium.mu_a + medium.mu_s)[..., None] * psi.values
    r += medium.mu_s[..., None] * (psi.values @ medium.scattering_matrix_adjoint.T)
    return grid.l * phase_inner(Field(grid, r), phi)


def direct_form(grid: PhaseSpaceGrid, medium: Medium, u: Field, v: Field) -> float:
    r = _upwind_derivative_raw(grid, u.values)
    r += (medium.mu_a + medium.mu_s)[..., None] * u.values
    r -= medium.mu_s[..., None] * (u.values @ medium.scattering_matrix.T)
    return grid.l * phase_inner(Field(grid, r), v)
