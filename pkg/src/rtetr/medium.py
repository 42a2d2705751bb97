"""Optical coefficients, the scattering operator, and regime diagnostics.

The scattering kernel is stored as a quadrature table over direction
pairs.  Construction enforces the two structural identities the solvers
rely on: each row integrates to one against the direction weights
(conservation), and the table is invariant under swapping the pair and
negating both directions (reciprocity).  The reversed-evolution and
duality machinery breaks without them, so they are enforced exactly at
build time rather than assumed of the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .grid import Field, PhaseSpaceGrid, phase_inner, phase_norm

ISOTROPIC = "isotropic"
HENYEY_GREENSTEIN = "henyey-greenstein"
TABLE = "table"


@dataclass(eq=False)
class Kernel:
    """Scattering kernel table kappa[k, k'] over direction pairs."""

    kind: str
    table: np.ndarray                  # (ndir, ndir)
    params: dict = dc_field(default_factory=dict)

    def forward_matrix(self, grid: PhaseSpaceGrid) -> np.ndarray:
        """Matrix F with (K f)_k = sum_k' F[k, k'] f_k'."""
        return self.table * grid.weights[None, :]

    def adjoint_matrix(self, grid: PhaseSpaceGrid) -> np.ndarray:
        """Matrix for the weighted-transpose kernel application."""
        return self.table.T * grid.weights[None, :]


def _enforce_kernel_identities(
    table: np.ndarray, grid: PhaseSpaceGrid, max_rounds: int = 200
) -> np.ndarray:
    """Renormalize rows, then re-symmetrize for reciprocity, iterating until
    both hold; ends on a symmetrization pass so reciprocity is exact."""
    if np.any(table < 0):
        raise ValueError("scattering kernel must be nonnegative")
    t = np.array(table, dtype=float)
    neg = grid.neg_index
    w = grid.weights
    for _ in range(max_rounds):
        rows = t @ w
        if np.any(rows <= 0):
            raise ValueError("scattering kernel has an empty row")
        t = t / rows[:, None]
        t = 0.5 * (t + t[np.ix_(neg, neg)].T)
        if np.max(np.abs(t @ w - 1.0)) <= 5e-14:
            break
    return t


def isotropic_kernel(grid: PhaseSpaceGrid) -> Kernel:
    n = grid.n_dirs
    table = np.full((n, n), 1.0 / grid.sphere_measure)
    return Kernel(ISOTROPIC, _enforce_kernel_identities(table, grid))


def henyey_greenstein_kernel(grid: PhaseSpaceGrid, g: float) -> Kernel:
    """Henyey-Greenstein phase function on the direction set.

    Uses the planar normalization (1-g^2)/(2 pi (1+g^2-2 g cos phi)); on the
    rod the analogue splits weight (1+g)/2 forward, (1-g)/2 backward.  Rows
    are renormalized to the quadrature afterwards.
    """
    if not -1.0 < g < 1.0:
        raise ValueError("anisotropy g must lie in (-1, 1)")
    cosang = np.clip(grid.directions @ grid.directions.T, -1.0, 1.0)
    if grid.dim == 1:
        table = np.where(cosang > 0, (1.0 + g) / 2.0, (1.0 - g) / 2.0)
    else:
        table = (1.0 - g * g) / (2.0 * np.pi * (1.0 + g * g - 2.0 * g * cosang))
    return Kernel(
        HENYEY_GREENSTEIN, _enforce_kernel_identities(table, grid), {"g": g}
    )


def table_kernel(grid: PhaseSpaceGrid, raw: np.ndarray) -> Kernel:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (grid.n_dirs, grid.n_dirs):
        raise ValueError("kernel table shape must be (ndir, ndir)")
    return Kernel(TABLE, _enforce_kernel_identities(raw, grid))


@dataclass(eq=False)
class Medium:
    """Piecewise-constant absorption/scattering coefficients plus a kernel."""

    grid: PhaseSpaceGrid
    mu_a: np.ndarray           # (spatial)
    mu_s: np.ndarray           # (spatial)
    kernel: Kernel
    mu_a_bar: float = 0.0
    mu_s_bar: float = 0.0

    def __post_init__(self):
        self.mu_a = np.broadcast_to(
            np.asarray(self.mu_a, dtype=float), self.grid.spatial_shape
        ).copy()
        self.mu_s = np.broadcast_to(
            np.asarray(self.mu_s, dtype=float), self.grid.spatial_shape
        ).copy()
        if np.any(self.mu_a < 0) or np.any(self.mu_s < 0):
            raise ValueError("coefficients must be nonnegative")
        if self.grid.mask is not None:
            self.mu_a = self.mu_a * self.grid.mask
            self.mu_s = self.mu_s * self.grid.mask
        act = self.grid.active()
        self.mu_a_bar = float(self.mu_a[act].max()) if act.any() else 0.0
        self.mu_s_bar = float(self.mu_s[act].max()) if act.any() else 0.0

    @property
    def scattering_matrix(self) -> np.ndarray:
        return self.kernel.forward_matrix(self.grid)

    @property
    def scattering_matrix_adjoint(self) -> np.ndarray:
        return self.kernel.adjoint_matrix(self.grid)


def build_medium(
    grid: PhaseSpaceGrid,
    mu_a: float | np.ndarray | Callable = 0.0,
    mu_s: float | np.ndarray | Callable = 0.0,
    kernel: Kernel | None = None,
) -> Medium:
    """Assemble a medium; callables are evaluated on cell-center coordinates."""

    def _coef(spec):
        if callable(spec):
            return spec(*grid.cell_centers())
        return spec

    return Medium(
        grid,
        _coef(mu_a),
        _coef(mu_s),
        kernel if kernel is not None else isotropic_kernel(grid),
    )


def apply_scattering(medium: Medium, f: Field) -> Field:
    """Angular averaging of the field against the kernel rows."""
    out = f.values @ medium.scattering_matrix.T
    return Field(f.grid, out)


def apply_scattering_adjoint(medium: Medium, f: Field) -> Field:
    """Weighted-transpose kernel application (exact discrete adjoint)."""
    out = f.values @ medium.scattering_matrix_adjoint.T
    return Field(f.grid, out)


def validate_kernel(medium: Medium) -> list[str]:
    """Report violations of nonnegativity, conservation, reciprocity."""
    grid = medium.grid
    t = medium.kernel.table
    neg = grid.neg_index
    violations = []
    if np.any(t < 0):
        violations.append(
            f"kernel nonnegativity: min entry {t.min():.3e} < 0"
        )
    rows = t @ grid.weights
    dev = float(np.max(np.abs(rows - 1.0)))
    if dev > 1e-10:
        violations.append(f"kernel conservation: max row deviation {dev:.3e}")
    recip = float(np.max(np.abs(t - t[np.ix_(neg, neg)].T)))
    if recip != 0.0:
        violations.append(f"kernel reciprocity: max asymmetry {recip:.3e}")
    return violations


# ---------------------------------------------------------------------------
# Weak-scattering regime diagnostics


@dataclass(eq=False)
class RegimeReport:
    """Scalar diagnostics of the weak-scattering smallness condition.

    ``lhs`` is l*mu_s_bar*exp(l*(mu_a_bar+mu_s_bar)); the condition holds
    when it is below 1/e.  ``decay_bound(t)`` bounds the reversed-evolution
    operator norm (and hence also the direct one).
    """

    lhs: float
    satisfied: bool
    omega_star: float
    E_star: float
    alpha0: float
    beta0: float
    alpha: float
    beta: float
    decay_bound: Callable[[float], float]


def regime_report(medium: Medium, grid: PhaseSpaceGrid) -> RegimeReport:
    l, c, T = grid.l, grid.c, grid.T
    mu_a, mu_s = medium.mu_a_bar, medium.mu_s_bar
    total = l * (mu_a + mu_s)
    base = math.exp(total)
    lhs = l * mu_s * base
    satisfied = lhs < math.exp(-1.0)

    if mu_s == 0.0:
        omega_star = -math.inf
        e_star = -math.inf
    else:
        omega_star = math.log(T * base * c * mu_s) / T
        e_star = math.log(base * mu_s * l * math.e) / T

    alpha0 = 1.0 + math.sqrt(2.0) + total
    beta0 = math.sqrt(2.0) + (1.0 + total) * base
    scale = (math.sqrt(2.0) * math.e - 1.0) / (math.sqrt(2.0) * math.e)
    alpha = scale / alpha0
    beta = scale / beta0

    def decay_bound(t: float) -> float:
        if t < 0:
            raise ValueError("time must be nonnegative")
        if t < T:
            # pre-crossing bound at zero shift: N0 * exp(N0 c mu_s t)
            return base * math.exp(base * c * mu_s * t)
        if mu_s == 0.0:
            return 0.0 if t > T else math.e * base
        return math.e * base * (math.e * base * l * mu_s) ** (t / T - 1.0)

    return RegimeReport(
        lhs=lhs,
        satisfied=satisfied,
        omega_star=omega_star,
        E_star=e_star,
        alpha0=alpha0,
        beta0=beta0,
        alpha=alpha,
        beta=beta,
        decay_bound=decay_bound,
    )


def operator_norm_estimate(
    apply: Callable[[Field], Field],
    grid: PhaseSpaceGrid,
    iters: int = 30,
    seed: int = 0,
    apply_adjoint: Callable[[Field], Field] | None = None,
) -> float:
    """Largest singular value of a linear field map by power iteration.

    Iterates on apply_adjoint . apply; when no adjoint is given the map is
    taken to be self-adjoint.  Deterministic under a fixed seed.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    x = Field.random(grid, rng)
    nx = phase_norm(x)
    if nx == 0.0:
        return 0.0
    x = x * (1.0 / nx)
    sigma = 0.0
    for _ in range(iters):
        y = apply(x)
        ny = phase_norm(y)
        if ny == 0.0:
            return 0.0
        if apply_adjoint is None:
            sigma = abs(phase_inner(x, y))
            x = y * (1.0 / ny)
        else:
            sigma = ny
            z = apply_adjoint(y)
            nz = phase_norm(z)
            if nz == 0.0:
                return 0.0
            x = z * (1.0 / nz)
    return float(sigma)
