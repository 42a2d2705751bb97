"""Phase-space discretization: Cartesian cells times a symmetric direction set.

The spatial domain is a convex region (interval, rectangle, or disk; the
disk is realized as a masked rectangle with a staircase boundary) covered
by uniform cells.  Directions live on the unit sphere of the ambient
dimension: {+1, -1} for the interval, a midpoint rule on the unit circle
for planar domains.  The angular rule is offset by pi/n_theta so that no
direction is axis-aligned, and n_theta must be even so the map
theta -> -theta is an exact index permutation.

A field assigns one value per (cell, direction).  Boundary traces live on
(boundary face, direction) pairs, split by the sign of nu.theta into
inflow and outflow parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Face/direction pairs with |nu.theta| below this carry no flux.
FLUX_TOL = 1e-12

INFLOW = "inflow"
OUTFLOW = "outflow"
FULL = "full"


@dataclass(frozen=True)
class Rod1D:
    length: float


@dataclass(frozen=True)
class Box2D:
    width: float
    height: float


@dataclass(frozen=True)
class Disk2D:
    radius: float


Geometry = Rod1D | Box2D | Disk2D


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Boundary faces of the cell grid with per-direction flux bookkeeping.

    Each face is the outer side of one boundary-adjacent cell.  ``side_id``
    and ``side_pos`` give a canonical ordering along each geometric side,
    used when traces are restricted between refinement levels.
    """

    cell_flat: np.ndarray      # (nf,) flat index of the adjacent cell
    axis: np.ndarray           # (nf,) axis the face is orthogonal to
    side: np.ndarray           # (nf,) +1 / -1: outward normal direction
    measure: np.ndarray        # (nf,) face measure
    normal: np.ndarray         # (nf, dim) outward unit normal
    side_id: np.ndarray        # (nf,) ordinal of the geometric side
    side_pos: np.ndarray       # (nf,) position along that side
    nu_dot: np.ndarray         # (nf, ndir) normal . direction
    inflow_mask: np.ndarray    # (nf, ndir) nu.theta < -FLUX_TOL
    outflow_mask: np.ndarray   # (nf, ndir) nu.theta > FLUX_TOL

    @property
    def n_faces(self) -> int:
        return self.cell_flat.shape[0]


@dataclass(frozen=True, eq=False)
class PhaseSpaceGrid:
    geometry: Geometry
    n_cells: tuple[int, ...]
    dx: tuple[float, ...]
    directions: np.ndarray     # (ndir, dim) unit vectors
    weights: np.ndarray        # (ndir,) quadrature weights, sum = |S|
    neg_index: np.ndarray      # (ndir,) permutation realizing theta -> -theta
    mask: np.ndarray | None    # (spatial) bool, None when every cell is active
    faces: FaceSet
    l: float                   # diameter of the domain
    c: float                   # particle speed

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.n_cells

    @property
    def n_dirs(self) -> int:
        return self.directions.shape[0]

    @property
    def n_cells_total(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def T(self) -> float:
        """Domain crossing time diam/c."""
        return self.l / self.c

    @property
    def sphere_measure(self) -> float:
        return float(np.sum(self.weights))

    def axes(self) -> list[np.ndarray]:
        """Cell-center coordinates along each axis."""
        return [
            (np.arange(n) + 0.5) * d for n, d in zip(self.n_cells, self.dx)
        ]

    def cell_centers(self) -> list[np.ndarray]:
        """Cell-center coordinate arrays, broadcast to the spatial shape."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def active(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.spatial_shape, dtype=bool)
        return self.mask

    def field_shape(self) -> tuple[int, ...]:
        return self.spatial_shape + (self.n_dirs,)


def _circle_quadrature(n_theta: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    angles = (2.0 * np.arange(n_theta) + 1.0) * np.pi / n_theta
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # the second half is the exact negation of the first, so the flip
    # theta -> -theta is bitwise (cos(phi + pi) won't round to -cos(phi))
    half = n_theta // 2
    directions[half:] = -directions[:half]
    weights = np.full(n_theta, 2.0 * np.pi / n_theta)
    neg = (np.arange(n_theta) + half) % n_theta
    return directions, weights, neg


def _build_faces(
    shape: tuple[int, ...],
    dx: tuple[float, ...],
    mask: np.ndarray | None,
    directions: np.ndarray,
) -> FaceSet:
    dim = len(shape)
    active = np.ones(shape, dtype=bool) if mask is None else mask
    cells, axes_, sides, measures, side_ids, side_pos = [], [], [], [], [], []

    side_counter = 0
    for axis in range(dim):
        for side in (-1, +1):
            face_measure = 1.0 if dim == 1 else dx[1 - axis]
            pos_in_side = 0
            for idx in np.ndindex(shape):
                if not active[idx]:
                    continue
                nb = list(idx)
                nb[axis] += side
                outside = not (0 <= nb[axis] < shape[axis]) or not active[tuple(nb)]
                if outside:
                    cells.append(np.ravel_multi_index(idx, shape))
                    axes_.append(axis)
                    sides.append(side)
                    measures.append(face_measure)
                    side_ids.append(side_counter)
                    side_pos.append(pos_in_side)
                    pos_in_side += 1
            side_counter += 1

    cell_flat = np.asarray(cells, dtype=np.intp)
    axis_arr = np.asarray(axes_, dtype=np.intp)
    side_arr = np.asarray(sides, dtype=np.int8)
    measure = np.asarray(measures, dtype=float)
    normal = np.zeros((len(cells), dim))
    normal[np.arange(len(cells)), axis_arr] = side_arr
    nu_dot = normal @ directions.T
    return FaceSet(
        cell_flat=cell_flat,
        axis=axis_arr,
        side=side_arr,
        measure=measure,
        normal=normal,
        side_id=np.asarray(side_ids, dtype=np.intp),
        side_pos=np.asarray(side_pos, dtype=np.intp),
        nu_dot=nu_dot,
        inflow_mask=nu_dot < -FLUX_TOL,
        outflow_mask=nu_dot > FLUX_TOL,
    )


def build_grid(
    geometry: Geometry,
    n_cells: int | tuple[int, ...],
    n_theta: int | None = None,
    c: float = 1.0,
) -> PhaseSpaceGrid:
    """Build the phase-space grid for a geometry.

    ``n_cells`` is the cell count per spatial axis (a single int is applied
    to every axis).  ``n_theta`` is the number of circle directions for 2D
    geometries; it must be even so the direction set is symmetric under
    theta -> -theta.  Raises ValueError on non-positive dimensions, fewer
    than 2 cells per axis, or an odd/too-small direction count.
    """
    if c <= 0:
        raise ValueError("particle speed c must be positive")

    if isinstance(geometry, Rod1D):
        if geometry.length <= 0:
            raise ValueError("rod length must be positive")
        if n_theta not in (None, 2):
            raise ValueError("a 1D rod has exactly the two directions +1/-1")
        nx = int(n_cells) if np.isscalar(n_cells) else int(n_cells[0])
        if nx < 2:
            raise ValueError("need at least 2 cells per axis")
        shape: tuple[int, ...] = (nx,)
        dx: tuple[float, ...] = (geometry.length / nx,)
        directions = np.array([[1.0], [-1.0]])
        weights = np.array([1.0, 1.0])
        neg = np.array([1, 0], dtype=np.intp)
        mask = None
        l = geometry.length
    else:
        if n_theta is None:
            raise ValueError("n_theta is required for 2D geometries")
        if n_theta < 2 or n_theta % 2 != 0:
            raise ValueError("n_theta must be even and at least 2")
        if isinstance(geometry, Box2D):
            if geometry.width <= 0 or geometry.height <= 0:
                raise ValueError("box sides must be positive")
            extent = (geometry.width, geometry.height)
            l = float(np.hypot(*extent))
            mask = None
        elif isinstance(geometry, Disk2D):
            if geometry.radius <= 0:
                raise ValueError("disk radius must be positive")
            extent = (2.0 * geometry.radius, 2.0 * geometry.radius)
            l = 2.0 * geometry.radius
            mask = "disk"  # placeholder, built below
        else:
            raise TypeError(f"unknown geometry {geometry!r}")
        if np.isscalar(n_cells):
            shape = (int(n_cells), int(n_cells))
        else:
            shape = (int(n_cells[0]), int(n_cells[1]))
        if min(shape) < 2:
            raise ValueError("need at least 2 cells per axis")
        dx = (extent[0] / shape[0], extent[1] / shape[1])
        directions, weights, neg = _circle_quadrature(int(n_theta))
        if isinstance(geometry, Disk2D):
            xs = (np.arange(shape[0]) + 0.5) * dx[0]
            ys = (np.arange(shape[1]) + 0.5) * dx[1]
            xx, yy = np.meshgrid(xs, ys, indexing="ij")
            r = geometry.radius
            mask = (xx - r) ** 2 + (yy - r) ** 2 <= r**2
            if not mask.any():
                raise ValueError("disk mask is empty; refine the grid")

    faces = _build_faces(shape, dx, mask, directions)
    return PhaseSpaceGrid(
        geometry=geometry,
        n_cells=shape,
        dx=dx,
        directions=directions,
        weights=weights,
        neg_index=neg,
        mask=mask,
        faces=faces,
        l=l,
        c=c,
    )


def refine_grid(grid: PhaseSpaceGrid, factor: int = 2) -> PhaseSpaceGrid:
    """Same geometry and direction set on a ``factor``-finer cell grid."""
    n_theta = None if grid.dim == 1 else grid.n_dirs
    cells = tuple(n * factor for n in grid.n_cells)
    return build_grid(grid.geometry, cells, n_theta=n_theta, c=grid.c)


# ---------------------------------------------------------------------------
# Fields


@dataclass(eq=False)
class Field:
    """One real value per (cell, direction); shape = spatial shape + (ndir,)."""

    grid: PhaseSpaceGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.field_shape():
            raise ValueError(
                f"field shape {self.values.shape} does not match grid "
                f"{self.grid.field_shape()}"
            )
        if self.grid.mask is not None:
            self.values = self.values * self.grid.mask[..., None]

    @classmethod
    def zeros(cls, grid: PhaseSpaceGrid) -> "Field":
        return cls(grid, np.zeros(grid.field_shape()))

    @classmethod
    def from_function(cls, grid: PhaseSpaceGrid, fn: Callable) -> "Field":
        """Evaluate ``fn(coords, direction)`` per direction.

        ``coords`` is the list of broadcast cell-center coordinate arrays and
        ``direction`` one unit vector; fn returns an array of spatial shape.
        """
        coords = grid.cell_centers()
        vals = np.zeros(grid.field_shape())
        for k in range(grid.n_dirs):
            vals[..., k] = fn(coords, grid.directions[k])
        return cls(grid, vals)

    @classmethod
    def random(cls, grid: PhaseSpaceGrid, rng: np.random.Generator) -> "Field":
        return cls(grid, rng.standard_normal(grid.field_shape()))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def _check(self, other: "Field"):
        if other.grid is not self.grid and other.grid.field_shape() != self.grid.field_shape():
            raise ValueError("fields live on different grids")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "Field":
        return Field(self.grid, self.values * a)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


def part_mask(grid: PhaseSpaceGrid, part: str) -> np.ndarray:
    if part == INFLOW:
        return grid.faces.inflow_mask
    if part == OUTFLOW:
        return grid.faces.outflow_mask
    if part == FULL:
        return grid.faces.inflow_mask | grid.faces.outflow_mask
    raise ValueError(f"unknown trace part {part!r}")


@dataclass(eq=False)
class BoundaryTrace:
    """Values on (face, direction) pairs, single time or a sampled series.

    Entries are stored only on the pairs selected by ``part``; the rest are
    kept at zero.  Series traces carry the sample spacing ``dt``; sample n
    lives at time n*dt.
    """

    grid: PhaseSpaceGrid
    values: np.ndarray          # (nf, ndir) or (nf, ndir, nt)
    part: str
    dt: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        nf, nd = self.grid.faces.n_faces, self.grid.n_dirs
        if self.values.shape[:2] != (nf, nd) or self.values.ndim not in (2, 3):
            raise ValueError("trace shape does not match the grid boundary")
        m = part_mask(self.grid, self.part)
        self.values = self.values * (m[..., None] if self.values.ndim == 3 else m)

    @property
    def is_series(self) -> bool:
        return self.values.ndim == 3

    @property
    def n_times(self) -> int:
        return self.values.shape[2] if self.is_series else 1

    @classmethod
    def zeros(
        cls,
        grid: PhaseSpaceGrid,
        part: str,
        n_times: int | None = None,
        dt: float | None = None,
    ) -> "BoundaryTrace":
        nf, nd = grid.faces.n_faces, grid.n_dirs
        shape = (nf, nd) if n_times is None else (nf, nd, n_times)
        return cls(grid, np.zeros(shape), part, dt)

    def copy(self) -> "BoundaryTrace":
        return BoundaryTrace(self.grid, self.values.copy(), self.part, self.dt)

    def sample(self, n: int) -> "BoundaryTrace":
        if not self.is_series:
            raise ValueError("not a series trace")
        return BoundaryTrace(self.grid, self.values[:, :, n], self.part)


# ---------------------------------------------------------------------------
# Inner products and norms


def _vol_weights(grid: PhaseSpaceGrid) -> float:
    return grid.cell_volume


def phase_inner(f: Field, g: Field) -> float:
    """L2 inner product over cells x directions (cell volume and direction
    weights included).

    The per-direction partial sums reduce one contiguous slice each and the
    direction reduction uses exact summation, so the value is invariant
    under direction permutations (the angular reflection preserves norms
    bitwise, not just to roundoff).
    """
    f._check(g)
    prod = f.values * g.values
    partials = [
        float(np.sum(prod[..., k])) * f.grid.weights[k]
        for k in range(f.grid.n_dirs)
    ]
    return math.fsum(partials) * f.grid.cell_volume


def phase_norm(f: Field) -> float:
    return float(np.sqrt(max(phase_inner(f, f), 0.0)))


def _trace_weight(grid: PhaseSpaceGrid) -> np.ndarray:
    """|nu.theta|-weighted quadrature weight per (face, direction) pair,
    including the diameter factor of the boundary inner product."""
    fs = grid.faces
    return grid.l * np.abs(fs.nu_dot) * fs.measure[:, None] * grid.weights[None, :]


def trace_inner(h1: BoundaryTrace, h2: BoundaryTrace) -> float:
    w = _trace_weight(h1.grid)
    if h1.is_series or h2.is_series:
        raise ValueError("single-time traces expected; use trace_series_inner")
    # exact reduction: invariant under the time/direction reflections
    return math.fsum((w * h1.values * h2.values).ravel())


def trace_norm(h: BoundaryTrace) -> float:
    if h.is_series:
        raise ValueError("single-time traces expected; use trace_series_norm")
    return float(np.sqrt(max(trace_inner(h, h), 0.0)))


def trace_series_inner(h1: BoundaryTrace, h2: BoundaryTrace) -> float:
    """Time-integrated boundary inner product, dt-weighted over all samples."""
    if not (h1.is_series and h2.is_series):
        raise ValueError("series traces expected")
    if h1.n_times != h2.n_times:
        raise ValueError("sample counts differ")
    if h1.dt is None:
        raise ValueError("series trace is missing dt")
    w = _trace_weight(h1.grid)
    # exact reduction: invariant under the time/direction reflections
    return h1.dt * math.fsum((w[:, :, None] * h1.values * h2.values).ravel())


def trace_series_norm(h: BoundaryTrace) -> float:
    return float(np.sqrt(max(trace_series_inner(h, h), 0.0)))


# ---------------------------------------------------------------------------
# Directional derivative (first-order upwind) and traces


def _set_plane(arr: np.ndarray, axis: int, index: int, value) -> None:
    sl = [slice(None)] * arr.ndim
    sl[axis] = index
    arr[tuple(sl)] = value


def _get_plane(arr: np.ndarray, axis: int, index: int) -> np.ndarray:
    sl = [slice(None)] * arr.ndim
    sl[axis] = index
    return arr[tuple(sl)]


def _upwind_derivative_raw(
    grid: PhaseSpaceGrid, vals: np.ndarray, boundary: str = "zero"
) -> np.ndarray:
    """theta.grad by first-order upwinding with zero or copied edge ghosts.

    ``boundary="zero"`` imposes vanishing ghost values outside the domain
    (the homogeneous-inflow closure used by the solvers); ``"copy"``
    extrapolates the edge value, so constants differentiate to zero (the
    closure used by the graph norm and the Green-identity check).
    """
    out = np.zeros_like(vals)
    for k in range(grid.n_dirs):
        fk = vals[..., k]
        acc = out[..., k]
        for a in range(grid.dim):
            th = grid.directions[k, a]
            if abs(th) <= FLUX_TOL:
                continue
            h = grid.dx[a]
            if th > 0:
                shifted = np.roll(fk, 1, axis=a)
                ghost = _get_plane(fk, a, 0) if boundary == "copy" else 0.0
                _set_plane(shifted, a, 0, ghost)
                acc += (th / h) * (fk - shifted)
            else:
                shifted = np.roll(fk, -1, axis=a)
                ghost = _get_plane(fk, a, -1) if boundary == "copy" else 0.0
                _set_plane(shifted, a, -1, ghost)
                acc += (-th / h) * (fk - shifted)
    if grid.mask is not None:
        out *= grid.mask[..., None]
    return out


def _inflow_index_arrays(grid: PhaseSpaceGrid):
    """Flattened (cell, dir) indices and coefficients of the inflow pairs."""
    fs = grid.faces
    f_idx, k_idx = np.nonzero(fs.inflow_mask)
    coef = np.abs(fs.nu_dot[f_idx, k_idx]) / np.asarray(grid.dx)[fs.axis[f_idx]]
    lin = fs.cell_flat[f_idx] * grid.n_dirs + k_idx
    return f_idx, k_idx, lin, coef


def _apply_inflow_correction(
    grid: PhaseSpaceGrid,
    deriv: np.ndarray,
    trace_vals: np.ndarray,
    cache: tuple | None = None,
) -> None:
    """Correct a zero-ghost upwind derivative for prescribed inflow data."""
    f_idx, k_idx, lin, coef = cache if cache is not None else _inflow_index_arrays(grid)
    np.subtract.at(deriv.reshape(-1), lin, coef * trace_vals[f_idx, k_idx])


def directional_derivative(
    f: Field,
    inflow: BoundaryTrace | None = None,
    boundary: str = "zero",
) -> Field:
    """Upwind theta.grad of a field; optional inflow trace supplies the
    upwind ghost values at inflow faces."""
    out = _upwind_derivative_raw(f.grid, f.values, boundary=boundary)
    if inflow is not None:
        if inflow.is_series:
            raise ValueError("single-time inflow trace expected")
        if inflow.part != INFLOW:
            raise ValueError("ghost data must be an inflow trace")
        _apply_inflow_correction(f.grid, out, inflow.values)
    return Field(f.grid, out)


def _sample_boundary_raw(grid: PhaseSpaceGrid, vals: np.ndarray) -> np.ndarray:
    """Boundary-adjacent cell values on every (face, direction) pair."""
    flat = vals.reshape(-1, grid.n_dirs)
    return flat[grid.faces.cell_flat, :]


def restrict_trace(f: Field, part: str) -> BoundaryTrace:
    """Discrete trace: sample boundary-adjacent cells onto the chosen part."""
    return BoundaryTrace(f.grid, _sample_boundary_raw(f.grid, f.values), part)


def graph_norm(f: Field) -> float:
    """Norm combining the field, its scaled directional derivative, and its
    boundary trace: sqrt(l^2 |Df|^2 + |f|^2 + |trace f|^2)."""
    df = directional_derivative(f, boundary="copy")
    tr = restrict_trace(f, FULL)
    return float(
        np.sqrt(
            max(
                f.grid.l**2 * phase_inner(df, df)
                + phase_inner(f, f)
                + trace_inner(tr, tr),
                0.0,
            )
        )
    )


def graph_inner(f: Field, g: Field) -> float:
    df = directional_derivative(f, boundary="copy")
    dg = directional_derivative(g, boundary="copy")
    return (
        f.grid.l**2 * phase_inner(df, dg)
        + phase_inner(f, g)
        + trace_inner(restrict_trace(f, FULL), restrict_trace(g, FULL))
    )


def boundary_flux_integral(u: Field, v: Field) -> float:
    """Signed boundary quadrature of (theta.nu) u v over all face pairs."""
    fs = u.grid.faces
    us = _sample_boundary_raw(u.grid, u.values)
    vs = _sample_boundary_raw(v.grid, v.values)
    w = fs.nu_dot * fs.measure[:, None] * u.grid.weights[None, :]
    return float(np.sum(w * us * vs))


def green_identity_residual(u: Field, v: Field) -> float:
    """| <Du, v> + <Dv, u> - boundary flux | for the discrete operators.

    Vanishes to first order under refinement for smooth fields; used by the
    validation suite only.
    """
    du = directional_derivative(u, boundary="copy")
    dv = directional_derivative(v, boundary="copy")
    vol = phase_inner(du, v) + phase_inner(dv, u)
    return abs(vol - boundary_flux_integral(u, v))


# ---------------------------------------------------------------------------
# Restriction between refinement levels (synthetic-data hygiene)


def coarsen_field(fine_field: Field, coarse: PhaseSpaceGrid) -> Field:
    """Block-average a fine-grid field onto a coarser grid of the same
    geometry and direction set (cell counts must divide evenly)."""
    fine = fine_field.grid
    if fine.n_dirs != coarse.n_dirs:
        raise ValueError("direction sets differ")
    factors = []
    for nf_, nc_ in zip(fine.n_cells, coarse.n_cells):
        if nf_ % nc_ != 0:
            raise ValueError("fine cells do not tile the coarse cells")
        factors.append(nf_ // nc_)
    vals = fine_field.values
    if fine.dim == 1:
        r = factors[0]
        out = vals.reshape(coarse.n_cells[0], r, fine.n_dirs).mean(axis=1)
    else:
        rx, ry = factors
        out = vals.reshape(
            coarse.n_cells[0], rx, coarse.n_cells[1], ry, fine.n_dirs
        ).mean(axis=(1, 3))
    return Field(coarse, out)


def restrict_trace_series(
    fine_trace: BoundaryTrace, coarse: PhaseSpaceGrid, factor: int
) -> BoundaryTrace:
    """Restrict a fine-grid sampled trace onto a coarser grid: average the
    child faces of each coarse face and stride the samples in time.

    Supported for rod and box boundaries, where each geometric side refines
    into ``factor`` child faces per coarse face in the same ordering.
    """
    fine = fine_trace.grid
    if fine.mask is not None or coarse.mask is not None:
        raise ValueError("trace restriction is not defined for masked grids")
    if fine.n_dirs != coarse.n_dirs:
        raise ValueError("direction sets differ")
    if (fine_trace.n_times - 1) % factor != 0:
        raise ValueError("sample count does not stride evenly")
    cfs, ffs = coarse.faces, fine.faces
    spatial_factor = 1 if coarse.dim == 1 else factor
    nf_c = cfs.n_faces
    vals_t = fine_trace.values[:, :, ::factor]
    out = np.zeros((nf_c, coarse.n_dirs, vals_t.shape[2]))
    # canonical per-side ordering: coarse position p owns fine positions
    # [p*spatial_factor, (p+1)*spatial_factor)
    fine_lookup = {
        (int(s), int(p)): i
        for i, (s, p) in enumerate(zip(ffs.side_id, ffs.side_pos))
    }
    for i in range(nf_c):
        s, p = int(cfs.side_id[i]), int(cfs.side_pos[i])
        children = [
            fine_lookup[(s, p * spatial_factor + q)] for q in range(spatial_factor)
        ]
        out[i] = vals_t[children].mean(axis=0)
    dt = None if fine_trace.dt is None else fine_trace.dt * factor
    return BoundaryTrace(coarse, out, fine_trace.part, dt)
