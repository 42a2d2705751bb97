"""Recovery of an initial condition from outflow boundary recordings.

The measurement runs the direct evolution and keeps the outflow trace.
The time-reversal step reflects that recording in time and direction,
feeds it to the reversed evolution as inflow data, and reads off the final
state (direction-flipped) as an approximate initial condition.  Under weak
scattering one reversal pass inverts the measurement up to a contraction,
so iterating it (a Neumann series) converges geometrically; outside that
regime the same fixed-point equation is solved by a restarted Krylov
iteration.

Sample-timing convention: the direct stepper consumes begin-of-step data,
so the reversed run inside the reversal operator consumes end-of-step
samples, which is the exact mirror image under time reflection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import (
    Field,
    BoundaryTrace,
    PhaseSpaceGrid,
    FULL,
    INFLOW,
    OUTFLOW,
    _inflow_index_arrays,
    _sample_boundary_raw,
    graph_norm,
    phase_norm,
    trace_series_norm,
)
from .medium import Medium, operator_norm_estimate, regime_report
from .evolution import (
    EvolutionSpec,
    Trajectory,
    cfl_timestep,
    evolve_direct,
    evolve_reversed,
    propagate,
    resolve_steps,
    step_adjoint_raw,
)
from .stationary import StationarySpec, solve_stationary_reversed

LIFT_ZERO = "zero"
LIFT_STATIONARY = "stationary"


class DivergenceError(RuntimeError):
    pass


def resolve_dt(
    grid: PhaseSpaceGrid, tau: float, dt: float | None = None, cfl_safety: float = 0.9
) -> float:
    """Pick a step that divides tau exactly and respects the CFL bound."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    target = dt if dt is not None else cfl_timestep(grid, cfl_safety)
    n = max(1, int(np.ceil(tau / target - 1e-12)))
    return tau / n


@dataclass(eq=False)
class Measurement:
    """Outflow trace of the direct evolution on [0, tau], sampled every step."""

    grid: PhaseSpaceGrid
    medium: Medium
    trace: BoundaryTrace
    tau: float
    dt: float

    @property
    def n_steps(self) -> int:
        return self.trace.n_times - 1


def measure(
    grid: PhaseSpaceGrid,
    medium: Medium,
    u0: Field,
    tau: float,
    dt: float | None = None,
) -> Measurement:
    """Outflow boundary recording of the freely evolving field; linear in u0."""
    dt = resolve_dt(grid, tau, dt)
    spec = EvolutionSpec(tau=tau, dt=dt, record_trace=True)
    traj = evolve_direct(grid, medium, u0, spec)
    return Measurement(grid=grid, medium=medium, trace=traj.outflow, tau=tau, dt=dt)


# ---------------------------------------------------------------------------
# Reflections


def reflect_angle(f: Field) -> Field:
    """Direction flip theta -> -theta; an exact index permutation."""
    return Field(f.grid, f.values[..., f.grid.neg_index])


_PART_FLIP = {INFLOW: OUTFLOW, OUTFLOW: INFLOW, FULL: FULL}


def reflect_time(obj, tau: float | None = None):
    """Reverse time and flip directions on a sampled trace or trajectory.

    Maps outflow recordings to inflow data and back; an involution that
    preserves the discrete boundary norms exactly.
    """
    if isinstance(obj, BoundaryTrace):
        if not obj.is_series:
            raise ValueError("time reflection needs a sampled series")
        if tau is not None and obj.dt is not None:
            span = (obj.n_times - 1) * obj.dt
            if abs(span - tau) > 1e-9 * max(tau, 1.0):
                raise ValueError(f"trace spans {span}, not tau={tau}")
        vals = obj.values[:, obj.grid.neg_index, ::-1]
        return BoundaryTrace(obj.grid, vals, _PART_FLIP[obj.part], obj.dt)
    if isinstance(obj, Trajectory):
        if not obj.snapshots or obj.times[0] != 0.0:
            raise ValueError(
                "trajectory reflection needs snapshots recorded from time "
                "zero (run with record_every > 0)"
            )
        snaps = [reflect_angle(s) for s in reversed(obj.snapshots)]
        horizon = tau if tau is not None else float(obj.times.max())
        times = horizon - obj.times[::-1]
        outflow = reflect_time(obj.outflow, tau) if obj.outflow is not None else None
        # the reflected run ends at the original initial frame
        return Trajectory(
            times=times,
            snapshots=snaps,
            final=snaps[-1].copy(),
            outflow=outflow,
        )
    raise TypeError("reflect_time acts on BoundaryTrace series or Trajectory")


# ---------------------------------------------------------------------------
# The time-reversal operator


def _as_trace(h) -> tuple[BoundaryTrace, float, float]:
    if isinstance(h, Measurement):
        return h.trace, h.tau, h.dt
    if isinstance(h, BoundaryTrace):
        if not h.is_series or h.dt is None:
            raise ValueError("need a sampled outflow series with dt")
        return h, (h.n_times - 1) * h.dt, h.dt
    raise TypeError("expected a Measurement or an outflow BoundaryTrace series")


def time_reversal(
    grid: PhaseSpaceGrid,
    medium: Medium,
    h,
    lift: str = LIFT_ZERO,
) -> Field:
    """Approximate left inverse of ``measure``.

    Reflect the recording, optionally lift its initial sample to a
    stationary reversed solution (keeping the output in the graph-norm
    space), run the reversed evolution fed by the reflected data, and flip
    the final state.
    """
    trace, tau, dt = _as_trace(h)
    if trace.part != OUTFLOW:
        raise ValueError("time reversal consumes outflow recordings")
    g = reflect_time(trace, tau)
    if lift == LIFT_STATIONARY:
        psi = solve_stationary_reversed(
            grid, medium, StationarySpec(inflow=g.sample(0))
        )
    elif lift == LIFT_ZERO:
        psi = Field.zeros(grid)
    else:
        raise ValueError(f"unknown lift {lift!r}")
    spec = EvolutionSpec(tau=tau, dt=dt, inflow=g, record_trace=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traj = evolve_reversed(grid, medium, psi, spec, inflow_shift=1)
    return reflect_angle(traj.final)


def apply_error_operator(
    grid: PhaseSpaceGrid,
    medium: Medium,
    u0: Field,
    tau: float,
    lift: str = LIFT_ZERO,
    dt: float | None = None,
    via: str = "timereversal",
) -> Field:
    """One pass of the reconstruction error map u0 - reversal(measure(u0)).

    ``via="composition"`` evaluates instead the flip-conjugated product of
    the reversed and direct propagators, the operator-level form of the
    same map; the two paths agree only up to the (first-order) mismatch
    between the upwind stencil and its time reflection, so their difference
    is a discretization diagnostic, not roundoff.
    """
    dt = resolve_dt(grid, tau, dt)
    if via == "timereversal":
        rec = time_reversal(grid, medium, measure(grid, medium, u0, tau, dt), lift)
        return u0 - rec
    if via == "composition":
        if lift != LIFT_ZERO:
            raise ValueError("the composition form is the zero-lift operator")
        s = propagate(grid, medium, u0, tau, which="direct", dt=dt)
        r = propagate(grid, medium, reflect_angle(s), tau, which="reversed", dt=dt)
        return reflect_angle(r)
    raise ValueError(f"unknown route {via!r}")


# ---------------------------------------------------------------------------
# Exact adjoint of the reconstruction pipeline (zero lift)


def _reversal_of_measurement_adjoint(
    grid: PhaseSpaceGrid,
    medium: Medium,
    w: Field,
    tau: float,
    dt: float,
) -> Field:
    """Weighted transpose of u0 -> time_reversal(measure(u0)) with zero lift.

    The forward map is sum_j V M_r^j B M^j with B the boundary
    sample/flip/re-inject coupling; the transpose runs the adjoint steps in
    the opposite order, needing only the boundary samples of the reversed
    adjoint sweep.
    """
    n_steps = resolve_steps(tau, dt)
    f_idx, k_idx, lin, coef = _inflow_index_arrays(grid)
    neg = grid.neg_index
    scale = grid.c * dt

    def b_adjoint(sample: np.ndarray) -> np.ndarray:
        out = np.zeros(grid.field_shape())
        lin_flip = grid.faces.cell_flat[f_idx] * grid.n_dirs + neg[k_idx]
        np.add.at(out.reshape(-1), lin_flip, scale * coef * sample[f_idx, k_idx])
        return out

    psi = w.values.copy()
    samples = []
    for _ in range(n_steps):
        samples.append(_sample_boundary_raw(grid, psi))
        psi = step_adjoint_raw(grid, medium, psi, dt, sign=-1.0)
    acc = b_adjoint(samples[-1])
    for j in range(n_steps - 2, -1, -1):
        acc = step_adjoint_raw(grid, medium, acc, dt, sign=+1.0)
        acc += b_adjoint(samples[j])
    return Field(grid, acc)


def apply_error_operator_adjoint(
    grid: PhaseSpaceGrid,
    medium: Medium,
    w: Field,
    tau: float,
    dt: float | None = None,
) -> Field:
    """Exact weighted transpose of the zero-lift error map."""
    dt = resolve_dt(grid, tau, dt)
    flipped = reflect_angle(w)
    gl_t = _reversal_of_measurement_adjoint(grid, medium, flipped, tau, dt)
    return w - gl_t


def contraction_factor(
    grid: PhaseSpaceGrid,
    medium: Medium,
    tau: float,
    lift: str = LIFT_ZERO,
    iters: int = 20,
    seed: int = 0,
    dt: float | None = None,
) -> float:
    """Power-iteration estimate of the error-map operator norm.

    Zero lift measures the L2 phase-space norm; the stationary lift
    measures the graph norm (dense Gram solve, small grids only).
    """
    dt = resolve_dt(grid, tau, dt)
    if lift == LIFT_ZERO:
        return operator_norm_estimate(
            lambda u: apply_error_operator(grid, medium, u, tau, lift, dt),
            grid,
            iters=iters,
            seed=seed,
            apply_adjoint=lambda u: apply_error_operator_adjoint(grid, medium, u, tau, dt),
        )
    if lift != LIFT_STATIONARY:
        raise ValueError(f"unknown lift {lift!r}")
    ndof = grid.n_cells_total * grid.n_dirs
    if ndof > 4096:
        raise ValueError(
            "graph-norm contraction estimates assemble a dense Gram matrix; "
            f"use at most 4096 unknowns (got {ndof})"
        )
    gram = _graph_gram(grid)
    cho = np.linalg.cholesky(gram)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(ndof)
    x /= np.sqrt(x @ gram @ x)
    sigma = 0.0
    for _ in range(iters):
        qx = apply_error_operator(
            grid, medium, Field(grid, x.reshape(grid.field_shape())), tau, lift, dt
        ).values.reshape(-1)
        sigma = float(np.sqrt(max(qx @ gram @ qx, 0.0)))
        # graph-norm adjoint: G^{-1} Q^T G with Q^T in the flat coordinates
        y = gram @ qx
        z = apply_error_operator_adjoint_stationary(grid, medium, y, tau, dt)
        x = np.linalg.solve(cho.T, np.linalg.solve(cho, z))
        nx = np.sqrt(max(x @ gram @ x, 0.0))
        if nx == 0:
            return 0.0
        x /= nx
    return sigma


def _graph_gram(grid: PhaseSpaceGrid) -> np.ndarray:
    """Dense Gram matrix of the graph inner product (small full grids only).

    The mass and trace parts are diagonal in the flat coordinates; the
    derivative part is assembled column by column from the upwind stencil.
    """
    from .grid import _upwind_derivative_raw

    if grid.mask is not None:
        raise ValueError("graph Gram assembly supports unmasked grids only")
    ndof = grid.n_cells_total * grid.n_dirs
    shape = grid.field_shape()
    w_full = (
        np.broadcast_to(grid.weights, shape).reshape(-1) * grid.cell_volume
    ).copy()

    diag = w_full.copy()
    fs = grid.faces
    f_idx, k_idx = np.nonzero(fs.inflow_mask | fs.outflow_mask)
    tw = (
        grid.l
        * np.abs(fs.nu_dot[f_idx, k_idx])
        * fs.measure[f_idx]
        * grid.weights[k_idx]
    )
    lin = fs.cell_flat[f_idx] * grid.n_dirs + k_idx
    np.add.at(diag, lin, tw)

    deriv = np.empty((ndof, ndof))
    e = np.zeros(ndof)
    for j in range(ndof):
        e[j] = 1.0
        deriv[:, j] = _upwind_derivative_raw(
            grid, e.reshape(shape), boundary="copy"
        ).reshape(-1)
        e[j] = 0.0
    gram = np.diag(diag) + grid.l**2 * deriv.T @ (w_full[:, None] * deriv)
    return 0.5 * (gram + gram.T)


def apply_error_operator_adjoint_stationary(grid, medium, y_flat, tau, dt):
    """Unweighted transpose applied to flat coordinates (stationary-lift
    contraction estimate only; relies on the uniform quadrature weights)."""
    w = Field(grid, y_flat.reshape(grid.field_shape()))
    return apply_error_operator_adjoint(grid, medium, w, tau, dt).values.reshape(-1)


def time_reversal_adjoint(
    grid: PhaseSpaceGrid,
    medium: Medium,
    w: Field,
    tau: float,
    dt: float | None = None,
) -> BoundaryTrace:
    """Exact adjoint of the zero-lift reversal operator, as an outflow series
    (pairs with the dt-uniform time-integrated boundary inner product)."""
    dt = resolve_dt(grid, tau, dt)
    n_steps = resolve_steps(tau, dt)
    nf, nd = grid.faces.n_faces, grid.n_dirs
    neg = grid.neg_index
    in_mask = grid.faces.inflow_mask
    scale = grid.c / grid.l
    out = np.zeros((nf, nd, n_steps + 1))
    psi = reflect_angle(w).values.copy()
    for n in range(n_steps):
        s = scale * _sample_boundary_raw(grid, psi) * in_mask
        out[:, :, n] = s[:, neg]
        psi = step_adjoint_raw(grid, medium, psi, dt, sign=-1.0)
    return BoundaryTrace(grid, out, OUTFLOW, dt=dt)


def reversal_norm(
    grid: PhaseSpaceGrid,
    medium: Medium,
    tau: float,
    iters: int = 15,
    seed: int = 0,
    dt: float | None = None,
) -> float:
    """Power-iteration estimate of the zero-lift reversal operator norm as a
    map from recorded outflow series to fields."""
    dt = resolve_dt(grid, tau, dt)
    rng = np.random.default_rng(seed)
    w = Field.random(grid, rng)
    nw = phase_norm(w)
    if nw == 0.0:
        return 0.0
    w = w * (1.0 / nw)
    sigma = 0.0
    for _ in range(iters):
        h = time_reversal_adjoint(grid, medium, w, tau, dt)
        nh = trace_series_norm(h)
        if nh == 0.0:
            return 0.0
        sigma = nh
        h = BoundaryTrace(grid, h.values / nh, h.part, h.dt)
        y = time_reversal(grid, medium, h, LIFT_ZERO)
        ny = phase_norm(y)
        if ny == 0.0:
            return 0.0
        w = y * (1.0 / ny)
    return float(sigma)


def measurement_stability_constant(
    grid: PhaseSpaceGrid,
    medium: Medium,
    tau: float,
    iters: int = 15,
    seed: int = 0,
    dt: float | None = None,
) -> float:
    """Empirical stability constant of the measurement: reversal-operator
    norm divided by the contraction gap, bounding |u0| by the recorded
    outflow norm.  Finite whenever the error map is a contraction."""
    dt = resolve_dt(grid, tau, dt)
    q = contraction_factor(grid, medium, tau, LIFT_ZERO, iters=iters, seed=seed, dt=dt)
    if q >= 1.0:
        return math.inf
    g_norm = reversal_norm(grid, medium, tau, iters=iters, seed=seed, dt=dt)
    return g_norm / (1.0 - q)


# ---------------------------------------------------------------------------
# Neumann-series reconstruction


@dataclass(eq=False)
class ReconstructionReport:
    final: Field
    increments: np.ndarray            # |u^n - u^{n-1}| per iteration
    ratios: np.ndarray                # successive increment ratios
    contraction_estimate: float
    converged: bool
    diverged: bool = False
    errors_vs_truth: np.ndarray | None = None
    graph_increments: np.ndarray | None = None


def reconstruct_neumann(
    grid: PhaseSpaceGrid,
    medium: Medium,
    h,
    n_iter: int = 20,
    lift: str = LIFT_ZERO,
    ground_truth: Field | None = None,
) -> ReconstructionReport:
    """Partial sums of the reconstruction series.

    Starts from one reversal pass and repeatedly adds the reversal of the
    data misfit.  Stops early (diverged=True) when the increment ratio
    exceeds one for three consecutive iterations.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    trace, tau, dt = _as_trace(h)
    u = time_reversal(grid, medium, h, lift)
    increments, graph_incs, errors = [], [], []

    def record_error(cur: Field):
        if ground_truth is not None:
            denom = phase_norm(ground_truth)
            errors.append(phase_norm(cur - ground_truth) / denom if denom else np.nan)

    record_error(u)
    bad_streak = 0
    diverged = False
    for _ in range(n_iter):
        mm = measure(grid, medium, u, tau, dt)
        residual = BoundaryTrace(
            grid, trace.values - mm.trace.values, OUTFLOW, dt=dt
        )
        delta = time_reversal(grid, medium, residual, lift)
        u = u + delta
        increments.append(phase_norm(delta))
        if lift == LIFT_STATIONARY:
            graph_incs.append(graph_norm(delta))
        record_error(u)
        if len(increments) >= 2:
            prev, cur = increments[-2], increments[-1]
            if prev > 0 and cur / prev > 1.0:
                bad_streak += 1
            else:
                bad_streak = 0
            if bad_streak >= 3:
                diverged = True
                break

    inc = np.asarray(increments)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inc[1:] / inc[:-1]
    ratios = ratios[np.isfinite(ratios)]
    contraction = float(np.exp(np.mean(np.log(ratios)))) if ratios.size else 0.0
    return ReconstructionReport(
        final=u,
        increments=inc,
        ratios=ratios,
        contraction_estimate=contraction,
        converged=(not diverged) and (contraction < 1.0),
        diverged=diverged,
        errors_vs_truth=np.asarray(errors) if errors else None,
        graph_increments=np.asarray(graph_incs) if graph_incs else None,
    )


# ---------------------------------------------------------------------------
# Krylov solve of the fixed-point equation (beyond weak scattering)


def _gmres(matvec, b: np.ndarray, tol: float, restart: int | None, max_iter: int):
    """Restarted residual-minimizing Krylov iteration (plain dot products;
    the quadrature weights are uniform so this is the weighted geometry up
    to a constant factor).  restart=None keeps the full Krylov basis.
    Returns (x, relative residual, matvec count)."""
    n = b.shape[0]
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0.0, 0
    nmv = 0
    rel = np.inf
    cycle = n if restart is None else restart
    while nmv < max_iter:
        r = b - matvec(x)
        nmv += 1
        beta = np.linalg.norm(r)
        rel = beta / bnorm
        if rel <= tol:
            return x, rel, nmv
        m = min(cycle, max_iter - nmv)
        if m <= 0:
            break
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        k_used = 0
        for j in range(m):
            w = matvec(V[:, j])
            nmv += 1
            basis = V[:, : j + 1]
            for _ in range(2):  # Gram-Schmidt with one re-pass
                hcol = basis.T @ w
                w = w - basis @ hcol
                H[: j + 1, j] += hcol
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] < 1e-14 * max(beta, 1.0)
            if not breakdown:
                V[:, j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                warnings.warn(
                    "Krylov breakdown: the fixed-point operator may be "
                    "singular (reconstruction map has a unit eigenvalue?)",
                    RuntimeWarning,
                )
                k_used = j
                break
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k_used = j + 1
            if abs(g[j + 1]) / bnorm <= tol or breakdown:
                break
        if k_used > 0:
            y = np.linalg.solve(H[:k_used, :k_used], g[:k_used])
            x = x + V[:, :k_used] @ y
        else:
            break
    r = b - matvec(x)
    rel = np.linalg.norm(r) / bnorm
    return x, rel, nmv


def solve_fredholm(
    grid: PhaseSpaceGrid,
    medium: Medium,
    h,
    tol: float = 1e-8,
    max_iter: int = 2000,
    dt: float | None = None,
    restart: int | None = 30,
) -> Field:
    """Solve the reconstruction fixed-point equation by restarted GMRES.

    Works in the L2 phase-space setting with the zero lift, so it applies
    beyond the weak-scattering regime whenever the fixed-point operator is
    invertible.  The operator can be severely ill-conditioned (poorly
    observed interior modes), in which case pass restart=None to keep the
    full Krylov basis.  Raises on stagnation; warns on near-breakdown.
    """
    trace, tau, dt_h = _as_trace(h)
    dt = dt_h if dt is None else dt
    b_field = time_reversal(grid, medium, h, LIFT_ZERO)
    b = b_field.values.reshape(-1)
    shape = grid.field_shape()

    def matvec(x_flat: np.ndarray) -> np.ndarray:
        u = Field(grid, x_flat.reshape(shape))
        rec = time_reversal(grid, medium, measure(grid, medium, u, tau, dt), LIFT_ZERO)
        return rec.values.reshape(-1)

    x, rel, nmv = _gmres(matvec, b, tol=tol, restart=restart, max_iter=max_iter)
    if rel > tol:
        raise DivergenceError(
            f"Krylov iteration stagnated: relative residual {rel:.3e} > {tol:.3e} "
            f"after {nmv} operator applications"
        )
    return Field(grid, x.reshape(shape))


# ---------------------------------------------------------------------------
# Synthetic data with the inverse-crime guard


def generate_synthetic(
    grid: PhaseSpaceGrid,
    medium_fn,
    u0_fn,
    tau: float,
    dt: float | None = None,
    refine: int = 2,
):
    """Synthetic measurement generated on a ``refine``-times finer grid in
    space and time, restricted onto the working grid.

    Generating data with the same discretization used for inversion
    spuriously inflates accuracy, so the guard is on by default; pass
    refine=1 to disable it deliberately.  ``medium_fn`` and ``u0_fn`` build
    the medium and the true initial state on any grid.  Returns the
    restricted measurement and the block-averaged truth field.
    """
    from .grid import coarsen_field, refine_grid, restrict_trace_series

    if refine < 1:
        raise ValueError("refine must be at least 1")
    dt_c = resolve_dt(grid, tau, dt)
    medium_c = medium_fn(grid)
    if refine == 1:
        u0_c = u0_fn(grid)
        return measure(grid, medium_c, u0_c, tau, dt_c), u0_c
    fine = refine_grid(grid, refine)
    u0_f = u0_fn(fine)
    mm_f = measure(fine, medium_fn(fine), u0_f, tau, dt_c / refine)
    trace_c = restrict_trace_series(mm_f.trace, grid, refine)
    truth_c = coarsen_field(u0_f, grid)
    mm_c = Measurement(grid=grid, medium=medium_c, trace=trace_c, tau=tau, dt=dt_c)
    return mm_c, truth_c


# ---------------------------------------------------------------------------
# Steering-time heuristic


def suggest_tau(grid: PhaseSpaceGrid, medium: Medium, max_multiples: int = 64) -> float:
    """Smallest whole multiple of the crossing time whose squared decay
    bound is at most one half; a heuristic default for the recording span."""
    rep = regime_report(medium, grid)
    if not rep.satisfied:
        raise ValueError(
            "no decay guarantee outside the weak-scattering regime; "
            "choose tau explicitly"
        )
    T = grid.T
    for m in range(1, max_multiples + 1):
        if rep.decay_bound(m * T) ** 2 <= 0.5:
            return m * T
    raise ValueError("decay bound stays above threshold; choose tau explicitly")
