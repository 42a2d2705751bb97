"""Command-line front end: configuration-driven experiment runs.

    rtetr <command> --config <path-or-bundled-name> [--out DIR] [--seed N]
          [--allow-inverse-crime] [--no-figures]

Commands: simulate, invert, control, validate, spectrum.  Every run writes
delimited series, binary field/trace blocks, rendered figures, and a
manifest listing the resolved configuration and the content hash of every
file involved.  Exit codes: 0 success, 1 configuration error, 2 solver
failure, 3 validation violations.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .grid import (
    Field,
    BoundaryTrace,
    INFLOW,
    OUTFLOW,
    phase_inner,
    phase_norm,
    trace_norm,
    trace_series_inner,
    trace_series_norm,
    green_identity_residual,
    refine_grid,
)
from .medium import (
    apply_scattering,
    apply_scattering_adjoint,
    regime_report,
    validate_kernel,
)
from .evolution import (
    CflError,
    EvolutionSpec,
    evolve_direct,
    resolve_steps,
    semigroup_norm,
    step_raw,
    step_adjoint_raw,
)
from .stationary import ConvergenceError, StationarySpec, solve_stationary_direct
from .timereversal import (
    DivergenceError,
    contraction_factor,
    generate_synthetic,
    measure,
    reconstruct_neumann,
    reflect_angle,
    reflect_time,
    solve_fredholm,
    apply_error_operator,
    apply_error_operator_adjoint,
)
from .control import ADJOINT_EXACT, ADJOINT_REFLECTION, adjoint_steer, min_norm_control, steer
from .config import (
    ConfigError,
    ExperimentConfig,
    build_grid_from,
    build_medium_from,
    build_profile_field,
    load_config,
    resolve_times,
)
from . import io as rio
from . import report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VALIDATION = 3


class _Run:
    """Output bookkeeping for one command invocation."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, seed: int, figures: bool):
        self.cfg = cfg
        self.dir = out_dir
        self.seed = seed
        self.figures = figures
        self.outputs: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.outputs.append(p)
        return p

    def maybe_figure(self, name: str):
        return self.path(name) if self.figures else None

    def write_manifest(self, command: str):
        manifest = {
            "tool": f"rtetr {__version__}",
            "command": command,
            "seed": self.seed,
            "config": {
                "path": str(self.cfg.path),
                "hash": rio.git_blob_hash(self.cfg.path),
            },
            "resolved": self.cfg.resolved,
            "outputs": [
                {"path": str(p), "hash": rio.git_blob_hash(p)}
                for p in self.outputs
                if p.exists()
            ],
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_measurement(run: _Run, mm, stem: str):
    rio.write_trace(run.path(f"{stem}.rtet"), mm.trace)
    rows = []
    for n in range(mm.trace.n_times):
        rows.append((n * mm.dt, trace_norm(mm.trace.sample(n))))
    rio.write_csv(run.path(f"{stem}_index.csv"), ["time", "outflow_norm"], rows)


def cmd_simulate(cfg, grid, medium, run: _Run, args) -> int:
    tau, dt = resolve_times(cfg, grid, medium)
    u0 = build_profile_field(
        cfg.section("initial_condition"), grid, cfg.path.parent, "initial condition"
    )
    stride = int(cfg.section("time").get("record_every", "0") or 0)
    spec = EvolutionSpec(tau=tau, dt=dt, record_trace=True, record_every=stride)
    traj = evolve_direct(grid, medium, u0, spec)
    for snap_t, snap in zip(traj.times, traj.snapshots):
        step = int(round(snap_t / dt))
        rio.write_field(run.path(f"snapshot_{step:06d}.rtef"), snap)

    # per-step norms: replay the recurrence (cheap next to the run itself)
    n_steps = resolve_steps(tau, dt)
    rows = []
    vals = u0.values.copy()
    rows.append((0, 0.0, phase_norm(u0), trace_norm(traj.outflow.sample(0))))
    for n in range(n_steps):
        vals = step_raw(grid, medium, vals, dt, +1.0)
        rows.append(
            (
                n + 1,
                (n + 1) * dt,
                phase_norm(Field(grid, vals)),
                trace_norm(traj.outflow.sample(n + 1)),
            )
        )
    rio.write_csv(
        run.path("trajectory_index.csv"),
        ["step", "time", "field_norm", "outflow_norm"],
        rows,
    )
    rio.write_field(run.path("initial_state.rtef"), u0)
    rio.write_field(run.path("final_state.rtef"), traj.final)
    rio.write_trace(run.path("outflow.rtet"), traj.outflow)
    if run.figures:
        t = [r[1] for r in rows]
        report.save_series_figure(
            run.maybe_figure("trajectory_norms.png"),
            [("field", t, [r[2] for r in rows]), ("outflow", t, [r[3] for r in rows])],
            title="transport run",
            xlabel="time",
            ylabel="norm",
        )
        report.save_field_figure(
            run.maybe_figure("final_state.png"), traj.final, title="final state"
        )
    print(f"simulate: tau={tau:.6g} dt={dt:.6g} final norm={phase_norm(traj.final):.6e}")
    return EXIT_OK


def cmd_invert(cfg, grid, medium, run: _Run, args) -> int:
    tau, dt = resolve_times(cfg, grid, medium)
    sec = cfg.section("invert")
    n_iter = int(sec.get("n_iter", "20"))
    lift = sec.get("lift", "zero").strip().lower()
    method = sec.get("method", "neumann").strip().lower()
    refine = 1 if args.allow_inverse_crime else int(sec.get("truth_refine", "2"))
    cfg.resolved["invert"] = {
        "n_iter": n_iter,
        "lift": lift,
        "method": method,
        "truth_refine": refine,
    }

    ic_sec = cfg.section("initial_condition")

    def medium_fn(g):
        return build_medium_from(cfg, g)

    def u0_fn(g):
        return build_profile_field(ic_sec, g, cfg.path.parent, "initial condition")

    mm, truth = generate_synthetic(grid, medium_fn, u0_fn, tau, dt=dt, refine=refine)
    _write_measurement(run, mm, "measurement")
    rio.write_field(run.path("truth.rtef"), truth)

    if method == "neumann":
        rep = reconstruct_neumann(grid, medium, mm, n_iter=n_iter, lift=lift, ground_truth=truth)
        final = rep.final
        rows = []
        for i, inc in enumerate(rep.increments, start=1):
            err = rep.errors_vs_truth[i] if rep.errors_vs_truth is not None else np.nan
            ratio = rep.ratios[i - 2] if i >= 2 and rep.ratios.size >= i - 1 else np.nan
            rows.append((i, inc, err, ratio))
        rio.write_csv(
            run.path("reconstruction.csv"),
            ["iteration", "increment", "error_vs_truth", "ratio"],
            rows,
        )
        if run.figures and rows:
            its = [r[0] for r in rows]
            report.save_series_figure(
                run.maybe_figure("reconstruction.png"),
                [
                    ("increment", its, [r[1] for r in rows]),
                    ("error vs truth", its, [r[2] for r in rows]),
                ],
                title=f"series reconstruction (contraction ~ {rep.contraction_estimate:.3f})",
                xlabel="iteration",
                ylabel="relative size",
            )
        err_final = rep.errors_vs_truth[-1] if rep.errors_vs_truth is not None else np.nan
        print(
            f"invert[neumann]: iterations={rep.increments.size} "
            f"contraction~{rep.contraction_estimate:.4f} error={err_final:.4e} "
            f"converged={rep.converged}"
        )
        if rep.diverged:
            print("invert[neumann]: iteration diverged", file=sys.stderr)
            return EXIT_SOLVER
    elif method == "fredholm":
        tol = float(sec.get("tol", "1e-8"))
        max_iter = int(sec.get("max_iter", "2000"))
        restart_spec = sec.get("restart", "30").strip().lower()
        restart = None if restart_spec in ("none", "full") else int(restart_spec)
        final = solve_fredholm(grid, medium, mm, tol=tol, max_iter=max_iter, restart=restart)
        err = phase_norm(final - truth) / max(phase_norm(truth), 1e-300)
        rio.write_csv(
            run.path("reconstruction.csv"),
            ["iteration", "increment", "error_vs_truth", "ratio"],
            [(0, np.nan, err, np.nan)],
        )
        print(f"invert[fredholm]: error vs truth={err:.4e}")
    else:
        raise ConfigError(f"unknown inversion method {method!r}")

    rio.write_field(run.path("reconstruction.rtef"), final)
    if run.figures:
        report.save_comparison_figure(
            run.maybe_figure("reconstruction_fields.png"),
            [truth, final],
            ["truth", "reconstruction"],
        )
    return EXIT_OK


def cmd_control(cfg, grid, medium, run: _Run, args) -> int:
    tau, dt = resolve_times(cfg, grid, medium)
    sec = cfg.section("control")
    v_star = build_profile_field(sec, grid, cfg.path.parent, "target")
    tol = float(sec.get("tol", "1e-3"))
    max_iter = int(sec.get("max_iter", "200"))
    mode = sec.get("adjoint_mode", "exact").strip().lower()
    if mode not in (ADJOINT_EXACT, ADJOINT_REFLECTION):
        raise ConfigError(f"unknown adjoint mode {mode!r}")
    tikhonov = float(sec.get("tikhonov", "0.0"))
    cfg.resolved["control"] = {
        "tol": tol,
        "max_iter": max_iter,
        "adjoint_mode": mode,
        "tikhonov": tikhonov,
    }
    rep = min_norm_control(
        grid,
        medium,
        v_star,
        tau,
        tol=tol,
        max_iter=max_iter,
        adjoint_mode=mode,
        dt=dt,
        tikhonov=tikhonov,
    )
    rows = [
        (i + 1, r, e)
        for i, (r, e) in enumerate(zip(rep.residual_history, rep.energy_history))
    ]
    rio.write_csv(run.path("control_residuals.csv"), ["iteration", "residual", "energy"], rows)
    rio.write_trace(run.path("control_hmin.rtet"), rep.h_min)
    achieved_state = steer(grid, medium, rep.h_min, tau)
    rio.write_field(run.path("achieved_state.rtef"), achieved_state)
    rio.write_field(run.path("target_state.rtef"), v_star)
    if run.figures and rows:
        report.save_series_figure(
            run.maybe_figure("control_residuals.png"),
            [("residual", [r[0] for r in rows], [r[1] for r in rows])],
            title="normal-equation conjugate gradients",
            xlabel="iteration",
            ylabel="relative residual",
        )
        report.save_comparison_figure(
            run.maybe_figure("control_fields.png"),
            [v_star, achieved_state],
            ["target", "achieved"],
        )
    print(
        f"control: iterations={rep.cg_iterations} achieved={rep.achieved:.4e} "
        f"control norm={trace_series_norm(rep.h_min):.6e} converged={rep.converged}"
    )
    if not rep.converged and rep.achieved > 10 * tol:
        print("control: target only weakly reachable at this resolution", file=sys.stderr)
    return EXIT_OK


def cmd_spectrum(cfg, grid, medium, run: _Run, args) -> int:
    tau, dt = resolve_times(cfg, grid, medium)
    rep = regime_report(medium, grid)
    times = [grid.T, 1.2 * grid.T, 2 * grid.T, 3 * grid.T]
    rows = []
    for t in times:
        s_est = semigroup_norm(grid, medium, t, "direct", iters=12, seed=run.seed)
        r_est = semigroup_norm(grid, medium, t, "reversed", iters=12, seed=run.seed)
        rows.append((t, s_est, r_est, rep.decay_bound(t)))
    rio.write_csv(
        run.path("spectrum.csv"),
        ["time", "direct_norm", "reversed_norm", "decay_bound"],
        rows,
    )
    q_est = contraction_factor(grid, medium, tau, iters=12, seed=run.seed, dt=dt)
    rio.write_csv(
        run.path("error_map_norm.csv"),
        ["tau", "estimate", "decay_bound_squared"],
        [(tau, q_est, rep.decay_bound(tau) ** 2)],
    )
    if run.figures:
        t = [r[0] for r in rows]
        report.save_series_figure(
            run.maybe_figure("spectrum.png"),
            [
                ("direct", t, [r[1] for r in rows]),
                ("reversed", t, [r[2] for r in rows]),
                ("bound", t, [r[3] for r in rows]),
            ],
            title="evolution operator norms",
            xlabel="time",
            ylabel="norm estimate",
        )
    for t, s_est, r_est, bound in rows:
        print(f"spectrum: t={t:.4g} direct={s_est:.3e} reversed={r_est:.3e} bound={bound:.3e}")
    print(f"spectrum: error map at tau={tau:.4g}: {q_est:.3e}")
    return EXIT_OK


def _validation_checks(cfg, grid, medium, seed: int):
    rng = np.random.default_rng(seed)
    tau_small = max(grid.T / 2, 4 * (grid.dx[0] / grid.c))
    from .timereversal import resolve_dt

    dt = resolve_dt(grid, tau_small)
    n_steps = resolve_steps(tau_small, dt)

    def random_field():
        return Field.random(grid, rng)

    def random_trace(part, n_times=None):
        shape = (grid.faces.n_faces, grid.n_dirs) + (
            (n_times,) if n_times else ()
        )
        return BoundaryTrace(grid, rng.standard_normal(shape), part, dt if n_times else None)

    checks = []

    def check(name, fn):
        checks.append((name, fn))

    check("quadrature-exactness", lambda: abs(grid.sphere_measure - (2.0 if grid.dim == 1 else 2 * np.pi)) <= 1e-12 * grid.sphere_measure)
    check("unit-directions", lambda: bool(np.allclose(np.linalg.norm(grid.directions, axis=1), 1.0, atol=1e-14)))
    check("direction-symmetry", lambda: bool(np.allclose(grid.directions[grid.neg_index], -grid.directions, atol=1e-14)))
    check("trace-partition", lambda: bool(
        not (grid.faces.inflow_mask & grid.faces.outflow_mask).any()
        and np.array_equal(
            grid.faces.inflow_mask | grid.faces.outflow_mask,
            np.abs(grid.faces.nu_dot) > 1e-12,
        )
    ))
    check("kernel-identities", lambda: validate_kernel(medium) == [])

    def _reflection_involutions():
        f = random_field()
        h = random_trace(OUTFLOW, n_steps + 1)
        ok = np.array_equal(reflect_angle(reflect_angle(f)).values, f.values)
        ok &= np.array_equal(reflect_time(reflect_time(h)).values, h.values)
        ok &= phase_norm(reflect_angle(f)) == phase_norm(f)
        ok &= trace_series_norm(reflect_time(h)) == trace_series_norm(h)
        return bool(ok)

    check("reflection-involutions", _reflection_involutions)

    def _intertwining():
        f = random_field()
        lhs = reflect_angle(apply_scattering(medium, f))
        rhs = apply_scattering_adjoint(medium, reflect_angle(f))
        return bool(np.abs(lhs.values - rhs.values).max() <= 1e-12)

    check("kernel-intertwining", _intertwining)

    def _scatter_adjoint():
        f, g2 = random_field(), random_field()
        lhs = phase_inner(apply_scattering(medium, f), g2)
        rhs = phase_inner(f, apply_scattering_adjoint(medium, g2))
        return abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    check("scattering-adjoint", _scatter_adjoint)

    def _step_adjoint():
        u, v = random_field(), random_field()
        ok = True
        for sign in (+1.0, -1.0):
            lhs = phase_inner(Field(grid, step_raw(grid, medium, u.values, dt, sign)), v)
            rhs = phase_inner(u, Field(grid, step_adjoint_raw(grid, medium, v.values, dt, sign)))
            ok &= abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
        return bool(ok)

    check("step-transpose", _step_adjoint)

    def _steer_adjoint():
        h = random_trace(INFLOW, n_steps + 1)
        w = random_field()
        lhs = phase_inner(steer(grid, medium, h, tau_small), w)
        rhs = trace_series_inner(h, adjoint_steer(grid, medium, w, tau_small, dt=dt))
        return abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))

    check("steering-adjoint", _steer_adjoint)

    def _error_map_adjoint():
        u, v = random_field(), random_field()
        lhs = phase_inner(apply_error_operator(grid, medium, u, tau_small, dt=dt), v)
        rhs = phase_inner(u, apply_error_operator_adjoint(grid, medium, v, tau_small, dt=dt))
        return abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    check("error-map-adjoint", _error_map_adjoint)

    def _positivity():
        u0 = Field(grid, rng.uniform(0.0, 1.0, grid.field_shape()))
        traj = evolve_direct(grid, medium, u0, EvolutionSpec(tau=tau_small, dt=dt))
        return bool(traj.final.values.min() >= 0.0)

    check("evolution-positivity", _positivity)

    def _green_refines():
        if grid.n_cells_total * grid.n_dirs > 200_000:
            return True  # refinement copy too large; covered by the suite
        fine = refine_grid(grid, 2)

        def smooth(g2):
            coords = g2.cell_centers()
            extent = [n * d for n, d in zip(g2.n_cells, g2.dx)]
            prof = np.ones(g2.spatial_shape)
            for a in range(g2.dim):
                prof = prof * np.sin(np.pi * coords[a] / extent[a])
            return Field(g2, np.repeat(prof[..., None], g2.n_dirs, axis=-1))

        r_c = green_identity_residual(smooth(grid), smooth(grid))
        r_f = green_identity_residual(smooth(fine), smooth(fine))
        return r_f <= 0.9 * r_c

    check("green-identity-refinement", _green_refines)

    def _regime_consistency():
        rep = regime_report(medium, grid)
        return rep.satisfied == (rep.lhs < np.exp(-1.0))

    check("regime-consistency", _regime_consistency)

    def _stationary_certificate():
        f = random_field()
        tol = 1e-9 * (1.0 + phase_norm(f))
        try:
            u = solve_stationary_direct(
                grid, medium, StationarySpec(source=f, tol=tol)
            )
        except ConvergenceError:
            return False
        from .stationary import stationary_residual_direct

        return stationary_residual_direct(grid, medium, u, f) <= tol

    check("stationary-residual-certificate", _stationary_certificate)

    return checks


def cmd_validate(cfg, grid, medium, run: _Run, args) -> int:
    failures = []
    rows = []
    for name, fn in _validation_checks(cfg, grid, medium, run.seed):
        try:
            ok = bool(fn())
        except Exception as exc:  # a crashed check is a failed check
            ok = False
            print(f"validate: {name}: error: {exc}", file=sys.stderr)
        rows.append((name, "pass" if ok else "FAIL"))
        print(f"validate: {name}: {'pass' if ok else 'FAIL'}")
        if not ok:
            failures.append(name)
    rio.write_csv(run.path("validation.csv"), ["invariant", "status"], rows)
    if failures:
        print(f"validate: {len(failures)} violation(s): {', '.join(failures)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "invert": cmd_invert,
    "control": cmd_control,
    "validate": cmd_validate,
    "spectrum": cmd_spectrum,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtetr",
        description="discrete-ordinates transport: simulation, time-reversal "
        "inversion, and boundary control",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="config file or bundled name")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--allow-inverse-crime",
        action="store_true",
        help="generate synthetic data on the inversion grid itself",
    )
    parser.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        grid = build_grid_from(cfg)
        medium = build_medium_from(cfg, grid)
        out_dir = Path(
            args.out
            if args.out
            else cfg.section("output").get("directory", f"runs/{cfg.path.stem}")
        )
        run = _Run(cfg, out_dir, args.seed, figures=not args.no_figures)
        cfg.resolved["seed"] = args.seed
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = _COMMANDS[args.command](cfg, grid, medium, run, args)
        run.write_manifest(args.command)
        return code
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CflError, ConvergenceError, DivergenceError, FloatingPointError) as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
