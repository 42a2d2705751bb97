"""Experiment configuration: an INI file with one section per concern.

Sections: [grid], [medium], [kernel], [time], [initial_condition],
[invert], [control], [output].  Values resolve to concrete numbers before
any solver runs (auto entries are expanded and logged to the manifest).
Durations accept a trailing T for multiples of the crossing time.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .grid import Rod1D, Box2D, Disk2D, Field, PhaseSpaceGrid, build_grid
from .medium import (
    Medium,
    build_medium,
    henyey_greenstein_kernel,
    isotropic_kernel,
    table_kernel,
)
from . import io as rio


class ConfigError(ValueError):
    pass


_BUNDLED = Path(__file__).parent / "configs"


def bundled_config_path(name: str) -> Path:
    return _BUNDLED / f"{name}.cfg"


def resolve_config_path(spec: str) -> Path:
    """A real path, or the name of a bundled configuration."""
    p = Path(spec)
    if p.exists():
        return p
    candidate = bundled_config_path(spec)
    if candidate.exists():
        return candidate
    raise ConfigError(f"config not found: {spec!r} (no such file or bundled name)")


@dataclass(eq=False)
class ExperimentConfig:
    path: Path
    raw: configparser.ConfigParser
    resolved: dict = dc_field(default_factory=dict)

    def section(self, name: str) -> dict:
        if not self.raw.has_section(name):
            return {}
        return dict(self.raw.items(name))


def load_config(spec: str) -> ExperimentConfig:
    path = resolve_config_path(spec)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig(path=path, raw=parser)


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def build_grid_from(cfg: ExperimentConfig) -> PhaseSpaceGrid:
    sec = cfg.section("grid")
    if not sec:
        raise ConfigError("missing [grid] section")
    geom = sec.get("geometry", "").strip().lower()
    try:
        if geom == "rod":
            geometry = Rod1D(float(sec["length"]))
            n_theta = None
        elif geom == "box":
            geometry = Box2D(float(sec["width"]), float(sec["height"]))
            n_theta = int(sec["n_theta"])
        elif geom == "disk":
            geometry = Disk2D(float(sec["radius"]))
            n_theta = int(sec["n_theta"])
        else:
            raise ConfigError(f"unknown geometry {geom!r} (rod | box | disk)")
        cells = [int(v) for v in sec["n_cells"].split()]
        n_cells = cells[0] if len(cells) == 1 else tuple(cells)
        c = float(sec.get("c", "1.0"))
        grid = build_grid(geometry, n_cells, n_theta=n_theta, c=c)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad [grid] section: {exc}") from exc
    cfg.resolved["grid"] = {
        "geometry": geom,
        "n_cells": list(grid.n_cells),
        "n_theta": grid.n_dirs,
        "c": grid.c,
        "l": grid.l,
        "T": grid.T,
    }
    return grid


def _coefficient(spec: str, grid: PhaseSpaceGrid, base_dir: Path) -> np.ndarray | float:
    toks = spec.split()
    kind = toks[0].lower()
    coords = grid.cell_centers()
    if kind == "constant":
        return float(toks[1])
    if kind == "gaussian-bump":
        # base amplitude center... width
        base, amp = float(toks[1]), float(toks[2])
        *center, width = [float(t) for t in toks[3:]]
        if len(center) != grid.dim:
            raise ConfigError(f"gaussian-bump center needs {grid.dim} coordinates")
        r2 = sum((c - x0) ** 2 for c, x0 in zip(coords, center))
        return base + amp * np.exp(-0.5 * r2 / width**2)
    if kind == "two-disk":
        if grid.dim != 2:
            raise ConfigError("two-disk profiles need a 2D geometry")
        base, amp = float(toks[1]), float(toks[2])
        x1, y1, r1, x2, y2, r2_ = [float(t) for t in toks[3:9]]
        x, y = coords
        inside = ((x - x1) ** 2 + (y - y1) ** 2 <= r1**2) | (
            (x - x2) ** 2 + (y - y2) ** 2 <= r2_**2
        )
        return base + amp * inside
    if kind == "table":
        path = base_dir / toks[1]
        if not path.exists():
            raise ConfigError(f"coefficient table not found: {path}")
        return rio.read_coefficient_csv(path, grid)
    raise ConfigError(f"unknown coefficient profile {kind!r}")


def build_medium_from(cfg: ExperimentConfig, grid: PhaseSpaceGrid) -> Medium:
    sec = cfg.section("medium")
    base_dir = cfg.path.parent
    try:
        mu_a = _coefficient(sec.get("mu_a", "constant 0.0"), grid, base_dir)
        mu_s = _coefficient(sec.get("mu_s", "constant 0.0"), grid, base_dir)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad [medium] section: {exc}") from exc
    ksec = cfg.section("kernel")
    kind = ksec.get("kind", "isotropic").strip().lower()
    if kind == "isotropic":
        kernel = isotropic_kernel(grid)
    elif kind in ("henyey-greenstein", "hg"):
        kernel = henyey_greenstein_kernel(grid, float(ksec.get("g", "0.0")))
    elif kind == "table":
        path = base_dir / ksec["path"]
        if not path.exists():
            raise ConfigError(f"kernel table not found: {path}")
        kernel = table_kernel(grid, rio.read_kernel_block(path, grid.n_dirs))
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    medium = build_medium(grid, mu_a=mu_a, mu_s=mu_s, kernel=kernel)
    cfg.resolved["medium"] = {
        "mu_a_bar": medium.mu_a_bar,
        "mu_s_bar": medium.mu_s_bar,
        "kernel": kind,
    }
    return medium


def _duration(text: str, grid: PhaseSpaceGrid) -> float:
    text = text.strip()
    if text.lower().endswith("t"):
        return float(text[:-1]) * grid.T
    return float(text)


def resolve_times(
    cfg: ExperimentConfig, grid: PhaseSpaceGrid, medium: Medium
) -> tuple[float, float]:
    """Resolve (tau, dt); 'auto' uses the decay-bound heuristic and the
    stability-limited step."""
    from .timereversal import resolve_dt, suggest_tau

    sec = cfg.section("time")
    tau_spec = sec.get("tau", "auto").strip().lower()
    cfl_safety = float(sec.get("cfl_safety", "0.9"))
    try:
        tau = suggest_tau(grid, medium) if tau_spec == "auto" else _duration(tau_spec, grid)
    except ValueError as exc:
        raise ConfigError(f"cannot resolve tau: {exc}") from exc
    dt_spec = sec.get("dt", "auto").strip().lower()
    if dt_spec == "auto":
        dt = resolve_dt(grid, tau, cfl_safety=cfl_safety)
    else:
        dt = resolve_dt(grid, tau, dt=float(dt_spec))
    cfg.resolved["time"] = {"tau": tau, "dt": dt, "cfl_safety": cfl_safety}
    return tau, dt


def build_profile_field(
    sec: dict, grid: PhaseSpaceGrid, base_dir: Path, what: str
) -> Field:
    kind = sec.get("kind", "gaussian").strip().lower()
    amp = float(sec.get("amplitude", "1.0"))
    coords = grid.cell_centers()
    if kind == "file":
        path = base_dir / sec["path"]
        if not path.exists():
            raise ConfigError(f"{what} field file not found: {path}")
        return rio.read_field(path, grid)
    center = _floats(sec.get("center", " ".join(["0.5"] * grid.dim)))
    if len(center) != grid.dim:
        raise ConfigError(f"{what} center needs {grid.dim} coordinates")
    if kind == "gaussian":
        width = float(sec.get("width", "0.1"))
        r2 = sum((c - x0) ** 2 for c, x0 in zip(coords, center))
        prof = amp * np.exp(-0.5 * r2 / width**2)
    elif kind == "box":
        half = float(sec.get("halfwidth", "0.1"))
        inside = np.ones(grid.spatial_shape, dtype=bool)
        for c, x0 in zip(coords, center):
            inside &= np.abs(c - x0) <= half
        prof = amp * inside.astype(float)
    elif kind == "ring":
        if grid.dim != 2:
            raise ConfigError("ring profiles need a 2D geometry")
        radius = float(sec.get("radius", "0.25"))
        width = float(sec.get("width", "0.05"))
        r = np.sqrt(sum((c - x0) ** 2 for c, x0 in zip(coords, center)))
        prof = amp * np.exp(-0.5 * ((r - radius) / width) ** 2)
    else:
        raise ConfigError(f"unknown {what} profile {kind!r}")
    vals = np.repeat(prof[..., None], grid.n_dirs, axis=-1)
    return Field(grid, vals)
