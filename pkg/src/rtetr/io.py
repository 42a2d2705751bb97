"""Binary field/trace blocks and round-trip CSV output.

Fields serialize as a 16-byte header (magic "RTEF", u32 total cell count,
u32 direction count, u32 reserved) followed by little-endian float64
values in cell-major, direction-minor order.  Traces use the magic "RTET"
with (faces, directions, samples) counts.  CSV numbers are written with
shortest round-trip formatting so files reload bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .grid import Field, BoundaryTrace, PhaseSpaceGrid

FIELD_MAGIC = b"RTEF"
TRACE_MAGIC = b"RTET"
_HEADER = struct.Struct("<4sIII")


def write_field(path, field: Field) -> None:
    grid = field.grid
    flat = np.ascontiguousarray(
        field.values.reshape(grid.n_cells_total, grid.n_dirs), dtype="<f8"
    )
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, grid.n_cells_total, grid.n_dirs, 0))
        fh.write(flat.tobytes())


def read_field(path, grid: PhaseSpaceGrid) -> Field:
    with open(path, "rb") as fh:
        magic, n_cells, n_dirs, _ = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != FIELD_MAGIC:
            raise ValueError(f"{path}: not a field block")
        if n_cells != grid.n_cells_total or n_dirs != grid.n_dirs:
            raise ValueError(
                f"{path}: block is {n_cells}x{n_dirs}, grid wants "
                f"{grid.n_cells_total}x{grid.n_dirs}"
            )
        data = np.frombuffer(fh.read(8 * n_cells * n_dirs), dtype="<f8")
    return Field(grid, data.reshape(grid.field_shape()).copy())


def read_raw_block(path) -> np.ndarray:
    """Read any field block as a (cells, directions) array without a grid."""
    with open(path, "rb") as fh:
        magic, n_cells, n_dirs, _ = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != FIELD_MAGIC:
            raise ValueError(f"{path}: not a field block")
        data = np.frombuffer(fh.read(8 * n_cells * n_dirs), dtype="<f8")
    return data.reshape(n_cells, n_dirs).copy()


def write_trace(path, trace: BoundaryTrace) -> None:
    vals = trace.values if trace.is_series else trace.values[:, :, None]
    nf, nd, nt = vals.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRACE_MAGIC, nf, nd, nt))
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_trace(
    path, grid: PhaseSpaceGrid, part: str, dt: float | None = None
) -> BoundaryTrace:
    with open(path, "rb") as fh:
        magic, nf, nd, nt = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != TRACE_MAGIC:
            raise ValueError(f"{path}: not a trace block")
        if nf != grid.faces.n_faces or nd != grid.n_dirs:
            raise ValueError(f"{path}: trace block does not match the grid")
        data = np.frombuffer(fh.read(8 * nf * nd * nt), dtype="<f8")
    vals = data.reshape(nf, nd, nt).copy()
    if nt == 1:
        return BoundaryTrace(grid, vals[:, :, 0], part)
    return BoundaryTrace(grid, vals, part, dt)


def write_csv(path, header: list[str], rows) -> None:
    """CSV with full round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row]
            )


def read_coefficient_csv(path, grid: PhaseSpaceGrid) -> np.ndarray:
    """Per-cell coefficient table: rows of (flat cell index, value)."""
    vals = np.zeros(grid.n_cells_total)
    seen = np.zeros(grid.n_cells_total, dtype=bool)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if not row[0].strip().lstrip("-").isdigit():
                continue  # header line
            idx = int(row[0])
            vals[idx] = float(row[1])
            seen[idx] = True
    if not seen.all():
        raise ValueError(f"{path}: {int((~seen).sum())} cells missing a value")
    return vals.reshape(grid.spatial_shape)


def read_kernel_block(path, n_dirs: int) -> np.ndarray:
    """Kernel table stored as a field block with one row per direction."""
    table = read_raw_block(path)
    if table.shape != (n_dirs, n_dirs):
        raise ValueError(f"{path}: kernel block is {table.shape}, wanted {(n_dirs, n_dirs)}")
    return table


def git_blob_hash(path) -> str:
    """Content hash in git blob form: sha1 over 'blob <len>\\0' + bytes."""
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()
