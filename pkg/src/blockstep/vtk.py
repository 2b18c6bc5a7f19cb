"""Legacy ASCII VTK snapshots on structured grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_structured_points(path, nx: int, ny: int, origin, spacing, name: str,
                            values: np.ndarray, time: float | None = None) -> None:
    """Write ``values`` (x fastest) as point data on an ``nx x ny`` lattice."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size != nx * ny:
        raise ValueError(f"expected {nx * ny} values, got {values.size}")
    title = "blockstep snapshot" if time is None else f"blockstep snapshot t={time:.10g}"
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {origin[0]:.10g} {origin[1]:.10g} 0",
        f"SPACING {spacing[0]:.10g} {spacing[1]:.10g} 1",
        f"POINT_DATA {nx * ny}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    body = "\n".join(f"{v:.12g}" for v in values)
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def write_snapshot(path, problem, y, time: float | None = None) -> None:
    """Cell data of finite-volume problems is written at cell centers."""
    g = problem.grid
    y = np.asarray(y)
    if y.size == g.n_cells:
        write_structured_points(path, g.nx, g.ny, (g.x0 + g.hx / 2, g.y0 + g.hy / 2),
                                (g.hx, g.hy), "u", y, time)
    else:
        write_structured_points(path, g.nx + 1, g.ny + 1, (g.x0, g.y0), (g.hx, g.hy),
                                "u", y, time)
