"""CSV and manifest files.

Numbers are written with ``%.17g`` so every float round-trips exactly and
repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

import numpy as np

from .flow import Forcing, Trajectory
from .geometry import Field, Grid


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def field_csv(u: Field) -> str:
    """One row per cell in row-major order: ``x[,y],value``."""
    grid = u.grid
    centers = [c.ravel() for c in grid.centers()]
    header = ["x", "y"][: grid.dim] + ["value"]
    lines = [",".join(header)]
    for i, v in enumerate(u.values.ravel()):
        lines.append(",".join([fmt(c[i]) for c in centers] + [fmt(v)]))
    return "\n".join(lines) + "\n"


def read_field_csv(text: str, grid: Grid) -> Field:
    """Inverse of :func:`field_csv`; coordinates must match ``grid`` cell centers."""
    rows = list(csv.reader(io.StringIO(text)))
    header = [h.strip() for h in rows[0]] if rows else []
    expected = ["x", "y"][: grid.dim] + ["value"]
    if header != expected:
        raise ValueError(f"field file header must be {','.join(expected)}")
    body = [r for r in rows[1:] if r]
    if len(body) != grid.size:
        raise ValueError(f"field file has {len(body)} rows, grid has {grid.size} cells")
    data = np.array([[float(x) for x in r] for r in body])
    centers = np.column_stack([c.ravel() for c in grid.centers()])
    if not np.allclose(data[:, :-1], centers, rtol=0, atol=1e-9 * max(grid.lengths)):
        raise ValueError("field file coordinates do not match the grid cell centers")
    return Field(grid, data[:, -1].reshape(grid.shape))


def read_forcing_csv(text: str, grid: Grid) -> Forcing:
    """Piecewise-constant forcing from rows ``t,cell_index,value``.

    Every listed time must give a value for every cell.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["t", "cell_index", "value"]:
        raise ValueError("forcing file header must be t,cell_index,value")
    table: dict[float, np.ndarray] = {}
    for r in rows[1:]:
        if not r:
            continue
        t, idx, v = float(r[0]), int(r[1]), float(r[2])
        if not 0 <= idx < grid.size:
            raise ValueError(f"cell_index {idx} out of range")
        table.setdefault(t, np.full(grid.size, np.nan))[idx] = v
    if not table:
        raise ValueError("forcing file has no rows")
    times = sorted(table)
    fields = []
    for t in times:
        if np.any(np.isnan(table[t])):
            raise ValueError(f"forcing at t={t:g} does not cover every cell")
        fields.append(Field(grid, table[t].reshape(grid.shape)))
    return Forcing.table(times, fields, label="file")


def trajectory_csv(traj: Trajectory) -> str:
    """Columns ``k,t,cell_index,value``; cells in row-major order."""
    out = ["k,t,cell_index,value"]
    for k, (t, u) in enumerate(zip(traj.times, traj.fields)):
        tk = fmt(t)
        out.extend(f"{k},{tk},{i},{fmt(v)}" for i, v in enumerate(u.values.ravel()))
    return "\n".join(out) + "\n"


def manifest(sections: Iterable[tuple[str, Iterable[tuple[str, object]]]]) -> str:
    """Plain ``[section]`` / ``key = value`` text."""
    lines = []
    for title, items in sections:
        lines.append(f"[{title}]")
        for key, value in items:
            if isinstance(value, float):
                value = fmt(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # newline="" keeps "\n" on every platform, so bytes match across runs
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
