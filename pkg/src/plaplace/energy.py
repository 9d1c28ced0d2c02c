"""Discrete p-Dirichlet energies and their gradients.

Faces are grouped into per-cell vectors: cell ``i`` owns its forward interior
face on each axis (the last cell along an axis owns none there), and every
boundary face forms a group on its own. The energy is

    E_p(u) = (1/p) * sum over groups |G|^p * cell_volume

so it is a sum of independent convex functions of ``grad(u)``. In Dirichlet
mode the boundary groups carry ``|u|/h`` and for ``p = 1`` add exactly the
trace mass of the zero extension; in Neumann mode they are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BC, Field, Grid, div_arrays, grad_arrays


@dataclass(frozen=True)
class EnergySpec:
    p: float
    grid: Grid

    def __post_init__(self):
        p = float(self.p)
        if not np.isfinite(p) or p < 1.0:
            raise ValueError("p must be ≥ 1")
        object.__setattr__(self, "p", p)

    @property
    def bc(self) -> BC:
        return self.grid.bc

    @property
    def q(self) -> float:
        """Conjugate exponent p/(p-1); infinite at p = 1."""
        return np.inf if self.p == 1.0 else self.p / (self.p - 1.0)


def _axis_slice(ndim: int, axis: int, sl) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def group_magnitudes(g: Sequence[np.ndarray], grid: Grid) -> tuple[np.ndarray, list[np.ndarray]]:
    """Euclidean magnitude of each face group.

    Returns the interior magnitudes (one per cell) and a list with the
    absolute values of the boundary faces, two arrays per axis.
    """
    d = grid.dim
    sq = np.zeros(grid.shape)
    boundary = []
    for a, ga in enumerate(g):
        n = grid.cells[a]
        sq[_axis_slice(d, a, slice(0, n - 1))] += ga[_axis_slice(d, a, slice(1, n))] ** 2
        boundary.append(np.abs(ga[_axis_slice(d, a, 0)]))
        boundary.append(np.abs(ga[_axis_slice(d, a, n)]))
    return np.sqrt(sq), boundary


def face_magnitudes(g: Sequence[np.ndarray], grid: Grid) -> list[np.ndarray]:
    """Scatter each group's magnitude back onto its faces."""
    d = grid.dim
    interior, _ = group_magnitudes(g, grid)
    out = []
    for a, ga in enumerate(g):
        n = grid.cells[a]
        m = np.abs(ga)
        m[_axis_slice(d, a, slice(1, n))] = interior[_axis_slice(d, a, slice(0, n - 1))]
        out.append(m)
    return out


def _power_sum(z: np.ndarray, p: float) -> float:
    if p == 1.0:
        return float(np.sum(z))
    return float(np.sum(z**p)) / p


def energy_from_faces(g: Sequence[np.ndarray], grid: Grid, p: float) -> float:
    interior, boundary = group_magnitudes(g, grid)
    total = _power_sum(interior, p) + sum(_power_sum(b, p) for b in boundary)
    return total * grid.cell_volume


def conjugate_from_faces(g: Sequence[np.ndarray], grid: Grid, p: float) -> float:
    """Convex conjugate of the face energy, sum of (1/q)|y|^q over groups.

    For p = 1 the conjugate is the indicator of the unit ball per group; the
    caller is expected to have projected ``g`` onto it, so 0 is returned.
    """
    if p == 1.0:
        return 0.0
    q = p / (p - 1.0)
    return energy_from_faces(g, grid, q)


def energy(spec: EnergySpec, u: Field) -> float:
    spec.grid.check_same(u.grid)
    return energy_from_faces(grad_arrays(u.values, u.grid), u.grid, spec.p)


def flux_arrays(g: Sequence[np.ndarray], grid: Grid, p: float) -> list[np.ndarray]:
    """Per-face ``|G|^(p-2) g`` with the minimal-norm value 0 where ``G = 0``."""
    mags = face_magnitudes(g, grid)
    out = []
    for ga, m in zip(g, mags):
        scale = np.zeros_like(m)
        nz = m > 0
        scale[nz] = m[nz] ** (p - 2.0)
        out.append(scale * ga)
    return out


def subgradient(spec: EnergySpec, u: Field) -> Field:
    """The gradient of the energy in the weighted L2 inner product, p > 1."""
    if spec.p == 1.0:
        raise ValueError("subdifferential is set-valued at p=1; use the resolvent")
    spec.grid.check_same(u.grid)
    flux = flux_arrays(grad_arrays(u.values, u.grid), u.grid, spec.p)
    return Field(u.grid, -div_arrays(flux, u.grid))


def energy_limit_gap(u: Field, p_seq: Sequence[float], bc: BC | str | None = None,
                     p0: float = 1.0) -> list[float]:
    """``|E_{p_n}(u) - E_{p0}(u)|`` for each exponent in ``p_seq``."""
    if len(p_seq) == 0:
        raise ValueError("p_seq must not be empty")
    grid = u.grid if bc is None else u.grid.with_bc(bc)
    g = grad_arrays(u.values, grid)
    base = energy_from_faces(g, grid, float(p0))
    return [abs(energy_from_faces(g, grid, float(p)) - base) for p in p_seq]
