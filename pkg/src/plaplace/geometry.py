"""Box grids, cell-centered fields and the discrete gradient/divergence pair.

Faces are stored per axis. Along axis ``a`` a grid with ``N_a`` cells has
``N_a + 1`` faces; face ``i`` separates cell ``i - 1`` from cell ``i``, so
faces ``0`` and ``N_a`` sit on the boundary. The gradient uses ghost cells
outside the box: value 0 for Dirichlet (zero extension) and a reflected
copy for Neumann, which makes the boundary faces vanish.

All reductions go through ``numpy.sum`` on arrays of fixed shape, so results
are bit-reproducible for identical inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    pass


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, value: "BC | str") -> "BC":
        if isinstance(value, BC):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown boundary condition {value!r}") from None


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on the box ``prod_a (0, length[a])``."""

    cells: tuple[int, ...]
    lengths: tuple[float, ...]
    bc: BC = BC.DIRICHLET

    def __post_init__(self):
        cells = tuple(int(n) for n in np.atleast_1d(self.cells))
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if len(cells) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if len(lengths) == 1 and len(cells) == 2:
            lengths = lengths * 2
        if len(lengths) != len(cells):
            raise ValueError("cells and lengths must have the same number of axes")
        if any(n < 1 for n in cells):
            raise ValueError("cells per axis must be positive")
        if any(not np.isfinite(x) or x <= 0 for x in lengths):
            raise ValueError("lengths per axis must be positive and finite")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "bc", BC.parse(self.bc))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(x / n for x, n in zip(self.lengths, self.cells))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def grad_norm_bound(self) -> float:
        """Upper bound on the operator norm of :func:`grad`."""
        return float(np.sqrt(sum(4.0 / h**2 for h in self.spacing)))

    def face_shapes(self) -> tuple[tuple[int, ...], ...]:
        shapes = []
        for a in range(self.dim):
            s = list(self.cells)
            s[a] += 1
            shapes.append(tuple(s))
        return tuple(shapes)

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates, one array of shape ``self.shape`` per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def with_bc(self, bc: BC | str) -> "Grid":
        return Grid(self.cells, self.lengths, BC.parse(bc))

    def check_same(self, other: "Grid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centered samples of a function in L2 of the box."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {values.size}")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, fn(*grid.centers()))

    def __add__(self, other):
        if isinstance(other, Field):
            self.grid.check_same(other.grid)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + float(other))

    def __sub__(self, other):
        if isinstance(other, Field):
            self.grid.check_same(other.grid)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - float(other))

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def norm(self) -> float:
        return float(np.sqrt(l2_inner(self, self)))


@dataclass(frozen=True, eq=False)
class FaceField:
    """One value per face and axis; ``values[a]`` has ``N_a + 1`` entries along axis ``a``."""

    grid: Grid
    values: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        shapes = self.grid.face_shapes()
        if len(self.values) != len(shapes):
            raise ValueError(f"expected {len(shapes)} face arrays, got {len(self.values)}")
        vals = []
        for v, s in zip(self.values, shapes):
            v = np.asarray(v, dtype=float)
            if v.shape != s:
                raise ValueError(f"face array has shape {v.shape}, expected {s}")
            if not np.all(np.isfinite(v)):
                raise ValueError("face values must be finite")
            vals.append(_frozen(v))
        object.__setattr__(self, "values", tuple(vals))

    @classmethod
    def zeros(cls, grid: Grid) -> "FaceField":
        return cls(grid, tuple(np.zeros(s) for s in grid.face_shapes()))

    def norm(self) -> float:
        return float(np.sqrt(face_inner(self, self)))


# Array-level kernels. The solver loops call these directly to avoid
# re-validating immutable wrappers on every iteration.

def grad_arrays(u: np.ndarray, grid: Grid) -> list[np.ndarray]:
    out = []
    dirichlet = grid.bc is BC.DIRICHLET
    for a, h in enumerate(grid.spacing):
        shape = list(u.shape)
        shape[a] += 1
        g = np.zeros(shape)
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        inner = [slice(None)] * u.ndim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        inner[a] = slice(1, -1)
        g[tuple(inner)] = (u[tuple(hi)] - u[tuple(lo)]) / h
        if dirichlet:
            first = [slice(None)] * u.ndim
            last = [slice(None)] * u.ndim
            first[a] = 0
            last[a] = -1
            g[tuple(first)] = u[tuple(first)] / h
            g[tuple(last)] = -u[tuple(last)] / h
        out.append(g)
    return out


def div_arrays(g: list[np.ndarray] | tuple[np.ndarray, ...], grid: Grid) -> np.ndarray:
    """Negative adjoint of :func:`grad_arrays`.

    In Neumann mode the gradient never writes boundary faces, so the adjoint
    ignores whatever values they hold.
    """
    out = np.zeros(grid.shape)
    dirichlet = grid.bc is BC.DIRICHLET
    for a, (ga, h) in enumerate(zip(g, grid.spacing)):
        if not dirichlet:
            ga = ga.copy()
            first = [slice(None)] * grid.dim
            last = [slice(None)] * grid.dim
            first[a] = 0
            last[a] = -1
            ga[tuple(first)] = 0.0
            ga[tuple(last)] = 0.0
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        out += (ga[tuple(hi)] - ga[tuple(lo)]) / h
    return out


def grad(u: Field) -> FaceField:
    return FaceField(u.grid, tuple(grad_arrays(u.values, u.grid)))


def div(g: FaceField, grid: Grid | None = None) -> Field:
    if grid is not None:
        grid.check_same(g.grid)
    return Field(g.grid, div_arrays(g.values, g.grid))


def l2_inner(a: Field, b: Field) -> float:
    a.grid.check_same(b.grid)
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def face_inner(a: FaceField, b: FaceField) -> float:
    """Face inner product; every face carries the cell volume as weight."""
    a.grid.check_same(b.grid)
    total = sum(float(np.sum(x * y)) for x, y in zip(a.values, b.values))
    return total * a.grid.cell_volume


def boundary_face_mass(u: Field) -> float:
    """Sum of |u| over boundary cells weighted by the boundary face area.

    This is the discrete trace integral that the Dirichlet zero extension
    adds to the total variation.
    """
    grid = u.grid
    total = 0.0
    for a, h in enumerate(grid.spacing):
        area = grid.cell_volume / h
        first = np.take(u.values, 0, axis=a)
        last = np.take(u.values, -1, axis=a)
        total += area * (float(np.sum(np.abs(first))) + float(np.sum(np.abs(last))))
    return total
