"""Backward-Euler resolvent chains for du/dt + dE_p(u) ∋ f."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .energy import EnergySpec
from .geometry import Field, Grid, GridMismatchError
from .prox import ProxNotConverged, ProxParams, ProxReport, resolvent


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError("T must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def tau(self) -> float:
        return self.T / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.tau


class Forcing:
    """Right-hand side ``t -> f(t)``.

    Use the constructors: :meth:`zero`, :meth:`separable` (``g(t) * field``)
    or :meth:`table` (piecewise constant in time).
    """

    def __init__(self, grid: Grid, rule: Callable[[float], Field | None], label: str):
        self.grid = grid
        self._rule = rule
        self.label = label

    def __call__(self, t: float) -> Field | None:
        """The forcing field at time ``t``; ``None`` stands for zero."""
        value = self._rule(float(t))
        if value is not None:
            self.grid.check_same(value.grid)
        return value

    def __repr__(self):
        return f"Forcing({self.label})"

    @classmethod
    def zero(cls, grid: Grid) -> "Forcing":
        return cls(grid, lambda t: None, "zero")

    @classmethod
    def separable(cls, space: Field, g: Callable[[float], float] = lambda t: 1.0,
                  label: str = "separable") -> "Forcing":
        return cls(space.grid, lambda t: space * g(t), label)

    @classmethod
    def table(cls, times: Sequence[float], fields: Sequence[Field],
              label: str = "table") -> "Forcing":
        """``f(t) = fields[j]`` for ``times[j] <= t < times[j+1]``; the last entry
        extends to infinity and ``f`` is zero before ``times[0]``."""
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size == 0 or times.size != len(fields):
            raise ValueError("forcing table needs one field per time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("forcing table times must be strictly increasing")
        grid = fields[0].grid
        for f in fields:
            grid.check_same(f.grid)
        fields = list(fields)

        def rule(t):
            j = int(np.searchsorted(times, t, side="right")) - 1
            return None if j < 0 else fields[j]

        return cls(grid, rule, label)


@dataclass
class Trajectory:
    spec: EnergySpec
    time_grid: TimeGrid
    fields: list[Field]
    reports: list[ProxReport] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times()[: len(self.fields)]

    @property
    def final(self) -> Field:
        return self.fields[-1]

    def states(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    @property
    def accumulated_error(self) -> float:
        """Sum over steps of the per-step distance bound to the exact resolvent.

        The exact resolvent chain is nonexpansive, so this bounds the L2
        distance between the computed and the exact discrete trajectory.
        """
        return float(sum(r.error_bound for r in self.reports))

    @property
    def gaps(self) -> list[float]:
        return [r.final_gap for r in self.reports]


class EvolutionError(RuntimeError):
    def __init__(self, message: str, partial: Trajectory, step: int):
        super().__init__(message)
        self.partial = partial
        self.step = step


def evolve(spec: EnergySpec, x0: Field, f: Forcing | None, tg: TimeGrid,
           params: ProxParams) -> Trajectory:
    """Implicit Euler: ``u[k+1] = resolvent(u[k] + tau f(t[k+1]))``.

    The resolvent step is taken from ``tg``; ``params.tau`` is overridden.
    Each step is warm-started from the previous primal/dual pair.
    """
    spec.grid.check_same(x0.grid)
    if f is not None and f.grid != spec.grid:
        raise GridMismatchError("forcing lives on a different grid")
    params = params.with_tau(tg.tau)
    times = tg.times()
    traj = Trajectory(spec, tg, [x0], [])
    u = x0
    warm = None
    for k in range(tg.steps):
        fk = None if f is None else f(times[k + 1])
        w = u if fk is None else u + fk * tg.tau
        try:
            u, report = resolvent(spec, w, params, warm_start=warm)
        except ProxNotConverged as exc:
            traj.reports.append(exc.report)
            raise EvolutionError(f"step {k + 1}/{tg.steps}: {exc}", traj, k + 1) from exc
        warm = (u, report.dual)
        traj.fields.append(u)
        traj.reports.append(report)
    return traj


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Largest L2 distance between the two trajectories over shared time nodes."""
    a.spec.grid.check_same(b.spec.grid)
    if a.time_grid != b.time_grid or len(a.fields) != len(b.fields):
        raise ValueError("trajectories use different time grids")
    return max(math.sqrt(max(0.0, _sqdist(x, y))) for x, y in zip(a.fields, b.fields))


def _sqdist(x: Field, y: Field) -> float:
    d = x.values - y.values
    return float(np.sum(d * d)) * x.grid.cell_volume
