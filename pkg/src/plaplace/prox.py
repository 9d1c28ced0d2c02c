"""Resolvent of the p-Dirichlet energy via a primal-dual splitting.

The backward-Euler step ``u = argmin_v E_p(v) + |v - w|^2 / (2 tau)`` is
solved as the saddle problem

    min_u max_g  <grad u, g> - E_p^*(g) + |u - w|^2 / (2 tau)

with a first-order primal-dual iteration. The only p-dependent piece is the
radial prox applied to the magnitude of each face group, so one code path
serves every p >= 1. Step sizes are fixed from the gradient norm bound L and
balanced by ``b = 0.5 sqrt(tau)``: primal ``b/L``, dual ``0.99/(b L)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (
    EnergySpec,
    conjugate_from_faces,
    energy_from_faces,
    face_magnitudes,
    group_magnitudes,
)
from . import _kernels
from .geometry import BC, FaceField, Field, div_arrays, grad_arrays

_STEP_SAFETY = 0.99
_BALANCE = 0.5


def _check_prox_args(s, tau, p):
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError("tau must be > 0")
    if not np.isfinite(p) or p < 1:
        raise ValueError("p must be ≥ 1")
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        raise ValueError("s must be finite and ≥ 0")


def prox_power_magnitude(s, tau: float, p: float):
    """Minimizer over rho >= 0 of ``(tau/p) rho^p + (rho - s)^2 / 2``.

    Accepts a scalar or an array of magnitudes ``s``. For p = 1 this is soft
    thresholding. For p > 1 it is the root of ``rho + tau rho^(p-1) = s``,
    found by Newton's method in ``z = log(rho)``: there the residual
    ``exp(z) + tau exp((p-1) z) - s`` is convex and increasing, so Newton
    started from the upper bound ``min(s, (s/tau)^(1/(p-1)))`` descends
    monotonically. Steps leaving the bracket (lower end
    ``min(s/2, (s/2tau)^(1/(p-1)))``) are replaced by bisection. The
    residual's rho-derivative is at least 1, so stopping at
    ``|resid| <= 1e-14 max(1, s)`` bounds the absolute error in rho.
    """
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=float)
    tau = float(tau)
    p = float(p)
    _check_prox_args(s, tau, p)
    if p == 1.0:
        rho = np.maximum(s - tau, 0.0)
    else:
        rho = _kernels.power_root_vec(s, tau, p).reshape(s.shape)
    return float(rho) if scalar else rho


class ProxNotConverged(RuntimeError):
    """Raised when the splitting misses ``gap_tol`` within ``max_iters``."""

    def __init__(self, message: str, report: "ProxReport", u: Field | None = None):
        super().__init__(message)
        self.report = report
        self.u = u


@dataclass(frozen=True)
class ProxParams:
    tau: float
    max_iters: int = 50000
    gap_tol: float = 1e-10
    theta: float = 1.0
    step_balance: float | None = None
    check_every: int = 10
    # optional extra stop rule: relative primal change between gap checks
    step_tol: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError("tau must be > 0")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.step_balance is not None and not self.step_balance > 0:
            raise ValueError("step_balance must be > 0")
        if int(self.check_every) < 1:
            raise ValueError("check_every must be positive")
        if self.step_tol is not None and not self.step_tol > 0:
            raise ValueError("step_tol must be > 0")

    def with_tau(self, tau: float) -> "ProxParams":
        return replace(self, tau=tau)

    def steps(self, grad_norm: float) -> tuple[float, float]:
        """Primal and dual step sizes; their product is ``0.99 / L^2``."""
        b = _BALANCE * math.sqrt(self.tau) if self.step_balance is None else self.step_balance
        return b / grad_norm, _STEP_SAFETY / (b * grad_norm)


@dataclass(frozen=True)
class ProxReport:
    iterations: int
    final_gap: float
    converged: bool
    dual: FaceField | None = field(default=None, repr=False, compare=False)
    error_bound: float = math.nan


def dual_prox(y: list[np.ndarray], grid, sigma: float, p: float) -> list[np.ndarray]:
    """Prox of ``sigma * E_p^*`` via the Moreau identity, group by group."""
    mags = face_magnitudes(y, grid)
    out = []
    for ya, m in zip(y, mags):
        if p == 1.0:
            scale = 1.0 / np.maximum(m, 1.0)
        else:
            rho = prox_power_magnitude(m / sigma, 1.0 / sigma, p)
            scale = np.ones_like(m)
            nz = m > 0
            scale[nz] = 1.0 - sigma * rho[nz] / m[nz]
        out.append(ya * scale)
    return out


def _project_unit(y, grid):
    mags = face_magnitudes(y, grid)
    return [ya / np.maximum(m, 1.0) for ya, m in zip(y, mags)]


def _gap_terms(spec: EnergySpec, w, u, g, tau):
    """Primal-minus-dual value split into two nonnegative pieces.

    primal(u) - dual(g) = [E(grad u) + E^*(g) - <g, grad u>]
                          + |u - w - tau div g|^2 / (2 tau)

    which is algebraically the same as evaluating both objectives, but avoids
    cancelling two large nearly equal numbers near the saddle point.
    """
    grid = spec.grid
    vol = grid.cell_volume
    p = spec.p
    if p == 1.0:
        g = _project_unit(g, grid)
    gu = grad_arrays(u, grid)
    pairing = sum(float(np.sum(a * b)) for a, b in zip(g, gu)) * vol
    fy = energy_from_faces(gu, grid, p) + conjugate_from_faces(g, grid, p) - pairing
    r = u - w - tau * div_arrays(g, grid)
    quad = float(np.sum(r * r)) * vol / (2.0 * tau)
    primal = energy_from_faces(gu, grid, p) + float(np.sum((u - w) ** 2)) * vol / (2.0 * tau)
    return max(fy, 0.0), quad, primal


def pd_gap(spec: EnergySpec, w: Field, u: Field, g: FaceField, tau: float) -> float:
    """Relative primal-dual gap ``(primal(u) - dual(g)) / max(1, |primal(u)|)``.

    Uses the sign convention ``u = w + tau div g`` at the saddle point. For
    p = 1 the dual point is first projected onto the unit ball per group.
    """
    for x in (w, u):
        spec.grid.check_same(x.grid)
    spec.grid.check_same(g.grid)
    fy, quad, primal = _gap_terms(spec, w.values, u.values, list(g.values), float(tau))
    return (fy + quad) / max(1.0, abs(primal))


def _rel_change(u, u_prev) -> float:
    denom = max(float(np.sqrt(np.sum(u * u))), 1e-300)
    return float(np.sqrt(np.sum((u - u_prev) ** 2))) / denom


def _done(gap: float, change: float, params: ProxParams) -> bool:
    if gap > params.gap_tol:
        return False
    return params.step_tol is None or change <= params.step_tol


def iterate_numpy(grid, u, u_bar, y, w, t, sigma, tau, theta, p, n_iter):
    """Reference implementation of ``_kernels.pd_iterate`` on numpy operators."""
    a = 1.0 / (1.0 + t / tau)
    for _ in range(n_iter):
        gu = grad_arrays(u_bar, grid)
        y[:] = dual_prox([ya + sigma * ga for ya, ga in zip(y, gu)], grid, sigma, p)
        if grid.bc is BC.NEUMANN:
            _zero_boundary(y, grid)
        u_new = a * (u + t * div_arrays(y, grid) + (t / tau) * w)
        u_bar[...] = u_new + theta * (u_new - u)
        u[...] = u_new


def _zero_boundary(y, grid):
    for a, ya in enumerate(y):
        idx = [slice(None)] * grid.dim
        idx[a] = 0
        ya[tuple(idx)] = 0.0
        idx[a] = -1
        ya[tuple(idx)] = 0.0


def resolvent(spec: EnergySpec, w: Field, params: ProxParams,
              warm_start: tuple[Field, FaceField] | None = None,
              iterate=_kernels.pd_iterate) -> tuple[Field, ProxReport]:
    """One backward-Euler step: ``argmin_v E_p(v) + |v - w|^2 / (2 tau)``.

    ``warm_start`` is an initial primal/dual pair, typically the previous
    time step's solution and ``report.dual``. ``iterate`` runs a batch of
    primal-dual iterations in place; :func:`iterate_numpy` is the slow
    reference used in tests.
    """
    grid = spec.grid
    grid.check_same(w.grid)
    tau = float(params.tau)
    p = spec.p
    wv = w.values
    if warm_start is None:
        u = wv.copy()
        y = [np.zeros(s) for s in grid.face_shapes()]
    else:
        u0, g0 = warm_start
        grid.check_same(u0.grid)
        grid.check_same(g0.grid)
        u = np.array(u0.values)
        y = [np.array(a) for a in g0.values]
        if p == 1.0:
            y = _project_unit(y, grid)
    y = [np.ascontiguousarray(a, dtype=float) for a in y]
    if grid.bc is BC.NEUMANN:
        _zero_boundary(y, grid)

    t, sigma = params.steps(grid.grad_norm_bound)
    u = np.ascontiguousarray(u, dtype=float)
    u_bar = u.copy()
    gap = math.inf
    scale = 1.0
    change = math.inf
    u_check = u.copy()
    it = 0
    while it < params.max_iters:
        n = min(params.check_every, params.max_iters - it)
        iterate(grid, u, u_bar, y, wv, t, sigma, tau, params.theta, p, n)
        it += n
        fy, quad, primal = _gap_terms(spec, wv, u, y, tau)
        scale = max(1.0, abs(primal))
        gap = (fy + quad) / scale
        if params.step_tol is not None:
            change = _rel_change(u, u_check)
            u_check = u.copy()
        if _done(gap, change, params):
            break

    converged = _done(gap, change, params)
    dual = FaceField(grid, tuple(y))
    # strong convexity (modulus 1/tau) turns the absolute gap into a distance bound
    bound = math.sqrt(2.0 * tau * gap * scale)
    report = ProxReport(it, float(gap), converged, dual, bound)
    field_u = Field(grid, u)
    if not converged:
        raise ProxNotConverged(
            f"resolvent did not reach gap {params.gap_tol:g} in {it} iterations (gap {gap:.3e})",
            report, field_u)
    return field_u, report
