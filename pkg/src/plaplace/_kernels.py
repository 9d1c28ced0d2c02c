"""Compiled inner loops for the primal-dual resolvent iteration.

These mirror ``geometry.grad_arrays`` / ``geometry.div_arrays`` and the face
grouping of ``energy.group_magnitudes`` index by index. They are plain
sequential loops (no ``parallel``/``fastmath``), so results are
bit-reproducible. Convergence is always certified outside, with the numpy
operators, so a kernel defect would show up as a gap that does not close.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_LN2 = math.log(2.0)
_MAX_NEWTON = 200


@numba.njit(cache=True, nogil=True)
def power_root(s, tau, p):
    """Root of ``rho + tau rho^(p-1) = s`` for s > 0, p > 1 (see prox module)."""
    if p == 2.0:
        # the equation is linear; this is the Newton fixed point, not a separate model
        return s / (1.0 + tau)
    e = p - 1.0
    log_s = math.log(s)
    log_tau = math.log(tau)
    hi = min(log_s, (log_s - log_tau) / e)
    lo = min(log_s - _LN2, (log_s - _LN2 - log_tau) / e)
    tol = 1e-14 * max(1.0, s)
    z = hi
    for _ in range(_MAX_NEWTON):
        rho = math.exp(z)
        t2 = tau * math.exp(e * z)
        r = rho + t2 - s
        if abs(r) <= tol:
            break
        if r < 0.0:
            lo = z
        elif r > 0.0:
            hi = z
        nxt = z - r / (rho + e * t2)
        if nxt < lo or nxt > hi or not math.isfinite(nxt):
            nxt = 0.5 * (lo + hi)
        if nxt == z:
            break
        z = nxt
    # exp(log(s)) can round just above s; the root never exceeds s
    return min(math.exp(z), s)


@numba.njit(cache=True, nogil=True)
def power_root_array(s, tau, p, out):
    for i in range(s.size):
        out[i] = power_root(s[i], tau, p) if s[i] > 0.0 else 0.0


@numba.njit(cache=True, nogil=True)
def _radial_scale(m, sigma, p):
    """Factor applied to a dual group of magnitude m by prox of sigma*E^*."""
    if p == 1.0:
        return 1.0 / max(m, 1.0)
    if m <= 0.0:
        return 1.0
    rho = power_root(m / sigma, 1.0 / sigma, p)
    return 1.0 - sigma * rho / m


@numba.njit(cache=True, nogil=True)
def pd_iterate_1d(u, ubar, y, w, h, dirichlet, t, sigma, tau, theta, p, n_iter):
    n = u.size
    a = 1.0 / (1.0 + t / tau)
    c = t / tau
    for _ in range(n_iter):
        for f in range(n + 1):
            if f == 0:
                g = ubar[0] / h if dirichlet else 0.0
            elif f == n:
                g = -ubar[n - 1] / h if dirichlet else 0.0
            else:
                g = (ubar[f] - ubar[f - 1]) / h
            yb = y[f] + sigma * g
            if not dirichlet and (f == 0 or f == n):
                y[f] = 0.0
            else:
                y[f] = yb * _radial_scale(abs(yb), sigma, p)
        for i in range(n):
            d = (y[i + 1] - y[i]) / h
            un = a * (u[i] + t * d + c * w[i])
            ubar[i] = un + theta * (un - u[i])
            u[i] = un


@numba.njit(cache=True, nogil=True)
def pd_iterate_2d(u, ubar, yx, yy, w, hx, hy, dirichlet, t, sigma, tau, theta, p, n_iter):
    nx, ny = u.shape
    a = 1.0 / (1.0 + t / tau)
    c = t / tau
    for _ in range(n_iter):
        # ascent step on every face
        for i in range(nx + 1):
            for j in range(ny):
                if i == 0:
                    g = ubar[0, j] / hx if dirichlet else 0.0
                elif i == nx:
                    g = -ubar[nx - 1, j] / hx if dirichlet else 0.0
                else:
                    g = (ubar[i, j] - ubar[i - 1, j]) / hx
                yx[i, j] += sigma * g
        for i in range(nx):
            for j in range(ny + 1):
                if j == 0:
                    g = ubar[i, 0] / hy if dirichlet else 0.0
                elif j == ny:
                    g = -ubar[i, ny - 1] / hy if dirichlet else 0.0
                else:
                    g = (ubar[i, j] - ubar[i, j - 1]) / hy
                yy[i, j] += sigma * g
        # radial prox, interior groups: cell (i, j) owns faces x[i+1, j], y[i, j+1]
        for i in range(nx):
            for j in range(ny):
                bx = yx[i + 1, j] if i < nx - 1 else 0.0
                by = yy[i, j + 1] if j < ny - 1 else 0.0
                s = _radial_scale(math.sqrt(bx * bx + by * by), sigma, p)
                if i < nx - 1:
                    yx[i + 1, j] = bx * s
                if j < ny - 1:
                    yy[i, j + 1] = by * s
        # boundary faces are singleton groups
        for j in range(ny):
            for i in (0, nx):
                if dirichlet:
                    yx[i, j] *= _radial_scale(abs(yx[i, j]), sigma, p)
                else:
                    yx[i, j] = 0.0
        for i in range(nx):
            for j in (0, ny):
                if dirichlet:
                    yy[i, j] *= _radial_scale(abs(yy[i, j]), sigma, p)
                else:
                    yy[i, j] = 0.0
        # descent step on cells
        for i in range(nx):
            for j in range(ny):
                d = (yx[i + 1, j] - yx[i, j]) / hx + (yy[i, j + 1] - yy[i, j]) / hy
                un = a * (u[i, j] + t * d + c * w[i, j])
                ubar[i, j] = un + theta * (un - u[i, j])
                u[i, j] = un


def pd_iterate(grid, u, ubar, y, w, t, sigma, tau, theta, p, n_iter):
    """Run ``n_iter`` primal-dual iterations in place on ``u``, ``ubar``, ``y``."""
    dirichlet = grid.bc.value == "dirichlet"
    if grid.dim == 1:
        pd_iterate_1d(u, ubar, y[0], w, grid.spacing[0], dirichlet,
                      t, sigma, tau, theta, p, n_iter)
    else:
        pd_iterate_2d(u, ubar, y[0], y[1], w, grid.spacing[0], grid.spacing[1], dirichlet,
                      t, sigma, tau, theta, p, n_iter)


def power_root_vec(s: np.ndarray, tau: float, p: float) -> np.ndarray:
    s = np.ascontiguousarray(s, dtype=float).ravel()
    out = np.empty_like(s)
    power_root_array(s, float(tau), float(p), out)
    return out
