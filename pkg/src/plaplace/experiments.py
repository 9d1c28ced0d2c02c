"""Continuity in the exponent, Mosco-type probes and diagonal selection.

Everything here runs on a fixed grid, where weak and strong L2 convergence
coincide, so the checks reduce to statements about finitely many numbers.
Verdicts are trend and threshold rules; no convergence rate is asserted.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .energy import EnergySpec, energy, energy_from_faces, energy_limit_gap, subgradient
from .flow import EvolutionError, Forcing, TimeGrid, Trajectory, evolve, sup_distance
from .geometry import BC, Field, Grid, grad_arrays
from .prox import ProxParams

DatumRule = Field | Callable[[int], Field]
ForcingRule = Forcing | Callable[[int], Forcing | None] | None


def _pick(rule, n: int):
    """Evaluate a per-run rule; index 0 is the reference run at p0."""
    return rule(n) if callable(rule) and not isinstance(rule, (Field, Forcing)) else rule


# --------------------------------------------------------------------------
# continuity experiment


@dataclass(frozen=True)
class ContinuityConfig:
    """Reference exponent ``p0``, exponents ``p_seq`` and shared discretization.

    ``x0`` and ``forcing`` are either fixed or callables ``n -> value``
    with ``n = 0`` for the reference run and ``n = 1..len(p_seq)`` for the
    others. ``datum_rule`` is a free-form label recorded in reports.
    """

    p0: float
    p_seq: tuple[float, ...]
    grid: Grid
    time_grid: TimeGrid
    params: ProxParams
    x0: DatumRule
    forcing: ForcingRule = None
    tol_abs: float = math.inf
    ratio_min: float = 1.0
    datum_rule: str = "fixed"
    threads: int = 1

    def __post_init__(self):
        p0 = float(self.p0)
        if not (np.isfinite(p0) and p0 >= 1.0):
            raise ValueError("p must be ≥ 1")
        seq = tuple(float(p) for p in self.p_seq)
        if not seq:
            raise ValueError("p_seq must not be empty")
        if any(not (np.isfinite(p) and p > 1.0) for p in seq):
            raise ValueError("every p_n must be finite and > 1")
        dist = np.abs(np.asarray(seq) - p0)
        if np.any(np.diff(dist) > 0):
            raise ValueError("p_seq must approach p0: |p_n - p0| may not increase")
        if not self.tol_abs > 0:
            raise ValueError("tol_abs must be > 0")
        if not self.ratio_min > 0:
            raise ValueError("ratio_min must be > 0")
        if int(self.threads) < 1:
            raise ValueError("threads must be positive")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p_seq", seq)


@dataclass(frozen=True)
class RunResult:
    n: int
    p: float
    distance: float
    runtime_s: float
    converged: bool
    accumulated_error: float
    message: str = ""


@dataclass(frozen=True)
class ContinuityReport:
    p0: float
    bc: BC
    datum_rule: str
    runs: tuple[RunResult, ...]
    reference_error: float
    reference_runtime_s: float
    tol_abs: float
    ratio_min: float

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.runs])

    @property
    def failed(self) -> list[int]:
        return [r.n for r in self.runs if not r.converged]

    def _slack(self, i: int) -> float:
        # d_n is only known up to the solver error of both trajectories
        a, b = self.runs[i], self.runs[i + 1]
        return self.reference_error + a.accumulated_error + b.accumulated_error

    @property
    def tail_decreasing(self) -> bool:
        d = self.distances
        start = max(0, len(d) - 3)
        return all(d[i + 1] <= d[i] + self._slack(i) for i in range(start, len(d) - 1))

    @property
    def ratio(self) -> float:
        d = self.distances
        lo = float(np.min(d))
        return math.inf if lo == 0.0 else float(np.max(d)) / lo

    @property
    def below_tol(self) -> bool:
        return bool(self.distances[-1] <= self.tol_abs)

    @property
    def passed(self) -> bool:
        if self.failed:
            return False
        return self.tail_decreasing and self.below_tol and self.ratio >= self.ratio_min

    def verdict_line(self) -> str:
        if self.failed:
            return f"verdict: FAIL (solver failed for n = {', '.join(map(str, self.failed))})"
        status = "PASS" if self.passed else "FAIL"
        return (f"verdict: {status} tail_decreasing={str(self.tail_decreasing).lower()} "
                f"d_last={self.distances[-1]:.17g} tol_abs={self.tol_abs:.17g} "
                f"ratio={self.ratio:.17g} ratio_min={self.ratio_min:.17g}")

    def to_text(self) -> str:
        lines = [f"# continuity p0={self.p0:.17g} bc={self.bc.value} datum={self.datum_rule}",
                 f"# reference accumulated_error={self.reference_error:.17g} "
                 f"runtime_s={self.reference_runtime_s:.3f}",
                 "n, p_n, d_n, runtime_s, converged"]
        for r in self.runs:
            lines.append(f"{r.n}, {r.p:.17g}, {r.distance:.17g}, {r.runtime_s:.3f}, "
                         f"{str(r.converged).lower()}")
        lines.append(self.verdict_line())
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        """Machine-readable twin of :meth:`to_text`, without wall-clock times."""
        rows = ["n,p_n,d_n,converged,accumulated_error"]
        for r in self.runs:
            rows.append(f"{r.n},{r.p:.17g},{r.distance:.17g},{int(r.converged)},"
                        f"{r.accumulated_error:.17g}")
        return "\n".join(rows) + "\n"


def _run(cfg: ContinuityConfig, n: int, p: float) -> tuple[Trajectory, float]:
    spec = EnergySpec(p, cfg.grid)
    t0 = time.perf_counter()
    traj = evolve(spec, _pick(cfg.x0, n), _pick(cfg.forcing, n), cfg.time_grid, cfg.params)
    return traj, time.perf_counter() - t0


def run_continuity(cfg: ContinuityConfig) -> ContinuityReport:
    """Evolve at ``p0`` and at every ``p_n``; record sup-in-time distances.

    A failure of the reference run raises :class:`EvolutionError`. A failure
    at some ``n`` is recorded (distance ``nan``) and the others still run.
    Runs for different ``n`` are independent and use ``cfg.threads``
    threads; results are assembled in index order, so the report does not
    depend on scheduling.
    """
    ref, ref_time = _run(cfg, 0, cfg.p0)

    def one(item):
        n, p = item
        try:
            traj, dt = _run(cfg, n, p)
        except EvolutionError as exc:
            return RunResult(n, p, math.nan, math.nan, False, math.nan, str(exc))
        return RunResult(n, p, sup_distance(ref, traj), dt, True, traj.accumulated_error)

    items = list(enumerate(cfg.p_seq, start=1))
    if cfg.threads == 1:
        runs = [one(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(one, items))
    return ContinuityReport(cfg.p0, cfg.grid.bc, cfg.datum_rule, tuple(runs),
                            ref.accumulated_error, ref_time, cfg.tol_abs, cfg.ratio_min)


def perturbed_datum(x0: Field, p0: float, p_seq: Sequence[float], delta: float,
                    seed: int = 0) -> Callable[[int], Field]:
    """Data ``x_n = x0 + delta |p_n - p0| e`` with one fixed random unit field ``e``.

    ``x_n -> x0`` as ``p_n -> p0``; index 0 returns ``x0`` itself.
    """
    rng = np.random.default_rng(seed)
    e = Field(x0.grid, rng.standard_normal(x0.grid.shape))
    e = e * (1.0 / e.norm())

    def rule(n: int) -> Field:
        if n == 0:
            return x0
        return x0 + e * (delta * abs(p_seq[n - 1] - p0))

    return rule


# --------------------------------------------------------------------------
# Mosco probes


def mosco_m2_check(u: Field, p_seq: Sequence[float], bc: BC | str | None = None,
                   p0: float = 1.0) -> list[float]:
    """Recovery-sequence gaps ``|E_{p_n}(u) - E_{p0}(u)|`` for the constant sequence."""
    return energy_limit_gap(u, p_seq, bc, p0)


@dataclass(frozen=True)
class M1Verdict:
    passed: bool
    tail_min: float
    limit_energy: float
    slack: float

    def __bool__(self):
        return self.passed


def mosco_m1_check(samples: Sequence[tuple[float, Field]], u: Field,
                   p0: float = 1.0) -> M1Verdict:
    """Lower-bound test ``min_tail E_{p_n}(u_n) >= E_{p0}(u) - slack``.

    The tail is the second half of the samples and the slack is
    ``1e-8`` plus the spread (max - min) of the energies over the tail.
    """
    if len(samples) < 4:
        raise ValueError("mosco_m1_check needs at least 4 samples")
    limit = energy(EnergySpec(p0, u.grid), u)
    tail = samples[len(samples) // 2:]
    values = np.array([energy(EnergySpec(p, un.grid), un) for p, un in tail])
    slack = 1e-8 + float(values.max() - values.min())
    tail_min = float(values.min())
    return M1Verdict(tail_min >= limit - slack, tail_min, limit, slack)


@dataclass(frozen=True)
class Falsification:
    trials: int
    violations: int
    rule_failures: int

    @property
    def clean(self) -> bool:
        return self.violations == 0 and self.rule_failures == 0


def falsify_m1(grid: Grid, trials: int = 1000, seed: int = 0, samples: int = 60,
               drop: float = 0.1) -> Falsification:
    """Random search for sequences ``u_n -> u``, ``p_n -> p0`` that break the
    liminf inequality.

    Each trial draws a field ``u``, a limit exponent ``p0`` in [1, 3] and a
    direction ``v``; odd trials use the steepest-descent direction of the
    energy, the cheapest way to lower it. The sequence is
    ``u_n = u + r_n v`` with ``r_n ~ 2^-n`` and ``p_n = p0 + c 2^-n``.
    A violation is a trial whose whole tail (second half) stays below
    ``E_{p0}(u) - drop``. ``rule_failures`` counts trials where
    :func:`mosco_m1_check` says FAIL.
    """
    rng = np.random.default_rng(seed)
    violations = rule_failures = 0
    for trial in range(trials):
        u = Field(grid, rng.standard_normal(grid.shape) * rng.uniform(0.1, 2.0))
        p0 = 1.0 if trial % 4 == 0 else float(rng.uniform(1.0, 3.0))
        if trial % 2 and p0 > 1.0:
            v = -subgradient(EnergySpec(p0, grid), u).values
        else:
            v = rng.standard_normal(grid.shape)
        norm = Field(grid, v).norm()
        v = v / norm if norm > 0 else v
        side = rng.uniform(-min(p0 - 1.0, 0.5), 0.5)
        seq = []
        for n in range(1, samples + 1):
            r = rng.uniform(0.5, 1.0) * 2.0**-n
            seq.append((max(1.0, p0 + side * 2.0**-n), Field(grid, u.values + r * v)))
        verdict = mosco_m1_check(seq, u, p0)
        rule_failures += not verdict.passed
        tail = seq[len(seq) // 2:]
        worst = max(energy(EnergySpec(p, grid), un) for p, un in tail)
        violations += worst < verdict.limit_energy - drop
    return Falsification(trials, violations, rule_failures)


# --------------------------------------------------------------------------
# diagonal selection


@dataclass(frozen=True)
class DiagonalTable:
    """``a[n-1, m-1]`` holds a_{n,m}; ``b[m-1]`` the estimated limit in n.

    Entries may be ``+inf`` or ``-inf``. Without ``b`` the last row is used.
    """

    a: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 2:
            raise ValueError("a diagonal table needs at least 2 x 2 entries")
        if np.any(np.isnan(a)):
            raise ValueError("table entries must be real or ±inf")
        b = a[-1].copy() if self.b is None else np.array(self.b, dtype=float)
        if b.shape != (a.shape[1],) or np.any(np.isnan(b)):
            raise ValueError("b needs one real or ±inf value per column")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape


@dataclass(frozen=True)
class DiagonalSelection:
    """``m[n-1]`` is m(n) (0 = nothing selected); ``settle[m-1]`` is N(m),
    0 when column m never settles inside the table."""

    m: np.ndarray
    settle: np.ndarray
    eps: np.ndarray

    def diagonal(self, tbl: DiagonalTable) -> np.ndarray:
        """a_{n,m(n)}, ``nan`` where m(n) = 0."""
        out = np.full(len(self.m), np.nan)
        for i, m in enumerate(self.m):
            if m:
                out[i] = tbl.a[i, m - 1]
        return out


def _distance(a: np.ndarray, b: float) -> np.ndarray:
    # equal infinities are at distance zero
    with np.errstate(invalid="ignore"):
        d = np.abs(a - b)
    d[a == b] = 0.0
    return d


def diagonal_select(tbl: DiagonalTable,
                    eps: Sequence[float] | Callable[[int], float] | None = None) -> DiagonalSelection:
    """Pick m(n) so that the diagonal a_{n,m(n)} tracks the column limits.

    N(m) is the first row from which ``|a_{n,m} - b_m| <= eps_m`` for every
    later row. m(n) is the largest m with ``N(m') <= n`` for all m' <= m,
    capped at n; it is nondecreasing. The default schedule is eps_m = 1/m.
    """
    rows, cols = tbl.shape
    if eps is None:
        eps_arr = 1.0 / np.arange(1, cols + 1)
    elif callable(eps):
        eps_arr = np.array([eps(m) for m in range(1, cols + 1)], dtype=float)
    else:
        eps_arr = np.asarray(eps, dtype=float)
    if eps_arr.shape != (cols,) or np.any(~(eps_arr > 0)):
        raise ValueError("eps needs one positive value per column")
    if np.any(np.diff(eps_arr) > 0):
        raise ValueError("eps must be nonincreasing")

    settle = np.zeros(cols, dtype=int)
    for j in range(cols):
        ok = _distance(tbl.a[:, j], tbl.b[j]) <= eps_arr[j]
        if not ok[-1]:
            continue
        bad = np.flatnonzero(~ok)
        settle[j] = 1 if bad.size == 0 else bad[-1] + 2

    m = np.zeros(rows, dtype=int)
    for i in range(rows):
        n = i + 1
        k = 0
        while k < min(n, cols) and settle[k] != 0 and settle[k] <= n:
            k += 1
        m[i] = k
    return DiagonalSelection(m, settle, eps_arr)


def mollify(u: Field, width: float) -> Field:
    """Gaussian smoothing with standard deviation ``width`` (domain units).

    Dirichlet grids smooth the zero extension, Neumann grids the even
    reflection. ``width = 0`` returns ``u``.
    """
    if width < 0:
        raise ValueError("width must be ≥ 0")
    if width == 0:
        return u
    grid = u.grid
    mode = "constant" if grid.bc is BC.DIRICHLET else "reflect"
    sigma = [width / h for h in grid.spacing]
    return Field(grid, ndimage.gaussian_filter(u.values, sigma, mode=mode, cval=0.0))


def mollified_table(u: Field, p_seq: Sequence[float], widths: Sequence[float],
                    p0: float = 1.0) -> DiagonalTable:
    """a_{n,m} = E_{p_n}(u_m) for u_m = mollify(u, widths[m]); b_m = E_{p0}(u_m)."""
    family = [mollify(u, w) for w in widths]
    grads = [grad_arrays(f.values, u.grid) for f in family]
    a = np.array([[energy_from_faces(g, u.grid, float(p)) for g in grads] for p in p_seq])
    b = np.array([energy_from_faces(g, u.grid, float(p0)) for g in grads])
    return DiagonalTable(a, b)
