"""Command-line front end.

Usage::

    plaplace COMMAND CONFIG [--out DIR] [--quiet] [--threads K]

COMMAND is one of ``evolve``, ``continuity``, ``mosco`` or ``diagonal``.
CONFIG is UTF-8 text with one ``key = value`` per line and ``#`` comments;
unknown keys are rejected. Exit codes: 0 success, 1 invalid input, 2 solver
did not converge, 3 an experiment verdict failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import artifacts
from .energy import EnergySpec, energy
from .experiments import (
    ContinuityConfig,
    DiagonalTable,
    diagonal_select,
    falsify_m1,
    mollified_table,
    mosco_m1_check,
    mosco_m2_check,
    perturbed_datum,
    run_continuity,
)
from .flow import EvolutionError, Forcing, TimeGrid, evolve
from .geometry import BC, Field, Grid
from .prox import ProxNotConverged, ProxParams

log = logging.getLogger("plaplace")

COMMANDS = ("evolve", "continuity", "mosco", "diagonal")
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_VERDICT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# value parsers; each raises ValueError with a message naming the problem


def _float(key: str, s: str) -> float:
    try:
        x = float(s)
    except ValueError:
        raise ValueError(f"{key}: malformed number {s!r}") from None
    if math.isnan(x):
        raise ValueError(f"{key}: malformed number {s!r}")
    return x


def _int(key: str, s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"{key}: malformed integer {s!r}") from None


def _positive(parse):
    def inner(key, s):
        x = parse(key, s)
        if not x > 0:
            raise ValueError(f"{key} must be > 0")
        return x
    return inner


def _exponent(key: str, s: str) -> float:
    p = _float(key, s)
    if not (math.isfinite(p) and p >= 1.0):
        raise ValueError(f"{key} must be ≥ 1")
    return p


def _list(parse):
    def inner(key, s):
        parts = [x for x in s.replace(",", " ").split() if x]
        if not parts:
            raise ValueError(f"{key}: empty list")
        return tuple(parse(key, x) for x in parts)
    return inner


def _words(key: str, s: str) -> tuple[str, ...]:
    parts = tuple(s.split())
    if not parts:
        raise ValueError(f"{key}: empty value")
    return parts


_DATA_ARITY = {"zero": 0, "constant": 1, "sine": 1, "indicator": 2, "file": 1}


def _datum(key: str, s: str) -> tuple:
    kind, *args = _words(key, s)
    if kind not in _DATA_ARITY or (key == "forcing" and kind == "indicator"):
        raise ValueError(f"{key}: unknown rule {kind!r}")
    if len(args) != _DATA_ARITY[kind]:
        raise ValueError(f"{key}: '{kind}' takes {_DATA_ARITY[kind]} argument(s)")
    if kind == "file":
        return (kind, args[0])
    if kind == "sine":
        k = _int(key, args[0])
        if k < 1:
            raise ValueError(f"{key}: sine mode must be ≥ 1")
        return (kind, k)
    return (kind, *(_float(key, a) for a in args))


def _p_seq(key: str, s: str) -> tuple:
    words = _words(key, s)
    if words[0] in ("dyadic", "alternating", "harmonic"):
        if len(words) != 2:
            raise ValueError(f"{key}: '{words[0]}' takes a count")
        n = _int(key, words[1])
        if n < 1:
            raise ValueError(f"{key}: count must be ≥ 1")
        return (words[0], n)
    return ("list", _list(_float)(key, s))


def _choice(*options):
    def inner(key, s):
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"{key}: expected one of {', '.join(options)}")
        return v
    return inner


def _table(key: str, s: str) -> tuple:
    kind, *args = _words(key, s)
    if kind == "harmonic" and len(args) == 2:
        n, m = (_int(key, a) for a in args)
        if n < 2 or m < 2:
            raise ValueError(f"{key}: table needs at least 2 x 2 entries")
        return (kind, n, m)
    if kind == "mollified" and len(args) == 1:
        m = _int(key, args[0])
        if m < 2:
            raise ValueError(f"{key}: table needs at least 2 columns")
        return (kind, m)
    if kind == "file" and len(args) == 1:
        return (kind, args[0])
    raise ValueError(f"{key}: expected 'harmonic N M', 'mollified M' or 'file PATH'")


def _tol(key, s):
    x = _float(key, s)
    if not x > 0:
        raise ValueError(f"{key} must be > 0")
    return x


_PARSERS: dict[str, Callable[[str, str], object]] = {
    "dim": _positive(_int),
    "cells": _list(_positive(_int)),
    "length": _list(_positive(_float)),
    "bc": lambda k, s: BC.parse(s),
    "p": _exponent,
    "T": _positive(_float),
    "steps": _positive(_int),
    "tau": _positive(_float),
    "initial": _datum,
    "forcing": _datum,
    "max_iters": _positive(_int),
    "gap_tol": _positive(_float),
    "output": lambda k, s: s,
    "seed": _int,
    "p0": _exponent,
    "p_seq": _p_seq,
    "datum": _choice("fixed", "perturbed"),
    "perturbation": _positive(_float),
    "tol_abs": _tol,
    "ratio_min": _tol,
    "trials": _positive(_int),
    "table": _table,
}

_REQUIRED = {
    "evolve": ("cells", "p", "T", "initial"),
    "continuity": ("cells", "p0", "p_seq", "T", "initial"),
    "mosco": ("cells", "p0", "p_seq", "initial"),
    "diagonal": ("table",),
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict = field(repr=False)
    lines: dict = field(repr=False)
    text: str = field(repr=False)
    base_dir: Path = Path(".")

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def grid(self) -> Grid:
        cells = self["cells"]
        dim = self.get("dim", len(cells))
        if dim not in (1, 2):
            raise self._error("dim", "dim must be 1 or 2")
        if len(cells) == 1:
            cells = cells * dim
        if len(cells) != dim:
            raise self._error("cells", f"cells lists {len(cells)} axes but dim = {dim}")
        lengths = self.get("length", (1.0,))
        if len(lengths) == 1:
            lengths = lengths * dim
        if len(lengths) != dim:
            raise self._error("length", f"length lists {len(lengths)} axes but dim = {dim}")
        return Grid(cells, lengths, self.get("bc", BC.DIRICHLET))

    @property
    def time_grid(self) -> TimeGrid:
        T = self["T"]
        if "steps" in self.values:
            return TimeGrid(T, self["steps"])
        ratio = T / self["tau"]
        steps = round(ratio)
        if steps < 1 or abs(ratio - steps) > 1e-9 * ratio:
            raise self._error("tau", "T / tau must be a positive integer")
        return TimeGrid(T, steps)

    def params(self, tau: float = 1.0) -> ProxParams:
        return ProxParams(tau, max_iters=self.get("max_iters", 50000),
                          gap_tol=self.get("gap_tol", 1e-10))

    @property
    def p_seq(self) -> tuple[float, ...]:
        kind, arg = self["p_seq"]
        p0 = self["p0"]
        if kind == "list":
            return arg
        n = np.arange(1, arg + 1)
        if kind == "dyadic":
            seq = p0 + 2.0**-n
        elif kind == "harmonic":
            seq = p0 + 1.0 / n
        else:
            seq = p0 + (-1.0) ** n / (n + 2)
        return tuple(float(p) for p in seq)

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def _error(self, key: str, message: str) -> ConfigError:
        line = self.lines.get(key)
        where = f"line {line}: " if line else ""
        return ConfigError(f"{where}{message}")


def parse_config(text: str, command: str = "evolve", base_dir: Path | str = ".") -> RunConfig:
    """Parse and validate a ``key = value`` config for ``command``."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values: dict = {}
    lines: dict = {}
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {num}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {num}: duplicate key '{key}'")
        if not value:
            raise ConfigError(f"line {num}: {key}: missing value")
        try:
            values[key] = _PARSERS[key](key, value)
        except ValueError as exc:
            raise ConfigError(f"line {num}: {exc}") from None
        lines[key] = num

    required = list(_REQUIRED[command])
    if command == "diagonal" and values.get("table", ("",))[0] == "mollified":
        required += ["cells", "p0", "p_seq", "initial"]
    if command in ("evolve", "continuity"):
        if "steps" in values and "tau" in values:
            raise ConfigError(f"line {lines['tau']}: give steps or tau, not both")
        if "steps" not in values and "tau" not in values:
            raise ConfigError("missing required key 'steps' (or 'tau')")
    for key in required:
        if key not in values:
            raise ConfigError(f"missing required key '{key}'")

    cfg = RunConfig(command, values, lines, text, Path(base_dir))
    # resolve derived objects now so that every problem surfaces as a ConfigError
    try:
        if "cells" in values:
            cfg.grid
        if "T" in values:
            cfg.time_grid
        if "p_seq" in values:
            _check_p_seq(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _check_p_seq(cfg: RunConfig) -> None:
    if "p0" not in cfg.values:
        raise cfg._error("p_seq", "p_seq needs p0")
    seq = np.array(cfg.p_seq)
    if np.any(seq <= 1.0):
        raise cfg._error("p_seq", "p_seq entries must be > 1")
    if np.any(np.diff(np.abs(seq - cfg["p0"])) > 0):
        raise cfg._error("p_seq", "p_seq must approach p0")


# --------------------------------------------------------------------------
# data rules


def build_datum(rule: tuple, grid: Grid, cfg: RunConfig, key: str) -> Field | None:
    kind, *args = rule
    if kind == "zero":
        return Field.zeros(grid)
    if kind == "constant":
        return Field.constant(grid, args[0])
    if kind == "sine":
        k = args[0]
        vals = np.ones(grid.shape)
        for c, length in zip(grid.centers(), grid.lengths):
            vals = vals * np.sin(k * np.pi * c / length)
        return Field(grid, vals)
    if kind == "indicator":
        a, b = args
        inside = np.ones(grid.shape, dtype=bool)
        for c in grid.centers():
            inside &= (c >= a) & (c <= b)
        return Field(grid, inside.astype(float))
    path = cfg.path(args[0])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise cfg._error(key, f"{key}: cannot read {path}: {exc.strerror}") from None
    try:
        return artifacts.read_field_csv(text, grid)
    except ValueError as exc:
        raise cfg._error(key, f"{key}: {path}: {exc}") from None


def build_forcing(cfg: RunConfig, grid: Grid) -> Forcing | None:
    rule = cfg.get("forcing", ("zero",))
    if rule[0] == "zero":
        return None
    if rule[0] == "file":
        path = cfg.path(rule[1])
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise cfg._error("forcing", f"forcing: cannot read {path}: {exc.strerror}") from None
        try:
            return artifacts.read_forcing_csv(text, grid)
        except ValueError as exc:
            raise cfg._error("forcing", f"forcing: {path}: {exc}") from None
    space = build_datum(rule, grid, cfg, "forcing")
    return Forcing.separable(space, label=" ".join(map(str, rule)))


# --------------------------------------------------------------------------
# commands


@dataclass
class Outcome:
    code: int
    files: list[Path]
    summary: str


def _header(cfg: RunConfig, threads: int, config_path: str) -> list:
    return [("run", [("command", cfg.command), ("config", config_path),
                     ("threads", threads), ("seed", cfg.get("seed", 0))]),
            ("config", [(f"line {i}", ln) for i, ln in enumerate(cfg.text.splitlines(), 1)
                        if ln.split("#", 1)[0].strip()])]


def _grid_items(grid: Grid) -> list:
    return [("cells", " ".join(map(str, grid.cells))),
            ("length", " ".join(artifacts.fmt(x) for x in grid.lengths)),
            ("bc", grid.bc.value)]


def _time_items(tg: TimeGrid, params: ProxParams) -> list:
    return [("T", tg.T), ("steps", tg.steps), ("tau", tg.tau),
            ("max_iters", params.max_iters), ("gap_tol", params.gap_tol)]


def cmd_evolve(cfg: RunConfig, out: Path, threads: int, config_path: str) -> Outcome:
    grid, tg = cfg.grid, cfg.time_grid
    spec = EnergySpec(cfg["p"], grid)
    x0 = build_datum(cfg["initial"], grid, cfg, "initial")
    params = cfg.params(tg.tau)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        traj = evolve(spec, x0, build_forcing(cfg, grid), tg, params)
    except EvolutionError as exc:
        log.error("%s", exc)
        traj, code = exc.partial, EXIT_SOLVER
    runtime = time.perf_counter() - t0
    files = [artifacts.write_text(out / "trajectory.csv", artifacts.trajectory_csv(traj)),
             artifacts.write_text(out / "final.csv", artifacts.field_csv(traj.final))]
    sections = _header(cfg, threads, config_path) + [
        ("resolved", [("p", spec.p), *_grid_items(grid), *_time_items(tg, params),
                      ("completed_steps", len(traj.reports)), ("runtime_s", f"{runtime:.3f}")]),
        ("steps", [(f"step {k}", f"gap={artifacts.fmt(r.final_gap)} iterations={r.iterations} "
                                 f"converged={str(r.converged).lower()}")
                   for k, r in enumerate(traj.reports, 1)]),
    ]
    files.append(artifacts.write_text(out / "manifest.txt", artifacts.manifest(sections)))
    summary = (f"evolve p={spec.p:g} steps={len(traj.reports)}/{tg.steps} "
               f"final_norm={traj.final.norm():.6g} max_gap={max(traj.gaps, default=0):.3g}")
    return Outcome(code, files, summary)


def cmd_continuity(cfg: RunConfig, out: Path, threads: int, config_path: str) -> Outcome:
    grid, tg = cfg.grid, cfg.time_grid
    p0, p_seq = cfg["p0"], cfg.p_seq
    x0 = build_datum(cfg["initial"], grid, cfg, "initial")
    rule = cfg.get("datum", "fixed")
    if rule == "perturbed":
        datum = perturbed_datum(x0, p0, p_seq, cfg.get("perturbation", 1.0), cfg.get("seed", 0))
        label = f"perturbed delta={artifacts.fmt(cfg.get('perturbation', 1.0))} seed={cfg.get('seed', 0)}"
    else:
        datum, label = x0, "fixed"
    params = cfg.params(tg.tau)
    ccfg = ContinuityConfig(p0, p_seq, grid, tg, params, datum, build_forcing(cfg, grid),
                            tol_abs=cfg.get("tol_abs", math.inf),
                            ratio_min=cfg.get("ratio_min", 1.0),
                            datum_rule=label, threads=threads)
    t0 = time.perf_counter()
    report = run_continuity(ccfg)
    runtime = time.perf_counter() - t0
    files = [artifacts.write_text(out / "continuity.txt", report.to_text()),
             artifacts.write_text(out / "continuity.csv", report.to_csv())]
    sections = _header(cfg, threads, config_path) + [
        ("resolved", [("p0", p0), ("p_seq", " ".join(artifacts.fmt(p) for p in p_seq)),
                      *_grid_items(grid), *_time_items(tg, params), ("datum", label),
                      ("runtime_s", f"{runtime:.3f}")]),
    ]
    files.append(artifacts.write_text(out / "manifest.txt", artifacts.manifest(sections)))
    for r in report.runs:
        if not r.converged:
            log.error("n=%d p=%g: %s", r.n, r.p, r.message)
    code = EXIT_SOLVER if report.failed else (EXIT_OK if report.passed else EXIT_VERDICT)
    return Outcome(code, files, report.to_text().rstrip())


def cmd_mosco(cfg: RunConfig, out: Path, threads: int, config_path: str) -> Outcome:
    grid = cfg.grid
    p0, p_seq = cfg["p0"], cfg.p_seq
    u = build_datum(cfg["initial"], grid, cfg, "initial")
    seed = cfg.get("seed", 0)
    gaps = mosco_m2_check(u, p_seq, p0=p0)
    rng = np.random.default_rng(seed)
    noise = Field(grid, rng.standard_normal(grid.shape))
    noise = noise * (cfg.get("perturbation", 1.0) / noise.norm())
    samples = [(p, u + noise * (1.0 / n)) for n, p in enumerate(p_seq, 1)]
    sample_energy = [energy(EnergySpec(p, grid), un) for p, un in samples]
    if len(samples) >= 4:
        m1 = mosco_m1_check(samples, u, p0)
        m1_line = (f"m1: {'PASS' if m1 else 'FAIL'} tail_min={artifacts.fmt(m1.tail_min)} "
                   f"limit={artifacts.fmt(m1.limit_energy)} slack={artifacts.fmt(m1.slack)}")
        m1_ok = m1.passed
    else:
        m1_line, m1_ok = "m1: SKIPPED (needs at least 4 exponents)", True
    fals = falsify_m1(grid, trials=cfg.get("trials", 1000), seed=seed)
    passed = m1_ok and fals.clean
    csv_rows = ["n,p_n,m2_gap,m1_energy"] + [
        f"{n},{artifacts.fmt(p)},{artifacts.fmt(g)},{artifacts.fmt(e)}"
        for n, (p, g, e) in enumerate(zip(p_seq, gaps, sample_energy), 1)]
    text = [f"# mosco p0={artifacts.fmt(p0)} bc={grid.bc.value}", "n, p_n, m2_gap, m1_energy"]
    text += [row.replace(",", ", ") for row in csv_rows[1:]]
    text += [m1_line,
             f"falsification: trials={fals.trials} violations={fals.violations} "
             f"rule_failures={fals.rule_failures}",
             f"verdict: {'PASS' if passed else 'FAIL'}"]
    files = [artifacts.write_text(out / "mosco.txt", "\n".join(text) + "\n"),
             artifacts.write_text(out / "mosco.csv", "\n".join(csv_rows) + "\n")]
    sections = _header(cfg, threads, config_path) + [
        ("resolved", [("p0", p0), ("p_seq", " ".join(artifacts.fmt(p) for p in p_seq)),
                      *_grid_items(grid), ("trials", fals.trials)])]
    files.append(artifacts.write_text(out / "manifest.txt", artifacts.manifest(sections)))
    return Outcome(EXIT_OK if passed else EXIT_VERDICT, files, "\n".join(text))


def _load_table(cfg: RunConfig) -> DiagonalTable:
    kind, *args = cfg["table"]
    if kind == "harmonic":
        n, m = args
        a = 1.0 / np.arange(1, n + 1)[:, None] + 1.0 / np.arange(1, m + 1)[None, :]
        return DiagonalTable(a, 1.0 / np.arange(1, m + 1))
    if kind == "mollified":
        grid = cfg.grid
        u = build_datum(cfg["initial"], grid, cfg, "initial")
        widths = [0.25 * min(grid.lengths) / k for k in range(1, args[0] + 1)]
        return mollified_table(u, cfg.p_seq, widths, cfg["p0"])
    path = cfg.path(args[0])
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise cfg._error("table", f"table: cannot read {path}: {exc}") from None
    try:
        return DiagonalTable(a)
    except ValueError as exc:
        raise cfg._error("table", f"table: {path}: {exc}") from None


def cmd_diagonal(cfg: RunConfig, out: Path, threads: int, config_path: str) -> Outcome:
    tbl = _load_table(cfg)
    sel = diagonal_select(tbl)
    diag = sel.diagonal(tbl)
    floor = float(np.min(tbl.b))
    chosen = sel.m > 0
    bound_ok = bool(np.all(diag[chosen] >= floor - sel.eps[sel.m[chosen] - 1]))
    monotone = bool(np.all(np.diff(sel.m) >= 0))
    passed = bound_ok and monotone
    csv_rows = ["n,m_n,a_diag"] + [f"{n},{m},{artifacts.fmt(d)}"
                                   for n, (m, d) in enumerate(zip(sel.m, diag), 1)]
    text = [f"# diagonal rows={tbl.shape[0]} cols={tbl.shape[1]}", "n, m_n, a_diag"]
    text += [row.replace(",", ", ") for row in csv_rows[1:]]
    text.append(f"verdict: {'PASS' if passed else 'FAIL'} nondecreasing={str(monotone).lower()} "
                f"lower_bound={str(bound_ok).lower()} min_b={artifacts.fmt(floor)}")
    files = [artifacts.write_text(out / "diagonal.txt", "\n".join(text) + "\n"),
             artifacts.write_text(out / "diagonal.csv", "\n".join(csv_rows) + "\n")]
    sections = _header(cfg, threads, config_path) + [
        ("resolved", [("rows", tbl.shape[0]), ("cols", tbl.shape[1]),
                      ("settle", " ".join(map(str, sel.settle)))])]
    files.append(artifacts.write_text(out / "manifest.txt", artifacts.manifest(sections)))
    return Outcome(EXIT_OK if passed else EXIT_VERDICT, files, "\n".join(text))


_HANDLERS = {"evolve": cmd_evolve, "continuity": cmd_continuity,
             "mosco": cmd_mosco, "diagonal": cmd_diagonal}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plaplace", description="p-Laplace evolution solver and experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="path to a key = value config file")
    parser.add_argument("--out", help="output directory (overrides the 'output' key)")
    parser.add_argument("--quiet", action="store_true", help="only print errors")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-exponent runs (default 1)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    if args.threads < 1:
        log.error("error: --threads must be ≥ 1")
        return EXIT_INVALID
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        log.error("error: cannot read config %s: %s", path, getattr(exc, "strerror", exc))
        return EXIT_INVALID
    try:
        cfg = parse_config(text, args.command, base_dir=path.parent)
        out = Path(args.out) if args.out else Path(cfg.get("output", "out"))
        outcome = _HANDLERS[args.command](cfg, out, args.threads, str(path))
    except ConfigError as exc:
        log.error("error: %s: %s", path, exc)
        return EXIT_INVALID
    except (ProxNotConverged, EvolutionError) as exc:
        log.error("error: solver did not converge: %s", exc)
        return EXIT_SOLVER
    if not args.quiet:
        print(outcome.summary)
    for f in outcome.files:
        log.info("wrote %s", f)
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
