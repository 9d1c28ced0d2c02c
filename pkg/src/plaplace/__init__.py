"""Parabolic p-Laplace evolution on box grids, for every p >= 1."""

from .energy import EnergySpec, energy, energy_limit_gap, subgradient
from .experiments import (
    ContinuityConfig,
    ContinuityReport,
    DiagonalTable,
    diagonal_select,
    falsify_m1,
    mosco_m1_check,
    mosco_m2_check,
    run_continuity,
)
from .flow import Forcing, TimeGrid, Trajectory, evolve, sup_distance
from .geometry import BC, FaceField, Field, Grid, div, grad, l2_inner
from .prox import ProxNotConverged, ProxParams, ProxReport, pd_gap, prox_power_magnitude, resolvent

__all__ = [
    "BC", "ContinuityConfig", "ContinuityReport", "DiagonalTable", "EnergySpec",
    "FaceField", "Field", "Forcing", "Grid", "ProxNotConverged", "ProxParams",
    "ProxReport", "TimeGrid", "Trajectory", "diagonal_select", "div", "energy",
    "energy_limit_gap", "evolve", "falsify_m1", "grad", "l2_inner", "mosco_m1_check",
    "mosco_m2_check", "pd_gap", "prox_power_magnitude", "resolvent", "run_continuity",
    "subgradient", "sup_distance",
]
