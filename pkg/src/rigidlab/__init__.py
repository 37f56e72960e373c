"""Numerical laboratory for fixed-angle inverse scattering rigidity.

Modules: ``media`` (coefficients), ``geodesics`` (omega-geodesics, exit map,
distances), ``arrival`` (first-arrival functions), ``forward`` (plane-wave
solver and boundary traces), ``rigidity`` (verification pipelines) and
``cli`` (batch runner).
"""

__version__ = "0.1.0"

from .arrival import ArrivalField, ShootingArrival, SweepingArrival, arrival_by_shooting, arrival_by_sweeping
from .forward import BoundaryTrace, WaveConfig, WaveSolver, solve_wave, trace_distance
from .geodesics import exit_map, integrate_fan, riemannian_distance
from .media import (
    Bump,
    DiffeoSpec,
    DisplacementTerm,
    Medium,
    compute_bounds,
    euclidean,
    load_medium,
    make_bump_density,
    make_metric_bumps,
    make_pullback_metric,
)
from .rigidity import HarmonicCoordinates, RigidityReport, verify_metric_rigidity, verify_rho_rigidity

__all__ = [
    "ArrivalField",
    "BoundaryTrace",
    "Bump",
    "DiffeoSpec",
    "DisplacementTerm",
    "HarmonicCoordinates",
    "Medium",
    "RigidityReport",
    "ShootingArrival",
    "SweepingArrival",
    "WaveConfig",
    "WaveSolver",
    "arrival_by_shooting",
    "arrival_by_sweeping",
    "compute_bounds",
    "euclidean",
    "exit_map",
    "integrate_fan",
    "load_medium",
    "make_bump_density",
    "make_metric_bumps",
    "make_pullback_metric",
    "riemannian_distance",
    "solve_wave",
    "trace_distance",
    "verify_metric_rigidity",
    "verify_rho_rigidity",
]
