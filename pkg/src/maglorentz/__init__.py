"""Charged tracer in a 2D random medium of scatterers under a perpendicular
magnetic field: exact microscopic flow, single-obstacle scattering, and
solvers for the limiting kinetic equations."""

from .dynamics import FieldParams, Obstacle, PhaseState
from .potentials import HardDisk, PotentialSpec, SmoothCompact, TruncatedPower, reference_profile

__version__ = "0.1.0"

__all__ = [
    "FieldParams",
    "HardDisk",
    "Obstacle",
    "PhaseState",
    "PotentialSpec",
    "SmoothCompact",
    "TruncatedPower",
    "reference_profile",
]
