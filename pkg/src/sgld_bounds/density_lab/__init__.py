"""Exact one-dimensional density propagation and divergence checks."""
from .checks import CHECKS, LabReport, LabSetup, lab_pair, lab_verify
from .grid import DensityGrid, divergence, gaussian_pdf, make_grid
from .propagate import (
    DriftSpec,
    Propagator,
    evolve_fokker_planck,
    fp_dt_limit,
    propagate,
)

__all__ = [
    "CHECKS",
    "DensityGrid",
    "DriftSpec",
    "LabReport",
    "LabSetup",
    "Propagator",
    "divergence",
    "evolve_fokker_planck",
    "fp_dt_limit",
    "gaussian_pdf",
    "lab_pair",
    "lab_verify",
    "make_grid",
    "propagate",
]
