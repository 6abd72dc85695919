"""Particle solvers for mean-field SDEs, monotone mean-field BSDEs and the
mean-field stochastic maximum principle."""

from ._kernels import BACKEND, set_workers
from .measure import EmpiricalMeasure, JointEmpiricalMeasure, MeasureError, center, from_samples, wasserstein2

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EmpiricalMeasure",
    "JointEmpiricalMeasure",
    "MeasureError",
    "center",
    "from_samples",
    "set_workers",
    "wasserstein2",
]
