"""Coefficient specifications, the example corpus and the LQ benchmark family."""

from ..lions import SeparableKernel
from .examples import (
    BOUNDED_1D,
    BOUNDED_2D,
    CONTROLS,
    DRIVERS,
    SDES,
    example_control,
    example_driver,
    example_sde,
    g_oscillating,
    g_oscillating_prime,
    l_piecewise,
    l_piecewise_prime,
    linear_sde,
    sqrt_cap,
    sqrt_cap_prime,
)
from .lq import lq_open_loop_optimum, lq_problem
from .probes import ProbeReport, derivative_probe, hamiltonian_convexity_probe, monotone_probe
from .specs import (
    ControlProblemSpec,
    DriverSpec,
    MonotoneConstants,
    SdeCoefficientSpec,
    as_column,
    as_matrix,
)

__all__ = [
    "BOUNDED_1D",
    "BOUNDED_2D",
    "CONTROLS",
    "ControlProblemSpec",
    "DRIVERS",
    "DriverSpec",
    "MonotoneConstants",
    "ProbeReport",
    "SDES",
    "SdeCoefficientSpec",
    "SeparableKernel",
    "as_column",
    "as_matrix",
    "derivative_probe",
    "example_control",
    "example_driver",
    "example_sde",
    "g_oscillating",
    "g_oscillating_prime",
    "hamiltonian_convexity_probe",
    "l_piecewise",
    "l_piecewise_prime",
    "linear_sde",
    "lq_open_loop_optimum",
    "lq_problem",
    "monotone_probe",
    "sqrt_cap",
    "sqrt_cap_prime",
]
