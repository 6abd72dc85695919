"""Fast invariant suite behind ``mfsmp check``.

Each check is a small, seeded instance of a property the test suite covers
at full size.  A check returns a ``CheckResult``; the suite never raises on
a failed property, only on a crash.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._kernels import numba_kernels, numpy_kernels
from .backward import solve_adjoint, solve_mf_bsde
from .coeffs import (
    DRIVERS,
    DriverSpec,
    MonotoneConstants,
    derivative_probe,
    example_driver,
    hamiltonian_convexity_probe,
    linear_sde,
    lq_problem,
    monotone_probe,
)
from .controls import ControlGrid, project
from .forward import NoiseBank, TimeGrid, simulate_controlled, simulate_mkv
from .measure import EmpiricalMeasure, wasserstein2
from .mollify import growth_ratio, make_kernel, mollify
from .smp import OptimizeOptions, cost, cost_gradient, duality_check, optimize


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "threshold", float(self.threshold))


def _w2_bruteforce(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=n), rng.normal(size=n)
        best = min(np.mean((a - b[list(p)]) ** 2) for p in itertools.permutations(range(n)))
        fast = wasserstein2(EmpiricalMeasure.from_samples(a), EmpiricalMeasure.from_samples(b))
        worst = max(worst, abs(fast - np.sqrt(best)))
    return CheckResult("w2_sorted_coupling", worst <= 1e-12, worst, 1e-12)


def _kernel_twins(seed: int) -> CheckResult:
    if numba_kernels is None:
        return CheckResult("kernel_backends_agree", True, 0.0, 1e-12, "numba unavailable; skipped")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=1001)
    w = rng.normal(size=1001)
    mat = rng.normal(size=(7, 1001))
    worst = abs(numpy_kernels.ordered_mean(x) - numba_kernels.ordered_mean(x))
    worst = max(worst, float(np.max(np.abs(
        numpy_kernels.row_weighted_mean(mat, w) - numba_kernels.row_weighted_mean(mat, w)))))
    return CheckResult("kernel_backends_agree", worst <= 1e-12, worst, 1e-12)


def _monotone_drivers(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, bad = 0.0, []
    for name in DRIVERS:
        rep = monotone_probe(example_driver(name), rng, n_pairs=1000)
        worst = max(worst, rep.worst)
        if not rep.passed:
            bad.append(name)
    return CheckResult("driver_monotonicity", not bad, worst, 0.0, ",".join(bad))


def _mollifier(seed: int) -> CheckResult:
    kernel = make_kernel(32)
    mass = abs(kernel.total_mass() - 1.0)
    pts = np.column_stack([np.linspace(-2, 3, 41), np.linspace(-1, 2, 41)])
    ratios = [growth_ratio(mollify(example_driver("sqrt_cap"), n), pts) for n in (1, 16, 256)]
    spread = max(ratios) / max(min(ratios), 1e-300)
    ok = mass <= 1e-8 and spread <= 2.0
    return CheckResult("mollifier_mass_and_growth", ok, spread, 2.0, f"mass error {mass:.2e}")


def _lq_derivatives(seed: int) -> CheckResult:
    rep = derivative_probe(lq_problem(kappa=0.5, qbar=0.3, gbar=0.7), np.random.default_rng(seed))
    return CheckResult("lq_derivative_handles", rep.passed, rep.worst, 1e-4)


def _lq_convexity(seed: int) -> CheckResult:
    rep = hamiltonian_convexity_probe(lq_problem(qbar=0.5, gbar=0.5), np.random.default_rng(seed))
    return CheckResult("lq_hamiltonian_convex", rep.passed, float(rep.details["violations"]), 0.0)


def _forward_oracle(seed: int) -> CheckResult:
    grid = TimeGrid(1.0, 200)
    ens = simulate_mkv(linear_sde(-1.0), 1.0, grid, NoiseBank(seed, 1000, grid))
    err = abs(float(np.mean(ens.terminal)) - np.exp(-1.0))
    return CheckResult("forward_linear_decay", err <= 2e-3, err, 2e-3)


def _bsde_oracle(seed: int) -> CheckResult:
    grid = TimeGrid(1.0, 100)
    drv = DriverSpec(
        "minus_y", lambda t, y, z, m, law: -y, MonotoneConstants(alpha2=-1.0), z_dependent=False,
        law_dependent=False, law_shape_dependent=False,
    )
    sol = solve_mf_bsde(drv, 1.0, grid, NoiseBank(seed, 1000, grid))
    err = abs(sol.Y0 - np.exp(-1.0))
    return CheckResult("bsde_linear_decay", err <= 1e-2, err, 1e-2)


def _gradient_fd(seed: int) -> CheckResult:
    grid = TimeGrid(1.0, 25)
    noise = NoiseBank(seed, 2000, grid)
    P = lq_problem(kappa=0.5, sigma0=0.5)
    u = ControlGrid.for_problem(P, 0.0, grid.M)
    v = np.ones((grid.M, 1))
    X = simulate_controlled(P, u, grid, noise)
    g = cost_gradient(P, X, solve_adjoint(P, X, u, grid, noise), u)
    theta = 1e-3
    up = u.perturbed(v, theta)
    fd = (cost(P, simulate_controlled(P, up, grid, noise), up) - cost(P, X, u)) / theta
    an = float(np.sum(g * v)) * grid.dt
    rel = abs(fd - an) / abs(an)
    return CheckResult("gradient_matches_finite_difference", rel <= 0.05, rel, 0.05)


def _duality(seed: int) -> CheckResult:
    grid = TimeGrid(1.0, 50)
    noise = NoiseBank(seed, 2000, grid)
    P = lq_problem(kappa=0.5, sigma0=0.5)
    u = ControlGrid.for_problem(P, -0.3, grid.M)
    X = simulate_controlled(P, u, grid, noise)
    rep = duality_check(P, X, u, solve_adjoint(P, X, u, grid, noise), np.ones((grid.M, 1)), noise=noise)
    bound = max(0.02 * abs(rep["lhs"]), 3.0 * rep["standard_error"])
    return CheckResult("adjoint_duality", rep["abs_error"] <= bound, rep["abs_error"], bound)


def _projection(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=3.0, size=(50, 2))
    lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 0.5])
    once = project(v, lo, hi)
    gap = float(np.max(np.abs(project(once, lo, hi) - once)))
    inside = bool(np.all((once >= lo) & (once <= hi)))
    return CheckResult("projection_idempotent", gap == 0.0 and inside, gap, 0.0)


def _optimizer(seed: int) -> CheckResult:
    grid = TimeGrid(1.0, 20)
    P = lq_problem(u_box=(-2.0, 2.0))
    rep = optimize(P, ControlGrid.for_problem(P, 0.0, grid.M), grid, NoiseBank(seed, 200, grid), OptimizeOptions())
    err = float(np.max(np.abs(rep.control.values + 0.5)))
    ok = rep.converged and err <= 0.01 and rep.residual < 3 * OptimizeOptions().tol
    return CheckResult("lq_optimizer_reaches_oracle", ok, err, 0.01, rep.status)


CHECKS: dict[str, Callable[[int], CheckResult]] = {
    "w2_sorted_coupling": _w2_bruteforce,
    "kernel_backends_agree": _kernel_twins,
    "driver_monotonicity": _monotone_drivers,
    "mollifier_mass_and_growth": _mollifier,
    "lq_derivative_handles": _lq_derivatives,
    "lq_hamiltonian_convex": _lq_convexity,
    "forward_linear_decay": _forward_oracle,
    "bsde_linear_decay": _bsde_oracle,
    "gradient_matches_finite_difference": _gradient_fd,
    "adjoint_duality": _duality,
    "projection_idempotent": _projection,
    "lq_optimizer_reaches_oracle": _optimizer,
}


def run_checks(seed: int = 0, only=None) -> list[CheckResult]:
    names = list(only) if only else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    return [CHECKS[n](seed) for n in names]
