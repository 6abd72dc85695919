"""Hamiltonian, cost, gradient and projected-gradient optimization of open-loop controls.

Controls are deterministic grids ``u_k`` on the time steps, so the
directional derivative of the cost in direction ``v`` is
``sum_k grad_k . v_k dt`` with ``grad_k`` the particle mean of ``H_u``.

The discrete pairing uses ``p_{k+1}`` against ``b_u(t_k)`` and ``q_k``
against ``sigma_u(t_k)``: with explicit Euler states this is the exact
derivative of the discretized cost up to the regression error in ``(p, q)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import K
from .backward import AdjointSolution, solve_adjoint
from .coeffs.probes import ProbeReport, hamiltonian_convexity_probe
from .coeffs.specs import ControlProblemSpec, as_column, as_matrix
from .controls import ControlError, ControlGrid, project
from .forward import NoiseBank, ParticleEnsemble, TimeGrid, simulate_controlled, simulate_variational
from .lions import pair_term, star_average
from .measure import EmpiricalMeasure

log = logging.getLogger(__name__)

__all__ = [
    "ControlGrid",
    "ControlError",
    "OptimizationReport",
    "OptimizeOptions",
    "hamiltonian",
    "cost",
    "cost_samples",
    "cost_gradient",
    "optimize",
    "smp_residual",
    "duality_check",
    "sufficiency_probe",
]


def hamiltonian(problem: ControlProblemSpec, t, x, mean, centered_law, full_law, u, p, q):
    """``b(t, x, m, centred law, u) p + sigma(t, x, law, u) q + f(t, x, law, u)``.

    The drift sees the centred law; ``sigma`` and ``f`` see the full law.
    Vectorized over ``x``, ``p`` and ``q``.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    b = np.asarray(problem.b0(t, x, centered_law, u), dtype=float) + np.asarray(
        problem.b1(t, mean, centered_law), dtype=float
    )
    s = np.asarray(problem.sigma(t, x, full_law, u), dtype=float)
    f = np.asarray(problem.f(t, x, full_law, u), dtype=float)
    out = b * p + s * q + f
    return float(out) if np.ndim(out) == 0 else out


def cost_samples(problem: ControlProblemSpec, ensemble: ParticleEnsemble, u: ControlGrid) -> np.ndarray:
    """Per-particle cost ``sum_k f(t_k, X_k, mu_k, u_k) dt + h(X_M, mu_M)``."""
    grid = ensemble.grid
    N, M, dt = ensemble.N, grid.M, grid.dt
    times = grid.times
    acc = np.zeros(N)
    for k in range(M):
        x = np.ascontiguousarray(ensemble.states[:, k])
        acc += as_column(problem.f(times[k], x, EmpiricalMeasure.from_samples(x), u.at(k)), N) * dt
    xT = np.ascontiguousarray(ensemble.states[:, M])
    acc += as_column(problem.h(xT, EmpiricalMeasure.from_samples(xT)), N)
    return acc


def cost(problem: ControlProblemSpec, ensemble: ParticleEnsemble, u: ControlGrid) -> float:
    """Monte Carlo cost of ``u`` on the given state ensemble."""
    return K.ordered_mean(cost_samples(problem, ensemble, u))


def _standard_error(samples: np.ndarray) -> float:
    n = samples.size
    if n < 2:
        return 0.0
    mean = K.ordered_mean(samples)
    return float(np.sqrt(K.ordered_mean((samples - mean) ** 2) / (n - 1)))


def _hu_samples(problem, ensemble: ParticleEnsemble, adjoint: AdjointSolution, u: ControlGrid, k: int):
    """Per-particle ``f_u + p_{k+1} b_u + q_k sigma_u`` at step ``k``, shape ``(N, m)``."""
    N, m = ensemble.N, u.dim
    t = ensemble.grid.times[k]
    x = np.ascontiguousarray(ensemble.states[:, k])
    law = EmpiricalMeasure.from_samples(x)
    claw = law.centered()
    uk = u.at(k)
    hu = as_matrix(problem.f_u(t, x, law, uk), N, m).copy()
    hu += adjoint.p[:, k + 1][:, None] * as_matrix(problem.b0_u(t, x, claw, uk), N, m)
    hu += adjoint.q[:, k][:, None] * as_matrix(problem.sigma_u(t, x, law, uk), N, m)
    return hu


def cost_gradient(
    problem: ControlProblemSpec, ensemble: ParticleEnsemble, adjoint: AdjointSolution, u: ControlGrid
) -> np.ndarray:
    """Particle mean of ``H_u`` per time step, shape ``(M, m)``."""
    M, m = ensemble.grid.M, u.dim
    grad = np.empty((M, m))
    for k in range(M):
        hu = _hu_samples(problem, ensemble, adjoint, u, k)
        for j in range(m):
            grad[k, j] = K.ordered_mean(np.ascontiguousarray(hu[:, j]))
    return grad


def _box_directions(lo: np.ndarray, hi: np.ndarray, uk: np.ndarray):
    """Unit directions from ``uk`` to each box vertex (infinite bounds give axis rays)."""
    finite_lo, finite_hi = np.isfinite(lo), np.isfinite(hi)
    if np.all(finite_lo & finite_hi):
        for corner in itertools.product(*zip(lo, hi)):
            d = np.asarray(corner) - uk
            n = np.linalg.norm(d)
            if n > 0.0:
                yield d / n
        return
    for j in range(lo.size):
        for bound, sign in ((lo[j], -1.0), (hi[j], 1.0)):
            if not np.isfinite(bound) or bound != uk[j]:
                e = np.zeros(lo.size)
                e[j] = sign
                yield e


def smp_residual(
    problem: ControlProblemSpec, Xstar: ParticleEnsemble, ustar: ControlGrid, adjoint: AdjointSolution
) -> dict:
    """Worst violation of ``E[H_u](t_k) . (u - u_k) >= 0`` over box vertices ``u``.

    Each vertex direction is normalized, so for an interior ``u_k`` of a 1-D
    box the residual is ``|E[H_u]|``; at an active bound only the inward
    direction counts.
    """
    hu = cost_gradient(problem, Xstar, adjoint, ustar)
    per_step = np.zeros(hu.shape[0])
    for k in range(hu.shape[0]):
        uk = ustar.at(k)
        worst = 0.0
        for d in _box_directions(ustar.lo, ustar.hi, uk):
            worst = min(worst, float(hu[k] @ d))
        per_step[k] = max(0.0, -worst)
    return {"residual": float(per_step.max()), "per_step": per_step, "H_u": hu}


def duality_check(
    problem: ControlProblemSpec,
    Xstar: ParticleEnsemble,
    ustar: ControlGrid,
    adjoint: AdjointSolution,
    v,
    noise: NoiseBank | None = None,
    Z: ParticleEnsemble | None = None,
) -> dict:
    """Compare ``E[p_T Z_T]`` with the time integral of the linearized cost terms.

    ``Z`` is the variational state for direction ``v`` on the adjoint's noise;
    pass it, or pass ``noise`` to have it simulated.
    """
    grid = Xstar.grid
    if Z is None:
        if noise is None:
            raise ValueError("pass the variational ensemble Z or the noise bank used for the adjoint")
        Z = simulate_variational(problem, ustar, v, Xstar, noise)
    vv = v.values if isinstance(v, ControlGrid) else np.asarray(v, dtype=float)
    vv = np.broadcast_to(vv, (grid.M, problem.u_dim)) if vv.size in (1, problem.u_dim) else vv.reshape(
        grid.M, problem.u_dim
    )
    N, M, dt = Xstar.N, grid.M, grid.dt
    m = problem.u_dim
    times = grid.times
    lhs_i = adjoint.p[:, M] * Z.states[:, M]
    rhs_i = np.zeros(N)
    for k in range(M):
        t = times[k]
        x = np.ascontiguousarray(Xstar.states[:, k])
        law = EmpiricalMeasure.from_samples(x)
        claw = law.centered()
        uk = ustar.at(k)
        z = np.ascontiguousarray(Z.states[:, k])
        term = adjoint.p[:, k + 1] * (as_matrix(problem.b0_u(t, x, claw, uk), N, m) @ vv[k])
        term += adjoint.q[:, k] * (as_matrix(problem.sigma_u(t, x, law, uk), N, m) @ vv[k])
        term -= z * as_column(problem.f_x(t, x, law, uk), N)
        if problem.f_mu is not None:
            term -= star_average([pair_term(problem.f_mu, (t,), (law, uk))], x, x, z)
        rhs_i += term * dt
    lhs = K.ordered_mean(lhs_i)
    rhs = K.ordered_mean(rhs_i)
    gap = abs(lhs - rhs)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "abs_error": gap,
        "rel_error": gap / max(abs(lhs), abs(rhs), 1e-300) if gap > 0 else 0.0,
        "standard_error": _standard_error(lhs_i - rhs_i),
    }


def sufficiency_probe(
    problem: ControlProblemSpec,
    rng: np.random.Generator,
    samples: int = 1000,
    adjoint: AdjointSolution | None = None,
) -> ProbeReport:
    """Midpoint convexity of ``H`` in ``(x, m, u)`` and of ``h`` in ``(x, m)``.

    With an ``adjoint`` the ``(p, q)`` values are drawn from its particles;
    otherwise from a fixed symmetric range.
    """
    if samples < 1000:
        raise ValueError(f"need at least 1000 segments, got {samples}")
    pq = None
    if adjoint is not None:
        pq = (np.asarray(adjoint.p[:, :-1]).ravel(), np.asarray(adjoint.q).ravel())
    return hamiltonian_convexity_probe(problem, rng, n_segments=samples, pq=pq)


@dataclass(frozen=True)
class OptimizeOptions:
    max_iters: int = 50
    tol: float = 1e-3
    eta0: float = 1.0
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    min_eta: float = 1e-8
    fresh_noise: bool = True
    max_increases: int = 5
    increase_se: float = 3.0
    degree: int = 3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if not (0 < self.armijo_c1 < 1 and 0 < self.backtrack < 1 and self.eta0 > 0):
            raise ValueError("need 0 < armijo_c1 < 1, 0 < backtrack < 1 and eta0 > 0")


@dataclass
class OptimizationReport:
    """Trace of a projected-gradient run.

    ``costs[i]``, ``grad_norms[i]`` and ``cost_se[i]`` belong to iterate ``i``
    on that iteration's noise; ``residual`` is the optimality residual of
    ``control`` recomputed on an unused noise bank.
    """

    status: str
    control: ControlGrid
    costs: list = field(default_factory=list)
    cost_se: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    residual: float = float("nan")
    residual_per_step: np.ndarray | None = None
    final_cost: float = float("nan")
    final_cost_se: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        """Number of gradient steps taken."""
        return len(self.step_sizes)


def projected_gradient_norm(u: ControlGrid, grad: np.ndarray) -> float:
    """``max_k |u_k - Pi_U(u_k - grad_k)|``; zero exactly at a stationary point."""
    return float(np.max(np.abs(u.values - project(u.values - grad, u.lo, u.hi))))


def _evaluate(problem, u, grid, noise, degree):
    X = simulate_controlled(problem, u, grid, noise)
    samples = cost_samples(problem, X, u)
    adj = solve_adjoint(problem, X, u, grid, noise, degree=degree)
    return X, samples, adj


def optimize(
    problem: ControlProblemSpec,
    u0: ControlGrid,
    grid: TimeGrid,
    noise: NoiseBank,
    opts: OptimizeOptions | None = None,
) -> OptimizationReport:
    """Projected gradient descent with Armijo backtracking.

    Iteration ``i`` draws its noise from ``noise.spawn(i)`` when
    ``opts.fresh_noise`` (otherwise reuses ``noise``) and keeps it fixed for
    the whole line search.  Stops when the projected-gradient norm drops
    below ``opts.tol``.  Five consecutive cost increases larger than three
    standard errors abort the run.
    """
    opts = opts or OptimizeOptions()
    if u0.M != grid.M:
        raise ControlError(f"control has {u0.M} steps, grid has {grid.M}")
    u = ControlGrid(u0.values, problem.u_lo, problem.u_hi)
    dt = grid.dt
    report = OptimizationReport(status="max_iters", control=u)
    clamped = 0
    increases = 0
    last_cost = None
    for i in range(opts.max_iters + 1):
        bank = noise.spawn(i) if opts.fresh_noise else noise
        X, samples, adj = _evaluate(problem, u, grid, bank, opts.degree)
        clamped += X.clamped
        J = K.ordered_mean(samples)
        se = _standard_error(samples)
        grad = cost_gradient(problem, X, adj, u)
        pg = projected_gradient_norm(u, grad)
        report.costs.append(J)
        report.cost_se.append(se)
        report.grad_norms.append(pg)
        log.info("iter %d: J=%.10g se=%.3g |pg|=%.3g", i, J, se, pg)

        if last_cost is not None and J - last_cost > opts.increase_se * max(se, report.cost_se[-2]):
            increases += 1
        else:
            increases = 0
        last_cost = J
        if increases >= opts.max_increases:
            report.status = "aborted"
            log.warning("cost rose beyond Monte Carlo noise for %d consecutive iterations", increases)
            break
        if pg < opts.tol:
            report.status = "converged"
            break
        if i == opts.max_iters:
            break

        eta = opts.eta0
        while True:
            trial = u.step(grad, eta)
            Xt = simulate_controlled(problem, trial, grid, bank)
            Jt = cost(problem, Xt, trial)
            decrease = float(np.sum(grad * (trial.values - u.values))) * dt
            if Jt <= J + opts.armijo_c1 * decrease:
                break
            eta *= opts.backtrack
            if eta < opts.min_eta:
                trial = None
                break
        if trial is None:
            report.status = "line_search_failed"
            log.warning("iteration %d: no Armijo step above eta=%g", i, opts.min_eta)
            break
        report.step_sizes.append(eta)
        u = trial

    report.control = u
    final_bank = noise.spawn(opts.max_iters + 1)
    Xf, samples, adj = _evaluate(problem, u, grid, final_bank, opts.degree)
    res = smp_residual(problem, Xf, u, adj)
    report.residual = res["residual"]
    report.residual_per_step = res["per_step"]
    report.final_cost = K.ordered_mean(samples)
    report.final_cost_se = _standard_error(samples)
    report.diagnostics = {"clamped_drifts": clamped + Xf.clamped, "consecutive_increases": increases}
    return report
