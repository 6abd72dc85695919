"""Interacting-particle Euler-Maruyama for mean-field SDEs.

Each step feeds the empirical measure of the same particle cloud into the
coefficients.  Drifts are clamped to ``|b| <= clamp_factor (1 + |x|)`` (a
warning is logged whenever the clamp bites) because explicit steps can
overshoot under one-sided Lipschitz drifts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import K, as_f64
from .coeffs.specs import ControlProblemSpec, SdeCoefficientSpec, as_column, as_matrix
from .controls import ControlError, ControlGrid
from .lions import copy_average, law_term, pair_term
from .measure import EmpiricalMeasure

log = logging.getLogger(__name__)

DEFAULT_CLAMP = 10.0


class SimulationError(RuntimeError):
    """Non-finite particle state; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"need at least one time step, got M={self.M}")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got T={self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.M + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass(frozen=True)
class NoiseBank:
    """Brownian increments ``dW`` of shape ``(N, M)``, reproducible from ``seed``.

    With ``antithetic=True`` the second half of the rows mirrors the first,
    which removes the odd moments of the noise from every particle average.
    """

    seed: int
    N: int
    grid: TimeGrid
    antithetic: bool = False
    dW: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one particle")
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        M, dt = self.grid.M, self.grid.dt
        if self.antithetic:
            half = (self.N + 1) // 2
            base = rng.standard_normal((half, M))
            z = np.concatenate([base, -base[: self.N - half]], axis=0)
        else:
            z = rng.standard_normal((self.N, M))
        dW = np.asfortranarray(z * np.sqrt(dt))  # columns are contiguous
        dW.flags.writeable = False
        object.__setattr__(self, "dW", dW)

    @property
    def W(self) -> np.ndarray:
        """Brownian paths at the grid nodes, shape ``(N, M + 1)``."""
        out = np.zeros((self.N, self.grid.M + 1))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def spawn(self, i: int) -> "NoiseBank":
        """Independent bank derived deterministically from ``(seed, i)``."""
        child = np.random.SeedSequence(self.seed, spawn_key=(i,))
        return NoiseBank(int(child.generate_state(1, np.uint64)[0]), self.N, self.grid, self.antithetic)


@dataclass(frozen=True)
class ParticleEnsemble:
    states: np.ndarray
    grid: TimeGrid
    provenance: str
    clamped: int = 0

    @property
    def N(self) -> int:
        return self.states.shape[0]

    def column(self, k: int) -> np.ndarray:
        return self.states[:, k]

    def law(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.states[:, k])

    def means(self) -> np.ndarray:
        return np.array([K.ordered_mean(np.ascontiguousarray(self.states[:, k]))
                         for k in range(self.states.shape[1])])

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


def _finite_or_raise(x: np.ndarray, k: int, what: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.count_nonzero(~np.isfinite(x)))
        raise SimulationError(
            f"{what}: {bad} non-finite particle states after step {k}; "
            "the coefficients may violate their growth assumptions or dt is too large",
            step=k,
        )


def _check_noise(noise: NoiseBank, grid: TimeGrid) -> None:
    if noise.grid != grid:
        raise ValueError(f"noise grid {noise.grid} does not match simulation grid {grid}")


def _freeze(states: np.ndarray) -> np.ndarray:
    states.flags.writeable = False
    return states


def _run(step_fn, x0: float, grid: TimeGrid, noise: NoiseBank, clamp_factor: float, what: str):
    _check_noise(noise, grid)
    N, M, dt = noise.N, grid.M, grid.dt
    states = np.empty((N, M + 1), order="F")
    states[:, 0] = x0
    times = grid.times
    clamped = 0
    for k in range(M):
        x = states[:, k]
        drift, diff = step_fn(k, times[k], x)
        new, n_clamped = K.euler_step(x, drift, diff, noise.dW[:, k], dt, clamp_factor)
        if n_clamped:
            clamped += int(n_clamped)
            log.warning("%s: drift clamped for %d particles at step %d", what, n_clamped, k)
        _finite_or_raise(new, k, what)
        states[:, k + 1] = new
    return ParticleEnsemble(_freeze(states), grid, what, clamped)


def simulate_mkv(
    spec: SdeCoefficientSpec,
    x0: float,
    grid: TimeGrid,
    noise: NoiseBank,
    clamp_factor: float = DEFAULT_CLAMP,
) -> ParticleEnsemble:
    """Particle Euler-Maruyama for ``dX = b(t, X, P_X) dt + sigma(t, X, P_X) dW``."""

    def step(k, t, x):
        law = EmpiricalMeasure.from_samples(x)
        return as_column(spec.b(t, x, law), x.size), as_column(spec.sigma(t, x, law), x.size)

    return _run(step, x0, grid, noise, clamp_factor, f"mkv[{spec.name}]")


def _check_control(problem: ControlProblemSpec, u: ControlGrid, grid: TimeGrid) -> None:
    if u.M != grid.M:
        raise ControlError(f"control has {u.M} steps, grid has {grid.M}")
    if u.dim != problem.u_dim:
        raise ControlError(f"control dimension {u.dim} != problem dimension {problem.u_dim}")
    if np.any(u.values < problem.u_lo) or np.any(u.values > problem.u_hi):
        raise ControlError("control leaves the problem's admissible box")


def simulate_controlled(
    problem: ControlProblemSpec,
    u: ControlGrid,
    grid: TimeGrid,
    noise: NoiseBank,
    clamp_factor: float = DEFAULT_CLAMP,
) -> ParticleEnsemble:
    """State process of the controlled system started at ``problem.x0``."""
    _check_control(problem, u, grid)

    def step(k, t, x):
        law = EmpiricalMeasure.from_samples(x)
        uk = u.at(k)
        return problem.drift(t, x, law, uk), problem.diffusion(t, x, law, uk)

    return _run(step, problem.x0, grid, noise, clamp_factor, f"controlled[{problem.name}]")


def simulate_variational(
    problem: ControlProblemSpec,
    ustar: ControlGrid,
    v,
    Xstar: ParticleEnsemble,
    noise: NoiseBank,
) -> ParticleEnsemble:
    """Linearized state ``Z`` along the control direction ``v`` (``Z_0 = 0``).

    ``v`` is an ``(M, m)`` array or ``ControlGrid`` and is not box-constrained.
    The copy average for the drift's measure derivative is taken against the
    centred states and centred ``Z``.
    """
    grid = Xstar.grid
    _check_noise(noise, grid)
    _check_control(problem, ustar, grid)
    vv = v.values if isinstance(v, ControlGrid) else np.asarray(v, dtype=float)
    vv = vv.reshape(grid.M, problem.u_dim)
    N, M, dt = Xstar.N, grid.M, grid.dt
    m = problem.u_dim
    times = grid.times
    Z = np.zeros((N, M + 1), order="F")
    for k in range(M):
        t = times[k]
        x = Xstar.states[:, k]
        law = EmpiricalMeasure.from_samples(x)
        mean = law.mean
        claw = law.centered()
        xc = x - mean
        uk = ustar.at(k)
        z = Z[:, k]
        ez = K.ordered_mean(z)
        zc = z - ez

        drift = as_column(problem.b0_x(t, x, claw, uk), N) * z
        drift = drift + float(np.asarray(problem.b1_m(t, mean, claw))) * ez
        terms = []
        if problem.b0_mu is not None:
            terms.append(pair_term(problem.b0_mu, (t,), (claw, uk)))
        if problem.b1_mu is not None:
            terms.append(law_term(problem.b1_mu, (t, mean, claw)))
        if terms:
            drift = drift + copy_average(terms, x, xc, zc)
        drift = drift + as_matrix(problem.b0_u(t, x, claw, uk), N, m) @ vv[k]

        diff = as_column(problem.sigma_x(t, x, law, uk), N) * z
        if problem.sigma_mu is not None:
            diff = diff + copy_average([pair_term(problem.sigma_mu, (t,), (law, uk))], x, x, z)
        diff = diff + as_matrix(problem.sigma_u(t, x, law, uk), N, m) @ vv[k]

        new = z + drift * dt + diff * noise.dW[:, k]
        _finite_or_raise(new, k, "variational")
        Z[:, k + 1] = new
    return ParticleEnsemble(_freeze(Z), grid, f"variational[{problem.name}]")


def moment_report(ensemble: ParticleEnsemble, p: int) -> dict:
    """Pathwise ``E[max_k |X_k|^p]`` and the largest marginal ``E|X_k|^p``."""
    if p not in (2, 4, 8):
        raise ValueError(f"p must be 2, 4 or 8, got {p}")
    a = np.abs(as_f64(ensemble.states)) ** p
    sup_moment = K.ordered_mean(np.ascontiguousarray(a.max(axis=1)))
    marginal = max(K.ordered_mean(np.ascontiguousarray(a[:, k])) for k in range(a.shape[1]))
    return {
        "p": p,
        "sup_moment": sup_moment,
        "max_marginal_moment": marginal,
        "finite": bool(np.isfinite(sup_moment)),
    }
