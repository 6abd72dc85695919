"""Backward solvers: monotone mean-field BSDEs and the linear adjoint equation.

Mean-field BSDE
    ``Y_t = xi + int_t^T f(s, Y_s, Z_s, P_(Y_s, Z_s)) ds - int_t^T Z_s dW_s``

is solved by Picard iteration over ``Z``: freeze ``V``, solve the BSDE with
driver ``f(s, y, V_s, P_(y, V_s))`` backward in time, and feed its ``Z`` back
as the next ``V``.  Each backward step is implicit in ``y``; because the
driver is only one-sided Lipschitz in ``y`` (possibly with infinite slope),
the step is solved by a bracketed root search instead of fixed-point
iteration.  The law argument is resolved per step: the mean of ``Y`` by a
scalar monotone root search, the remaining shape of the joint cloud by an
outer refresh loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import K, as_f64
from .coeffs.specs import ControlProblemSpec, DriverSpec, as_column
from .controls import ControlGrid
from .forward import NoiseBank, ParticleEnsemble, TimeGrid, _check_control, _check_noise
from .lions import copy_average, law_term, pair_term, star_average
from .measure import EmpiricalMeasure, JointEmpiricalMeasure
from .regression import PolynomialRegressor, conditional_step

log = logging.getLogger(__name__)

ROOT_MAX_ITER = 100
ROOT_RTOL = 1e-13


class BsdeSolverError(RuntimeError):
    """Implicit step, law loop or Picard iteration failed; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class BsdeSolution:
    Y: np.ndarray
    Z: np.ndarray
    grid: TimeGrid
    picard_iterations: int = 1
    residual: float = 0.0
    residuals: tuple = ()
    y0_bound: float = 0.0
    law_iterations: int = 0
    flags: tuple = ()

    @property
    def Y0(self) -> float:
        return K.ordered_mean(np.ascontiguousarray(self.Y[:, 0]))

    def column_stats(self) -> list[dict]:
        """Per-node ``t, E[Y], Var[Y], E[Z]`` (``E[Z]`` is blank at ``T``)."""
        rows = []
        for k, t in enumerate(self.grid.times):
            y = np.ascontiguousarray(self.Y[:, k])
            m = K.ordered_mean(y)
            rows.append(
                {
                    "t": t,
                    "mean_Y": m,
                    "var_Y": K.ordered_mean((y - m) ** 2),
                    "mean_Z": K.ordered_mean(np.ascontiguousarray(self.Z[:, k])) if k < self.grid.M else np.nan,
                }
            )
        return rows


@dataclass(frozen=True)
class AdjointSolution:
    p: np.ndarray
    q: np.ndarray
    grid: TimeGrid


# ---------------------------------------------------------------------------
# implicit step
# ---------------------------------------------------------------------------


def _implicit_roots(phi, c: np.ndarray, radius: np.ndarray, step_index: int, f_c=None,
                    slope: float = 1.0) -> np.ndarray:
    """Roots of increasing ``phi(y, idx)`` (vectorized), searched from ``[c - radius, c + radius]``.

    ``phi(y, idx)`` evaluates the residual for the entries ``idx`` only.
    Illinois regula falsi; every third iteration, entries whose bracket has
    not shrunk at least as fast as bisection would are bisected instead.  An
    entry stops once its bracket is tight or ``|phi| <= ROOT_RTOL (1+|y|) slope``,
    which bounds the root error when ``phi`` has slope at least ``slope``.
    """
    def ev(y, idx):
        return phi(y, idx) if idx.size else np.empty(0)

    f_c = phi(c, np.arange(c.size)) if f_c is None else f_c
    done = f_c == 0.0
    exact = done.copy()  # entries whose residual test passed; their root is ``best``
    best = c.copy()
    below = f_c < 0.0
    lo = np.where(below, c, c - radius)
    hi = np.where(below, c + radius, c)
    f_lo = f_c.copy()
    f_hi = f_c.copy()
    i_hi = np.flatnonzero(below & ~done)
    i_lo = np.flatnonzero(~below & ~done)
    f_hi[i_hi] = ev(hi[i_hi], i_hi)
    f_lo[i_lo] = ev(lo[i_lo], i_lo)
    # widen any bracket the a-priori radius failed to cover
    for _ in range(60):
        bad = ~done & ((f_lo > 0.0) | (f_hi < 0.0))
        if not bad.any():
            break
        width = np.maximum(hi - lo, 1e-12 * (1.0 + np.abs(c)))
        i_lo = np.flatnonzero(bad & (f_lo > 0.0))
        i_hi = np.flatnonzero(bad & (f_hi < 0.0))
        lo[i_lo] -= width[i_lo]
        hi[i_hi] += width[i_hi]
        f_lo[i_lo] = ev(lo[i_lo], i_lo)
        f_hi[i_hi] = ev(hi[i_hi], i_hi)
    else:
        raise BsdeSolverError(
            f"implicit step {step_index}: could not bracket the root",
            {"step": step_index, "particles": int(bad.sum())},
        )
    side = np.zeros(c.shape, dtype=np.int8)
    ref_width = hi - lo
    for it in range(ROOT_MAX_ITER):
        width = hi - lo
        done |= width <= ROOT_RTOL * (1.0 + np.abs(lo) + np.abs(hi))
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        a, b, fa, fb, w = lo[idx], hi[idx], f_lo[idx], f_hi[idx], width[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            rf = b - fb * w / (fb - fa)
        use_mid = ~np.isfinite(rf) | (rf <= a) | (rf >= b)
        if it % 3 == 2:
            use_mid |= w > 0.125 * ref_width[idx]
            ref_width[idx] = w
        cand = np.where(use_mid, 0.5 * (a + b), rf)
        fc = phi(cand, idx)
        hit = np.abs(fc) <= ROOT_RTOL * (1.0 + np.abs(cand)) * slope
        done[idx[hit]] = True
        exact[idx[hit]] = True
        best[idx[hit]] = cand[hit]
        up = ~hit & (fc < 0.0)
        dn = ~hit & (fc > 0.0)
        iu, idn = idx[up], idx[dn]
        lo[iu] = cand[up]
        f_lo[iu] = fc[up]
        hi[idn] = cand[dn]
        f_hi[idn] = fc[dn]
        # Illinois: halve the stale endpoint's value when the same side moves twice
        s_idx = side[idx]
        f_hi[idx[up & (s_idx == 1)]] *= 0.5
        f_lo[idx[dn & (s_idx == -1)]] *= 0.5
        side[iu] = 1
        side[idn] = -1
    else:
        width = hi - lo
        stuck = ~done & (width > ROOT_RTOL * (1.0 + np.abs(lo) + np.abs(hi)))
        if stuck.any():
            raise BsdeSolverError(
                f"implicit step {step_index}: root search did not converge in {ROOT_MAX_ITER} iterations",
                {"step": step_index, "particles": int(stuck.sum()), "max_width": float(width[stuck].max())},
            )
    closer = np.where(np.abs(f_lo) <= np.abs(f_hi), lo, hi)
    return np.where(exact, best, closer)


@dataclass
class _StepContext:
    driver: DriverSpec
    t: float
    dt: float
    slope_margin: float
    step: int
    flags: list = field(default_factory=list)

    def flag(self, message: str) -> None:
        if message not in self.flags:
            self.flags.append(message)
            log.warning(message)


def _solve_given_mean(ctx: _StepContext, c, v, m, law) -> np.ndarray:
    g = ctx.driver.g
    t, dt = ctx.t, ctx.dt

    def phi(y, idx):
        return y - c[idx] - dt * as_column(g(t, y, v[idx], m, law), idx.size)

    g_c = as_column(g(t, c, v, m, law), c.size)
    radius = dt * np.abs(g_c) / ctx.slope_margin
    return _implicit_roots(phi, c, radius, ctx.step, f_c=-dt * g_c, slope=ctx.slope_margin)


def _solve_mean(ctx: _StepContext, c, v, law) -> np.ndarray:
    """Find ``m`` with ``mean(Y(m)) = m`` and return ``Y(m)``.

    ``m -> m - mean(Y(m))`` is increasing when ``dt (alpha2 + alpha3) < 1``;
    evaluations are cached so the final column comes for free.  A
    non-monotone sample of that map is flagged as possible multiplicity.
    """
    cache: dict[float, np.ndarray] = {}

    def phi(m_arr, idx):
        m = float(m_arr[0])
        if m not in cache:
            cache[m] = _solve_given_mean(ctx, c, v, m, law)
        return np.array([m - K.ordered_mean(cache[m])])

    m0 = np.array([law.mean_first])
    f0 = phi(m0, None)
    radius = 1.5 * np.abs(f0) + 1e-12 * (1.0 + np.abs(m0))
    a3 = ctx.driver.constants.alpha3
    slope = max(1.0 - ctx.dt * a3 / ctx.slope_margin, 1e-3)
    m_star = float(_implicit_roots(phi, m0, radius, ctx.step, f_c=f0, slope=slope)[0])
    y = cache[m_star] if m_star in cache else _solve_given_mean(ctx, c, v, m_star, law)
    ms = np.array(sorted(cache))
    vals = np.array([m - K.ordered_mean(cache[m]) for m in ms])
    if np.any(np.diff(vals) < -1e-12 * (1.0 + np.abs(vals[1:]))):
        ctx.flag(f"step {ctx.step}: mean map not monotone; the law fixed point may not be unique")
    return y


def _implicit_column(ctx: _StepContext, c: np.ndarray, v: np.ndarray, tol_law: float, max_law: int):
    """Solve ``Y = c + dt g(t, Y, v, E[Y], P_(Y, v))`` for one time column."""
    driver = ctx.driver
    if not driver.law_dependent:
        law = JointEmpiricalMeasure(c, v)
        return _solve_given_mean(ctx, c, v, law.mean_first, law), 1
    y_prev = c
    law = JointEmpiricalMeasure(c, v)
    change = np.inf
    for iterations in range(1, max_law + 1):
        y = _solve_mean(ctx, c, v, law)
        if not driver.law_shape_dependent:
            return y, iterations
        diff = y - y_prev
        change = np.sqrt(K.ordered_mean(diff * diff))
        law = JointEmpiricalMeasure(y, v)
        y_prev = y
        if iterations > 1 and change < tol_law:
            return y, iterations
    ctx.flag(f"step {ctx.step}: law refresh stopped after {max_law} rounds (change {change:.2e})")
    return y, max_law


def _regression_paths(X, noise: NoiseBank) -> np.ndarray:
    if X is None:
        return noise.W
    states = X.states if isinstance(X, ParticleEnsemble) else as_f64(X)
    if states.shape != (noise.N, noise.grid.M + 1):
        raise ValueError(f"regression paths have shape {states.shape}, expected {(noise.N, noise.grid.M + 1)}")
    return states


def _terminal_column(terminal, N: int) -> np.ndarray:
    xi = np.ascontiguousarray(np.broadcast_to(as_f64(terminal), (N,)))
    if not np.all(np.isfinite(xi)):
        raise BsdeSolverError("terminal condition is not finite")
    return xi


def check_step_size(driver: DriverSpec, grid: TimeGrid) -> float:
    """Return ``1 - dt * alpha2``; raise if the implicit step may be ill-posed."""
    a2 = driver.constants.alpha2 if driver.constants is not None else 0.0
    margin = 1.0 - grid.dt * a2
    if margin <= 0.0:
        raise ValueError(f"implicit step needs dt * alpha2 < 1, got dt={grid.dt}, alpha2={a2}")
    return margin


def inner_solve_fixed_v(
    driver: DriverSpec,
    terminal,
    V,
    grid: TimeGrid,
    noise: NoiseBank,
    X=None,
    degree: int = 3,
    tol_law: float = 1e-6,
    max_law: int = 10,
) -> BsdeSolution:
    """One backward sweep with the ``z`` argument frozen at ``V`` (shape ``(N, M)``).

    ``X`` supplies the regression state (default: the Brownian paths).
    """
    _check_noise(noise, grid)
    N, M, dt = noise.N, grid.M, grid.dt
    V = np.broadcast_to(as_f64(V), (N, M))
    if not np.all(np.isfinite(V)):
        raise BsdeSolverError("frozen z-process V is not finite")
    margin = check_step_size(driver, grid)
    paths = _regression_paths(X, noise)
    Y = np.empty((N, M + 1), order="F")
    Z = np.empty((N, M), order="F")
    Y[:, M] = _terminal_column(terminal, N)
    times = grid.times
    flags: list = []
    law_iters = 0
    for k in range(M - 1, -1, -1):
        reg = PolynomialRegressor(paths[:, k], degree)
        c, z = conditional_step(reg, Y[:, k + 1], noise.dW[:, k], dt)
        Z[:, k] = z
        ctx = _StepContext(driver, times[k], dt, margin, k, flags)
        y, it = _implicit_column(ctx, c, np.ascontiguousarray(V[:, k]), tol_law, max_law)
        law_iters = max(law_iters, it)
        if not np.all(np.isfinite(y)):
            raise BsdeSolverError(f"non-finite Y at step {k}", {"step": k})
        Y[:, k] = y
    Y.flags.writeable = False
    Z.flags.writeable = False
    return BsdeSolution(Y, Z, grid, law_iterations=law_iters, flags=tuple(flags))


def weighted_gap(a: np.ndarray, b: np.ndarray, grid: TimeGrid, theta: float) -> float:
    """``sum_k exp(theta t_k) E|a_k - b_k|^2 dt`` over the ``M`` left nodes."""
    times = grid.times[:-1]
    total = 0.0
    for k in range(grid.M):
        d = np.ascontiguousarray(a[:, k] - b[:, k])
        total += np.exp(theta * times[k]) * K.ordered_mean(d * d) * grid.dt
    return total


def solve_mf_bsde(
    driver: DriverSpec,
    terminal,
    grid: TimeGrid,
    noise: NoiseBank,
    X=None,
    V0=0.0,
    theta: float | None = None,
    tol_picard: float = 1e-8,
    max_picard: int = 50,
    degree: int = 3,
    tol_law: float = 1e-6,
    max_law: int = 10,
) -> BsdeSolution:
    """Picard iteration over ``Z`` until the weighted residual drops below ``tol_picard``.

    The residual is ``sum_k exp(theta t_k) E|Z^{n+1}_k - Z^n_k|^2 dt``; ``theta``
    defaults to ``2 alpha2 + 2 alpha3 + 8 alpha1^2 + 1`` from the driver's
    constants.  ``y0_bound = sqrt(residual)`` on the final iterate is the
    declared accuracy of ``Y(0)`` with respect to the fixed point.
    """
    if tol_picard <= 0 or max_picard < 1:
        raise ValueError("tol_picard must be positive and max_picard >= 1")
    if theta is None:
        theta = driver.constants.picard_weight() if driver.constants is not None else 1.0
    N, M = noise.N, grid.M
    V = np.array(np.broadcast_to(as_f64(V0), (N, M)), order="F")
    residuals: list[float] = []
    for n in range(1, max_picard + 1):
        sol = inner_solve_fixed_v(driver, terminal, V, grid, noise, X, degree, tol_law, max_law)
        if not driver.z_dependent:
            return _with_picard(sol, n, 0.0, residuals, theta)
        res = weighted_gap(sol.Z, V, grid, theta)
        residuals.append(res)
        log.info("picard %d: residual %.3e", n, res)
        if res < tol_picard:
            return _with_picard(sol, n, res, residuals, theta)
        V = np.asfortranarray(sol.Z)
    raise BsdeSolverError(
        f"Picard iteration did not reach {tol_picard:g} in {max_picard} iterations",
        {"residuals": residuals},
    )


def _with_picard(sol: BsdeSolution, n: int, res: float, residuals, theta) -> BsdeSolution:
    return BsdeSolution(
        sol.Y,
        sol.Z,
        sol.grid,
        picard_iterations=n,
        residual=res,
        residuals=tuple(residuals),
        y0_bound=float(np.sqrt(res)),
        law_iterations=sol.law_iterations,
        flags=sol.flags,
    )


# ---------------------------------------------------------------------------
# adjoint equation
# ---------------------------------------------------------------------------


def terminal_adjoint(problem: ControlProblemSpec, xT: np.ndarray) -> np.ndarray:
    """``h_x(X_i) + (1/N) sum_j h_mu(X_j, mu; X_i)``."""
    law = EmpiricalMeasure.from_samples(xT)
    N = xT.size
    pT = as_column(problem.h_x(xT, law), N)
    if problem.h_mu is not None:
        pT = pT + star_average([pair_term(problem.h_mu, (), (law,))], xT, xT, 1.0)
    return pT


def solve_adjoint(
    problem: ControlProblemSpec,
    Xstar: ParticleEnsemble,
    u: ControlGrid,
    grid: TimeGrid,
    noise: NoiseBank,
    degree: int = 3,
) -> AdjointSolution:
    """Backward recursion for ``(p, q)`` along the state ``Xstar`` and control ``u``.

    The pointwise ``b_x p`` term is implicit; mean, copy-average and ``q``
    terms are evaluated at the predictor ``E[p_{k+1} | X_k]``.  Starred copy
    averages put the kernel's state arguments on the copy and ``y`` on this
    particle; the drift kernels see centred states.
    """
    _check_noise(noise, grid)
    _check_control(problem, u, grid)
    if Xstar.grid != grid:
        raise ValueError("state ensemble and grid disagree")
    N, M, dt = Xstar.N, grid.M, grid.dt
    times = grid.times
    P = np.empty((N, M + 1), order="F")
    Q = np.empty((N, M), order="F")
    P[:, M] = terminal_adjoint(problem, np.ascontiguousarray(Xstar.states[:, M]))
    for k in range(M - 1, -1, -1):
        t = times[k]
        x = np.ascontiguousarray(Xstar.states[:, k])
        law = EmpiricalMeasure.from_samples(x)
        mean = law.mean
        claw = law.centered()
        xc = x - mean
        uk = u.at(k)

        reg = PolynomialRegressor(x, degree)
        c, q = conditional_step(reg, P[:, k + 1], noise.dW[:, k], dt)
        Q[:, k] = q

        bx = as_column(problem.b0_x(t, x, claw, uk), N)
        denom = 1.0 - dt * bx
        if np.any(denom <= 0.0):
            raise BsdeSolverError(
                f"adjoint step {k}: dt * b_x >= 1; refine the grid", {"step": k, "max_bx": float(bx.max())}
            )
        rest = float(np.asarray(problem.b1_m(t, mean, claw))) * K.ordered_mean(c)
        b_terms = []
        if problem.b0_mu is not None:
            b_terms.append(pair_term(problem.b0_mu, (t,), (claw, uk)))
        if problem.b1_mu is not None:
            b_terms.append(law_term(problem.b1_mu, (t, mean, claw)))
        if b_terms:
            rest = rest + star_average(b_terms, x, xc, c)
            kappa = copy_average(b_terms, x, xc, 1.0)
            rest = rest - K.ordered_mean(kappa * c)
        rest = rest + as_column(problem.sigma_x(t, x, law, uk), N) * q
        if problem.sigma_mu is not None:
            rest = rest + star_average([pair_term(problem.sigma_mu, (t,), (law, uk))], x, x, q)
        rest = rest + as_column(problem.f_x(t, x, law, uk), N)
        if problem.f_mu is not None:
            rest = rest + star_average([pair_term(problem.f_mu, (t,), (law, uk))], x, x, 1.0)
        p = (c + dt * rest) / denom
        if not np.all(np.isfinite(p)):
            raise BsdeSolverError(f"adjoint blew up at step {k}", {"step": k})
        P[:, k] = p
    P.flags.writeable = False
    Q.flags.writeable = False
    return AdjointSolution(P, Q, grid)
