"""Random-probe spot checks of the assumptions a coefficient author asserts.

Nothing here proves an assumption; each probe samples points, reports the
worst case, and leaves the verdict to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..measure import EmpiricalMeasure, JointEmpiricalMeasure
from .specs import ControlProblemSpec, DriverSpec, as_column, as_matrix


@dataclass
class ProbeReport:
    name: str
    worst: float
    passed: bool
    details: dict = field(default_factory=dict)


def monotone_probe(
    driver: DriverSpec,
    rng: np.random.Generator,
    n_pairs: int = 1000,
    span: float = 10.0,
    n_law: int = 64,
) -> ProbeReport:
    """Check ``(f(y) - f(y')) (y - y') <= alpha2 |y - y'|^2`` on random pairs."""
    if driver.constants is None:
        raise ValueError(f"driver {driver.name!r} declares no constants")
    a2 = driver.constants.alpha2
    law = JointEmpiricalMeasure(rng.normal(size=n_law), rng.normal(size=n_law))
    y = rng.uniform(-span, span, n_pairs)
    yp = rng.uniform(-span, span, n_pairs)
    z = rng.normal(size=n_pairs)
    lhs = (driver.f(0.0, y, z, law) - driver.f(0.0, yp, z, law)) * (y - yp)
    excess = lhs - a2 * (y - yp) ** 2
    worst = float(np.max(excess / np.maximum((y - yp) ** 2, 1e-300)))
    return ProbeReport(f"monotone[{driver.name}]", worst, worst <= 1e-12, {"alpha2": a2})


def _fd(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def _close(fd, an, rel_tol):
    fd = np.asarray(fd, dtype=float)
    an = np.asarray(an, dtype=float)
    err = np.abs(fd - an) / np.maximum(1.0, np.abs(an))
    return float(np.max(err))


def derivative_probe(
    problem: ControlProblemSpec,
    rng: np.random.Generator,
    n_probes: int = 100,
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    n_law: int = 16,
    x_span: float = 2.0,
    avoid=None,
) -> ProbeReport:
    """Central differences against every supplied derivative handle.

    ``avoid(x) -> bool mask`` drops probe points near kink sets.  Lions
    kernels are checked by moving one particle ``j`` of an ``n_law`` cloud:
    ``d/de phi(mu with x_j + e) = kernel(...; x_j) / n_law``.
    """
    m = problem.u_dim
    worst: dict[str, float] = {}

    def record(key, val):
        worst[key] = max(worst.get(key, 0.0), val)

    t = 0.5 * problem.T
    for _ in range(n_probes):
        cloud = rng.normal(scale=x_span / 2, size=n_law)
        law = EmpiricalMeasure.from_samples(cloud)
        claw = law.centered()
        x = np.array([rng.uniform(-x_span, x_span)])
        if avoid is not None and (np.any(avoid(x)) or np.any(avoid(np.array([law.mean])))):
            continue
        lo = np.where(np.isfinite(problem.u_lo), problem.u_lo, -2.0)
        hi = np.where(np.isfinite(problem.u_hi), problem.u_hi, 2.0)
        u = rng.uniform(lo, hi)

        record("b0_x", _close(_fd(lambda s: as_column(problem.b0(t, s, claw, u), 1), x, step),
                              as_column(problem.b0_x(t, x, claw, u), 1), rel_tol))
        record("sigma_x", _close(_fd(lambda s: as_column(problem.sigma(t, s, law, u), 1), x, step),
                                 as_column(problem.sigma_x(t, x, law, u), 1), rel_tol))
        record("f_x", _close(_fd(lambda s: as_column(problem.f(t, s, law, u), 1), x, step),
                             as_column(problem.f_x(t, x, law, u), 1), rel_tol))
        record("h_x", _close(_fd(lambda s: as_column(problem.h(s, law), 1), x, step),
                             as_column(problem.h_x(x, law), 1), rel_tol))
        mm = law.mean
        record("b1_m", _close(_fd(lambda s: float(np.asarray(problem.b1(t, s, claw))), mm, step),
                              float(np.asarray(problem.b1_m(t, mm, claw))), rel_tol))
        for name, parent, deriv in (
            ("b0_u", lambda uu: problem.b0(t, x, claw, uu), problem.b0_u(t, x, claw, u)),
            ("sigma_u", lambda uu: problem.sigma(t, x, law, uu), problem.sigma_u(t, x, law, u)),
            ("f_u", lambda uu: problem.f(t, x, law, uu), problem.f_u(t, x, law, u)),
        ):
            an = as_matrix(deriv, 1, m)[0]
            for k in range(m):
                e = np.zeros(m)
                e[k] = step
                fd = (as_column(parent(u + e), 1) - as_column(parent(u - e), 1)) / (2 * step)
                record(name, _close(fd, an[k], rel_tol))

        j = int(rng.integers(n_law))
        moved = lambda eps, base: EmpiricalMeasure.from_samples(
            np.where(np.arange(n_law) == j, base + eps, base)
        )
        c_samples = cloud - cloud.mean()
        lions = (
            ("b0_mu", problem.b0_mu,
             lambda lw: problem.b0(t, x, lw, u), (t, x, claw, u), c_samples),
            ("b1_mu", problem.b1_mu,
             lambda lw: problem.b1(t, mm, lw), (t, mm, claw), c_samples),
            ("sigma_mu", problem.sigma_mu,
             lambda lw: problem.sigma(t, x, lw, u), (t, x, law, u), cloud),
            ("f_mu", problem.f_mu,
             lambda lw: problem.f(t, x, lw, u), (t, x, law, u), cloud),
            ("h_mu", problem.h_mu,
             lambda lw: problem.h(x, lw), (x, law), cloud),
        )
        for name, kernel, parent, head, base in lions:
            fd = (
                np.asarray(parent(moved(step, base)), dtype=float)
                - np.asarray(parent(moved(-step, base)), dtype=float)
            ) / (2 * step)
            an = 0.0 if kernel is None else np.asarray(kernel(*head, base[j]), dtype=float) / n_law
            record(name, _close(np.ravel(fd), np.ravel(an) * np.ones(np.size(fd)), rel_tol))

    overall = max(worst.values()) if worst else 0.0
    return ProbeReport(f"derivatives[{problem.name}]", overall, overall <= rel_tol, worst)


def hamiltonian_convexity_probe(
    problem: ControlProblemSpec,
    rng: np.random.Generator,
    n_segments: int = 1000,
    span: float = 2.0,
    pq: tuple[np.ndarray, np.ndarray] | None = None,
    n_law: int = 32,
) -> ProbeReport:
    """Midpoint convexity of ``(x, m, u) -> H`` and ``(x, m) -> h`` on random segments.

    The law enters through its mean ``m`` (a fixed centred shape is shifted),
    matching the split the drift uses.  ``pq`` supplies adjoint values to
    sample from; otherwise ``p, q`` are uniform on ``[-span, span]``.
    """
    shape = rng.normal(size=n_law)
    shape -= shape.mean()
    t = 0.5 * problem.T
    lo = np.where(np.isfinite(problem.u_lo), problem.u_lo, -span)
    hi = np.where(np.isfinite(problem.u_hi), problem.u_hi, span)
    m_dim = problem.u_dim

    def H(x, m, u, p, q):
        law = EmpiricalMeasure.from_samples(shape + m)
        claw = law.centered()
        xa = np.array([x])
        bt = as_column(problem.b0(t, xa, claw, u), 1)[0] + float(np.asarray(problem.b1(t, m, claw)))
        return bt * p + as_column(problem.sigma(t, xa, law, u), 1)[0] * q + as_column(
            problem.f(t, xa, law, u), 1
        )[0]

    def hterm(x, m):
        law = EmpiricalMeasure.from_samples(shape + m)
        return as_column(problem.h(np.array([x]), law), 1)[0]

    worst_H = 0.0
    worst_h = 0.0
    violations = 0
    for _ in range(n_segments):
        if pq is None:
            p, q = rng.uniform(-span, span, 2)
        else:
            idx = int(rng.integers(np.size(pq[0])))
            p, q = float(np.ravel(pq[0])[idx]), float(np.ravel(pq[1])[idx])
        x1, x2, m1, m2 = rng.uniform(-span, span, 4)
        u1 = rng.uniform(lo, hi, m_dim)
        u2 = rng.uniform(lo, hi, m_dim)
        mid = H(0.5 * (x1 + x2), 0.5 * (m1 + m2), 0.5 * (u1 + u2), p, q)
        chord = 0.5 * (H(x1, m1, u1, p, q) + H(x2, m2, u2, p, q))
        gap_H = mid - chord
        gap_h = hterm(0.5 * (x1 + x2), 0.5 * (m1 + m2)) - 0.5 * (hterm(x1, m1) + hterm(x2, m2))
        tol = 1e-10 * (1.0 + abs(chord))
        if gap_H > tol or gap_h > 1e-10:
            violations += 1
        worst_H = max(worst_H, gap_H)
        worst_h = max(worst_h, gap_h)
    return ProbeReport(
        f"convexity[{problem.name}]",
        max(worst_H, worst_h),
        violations == 0,
        {"violations": violations, "segments": n_segments, "worst_H": worst_H, "worst_h": worst_h},
    )
