"""Linear-quadratic mean-field benchmark family with analytic derivatives."""

from __future__ import annotations

import numpy as np

from ..lions import SeparableKernel
from .specs import ControlProblemSpec, MonotoneConstants


def lq_problem(
    a: float = 0.0,
    abar: float = 0.0,
    c: float = 1.0,
    q: float = 0.0,
    qbar: float = 0.0,
    r: float = 1.0,
    g: float = 1.0,
    gbar: float = 0.0,
    sigma0: float = 0.0,
    T: float = 1.0,
    x0: float = 1.0,
    u_box: tuple[float, float] = (-np.inf, np.inf),
    kappa: float = 0.0,
) -> ControlProblemSpec:
    """Scalar mean-field LQ problem.

    Dynamics ``dX = (a X - kappa X^3 + abar E[X] + c u) dt + sigma0 dW``,
    running cost ``(q X^2 + qbar E[X]^2 + r u^2) / 2``, terminal cost
    ``(g X^2 + gbar E[X]^2) / 2``.  ``kappa >= 0`` adds a monotone cubic that
    makes the state nonlinear in the control without breaking the one-sided
    bound on ``b0_x``.
    """
    if not r > 0:
        raise ValueError(f"r must be positive for a strictly convex problem, got {r}")
    for label, v in (("q", q), ("qbar", qbar), ("g", g), ("gbar", gbar), ("kappa", kappa)):
        if v < 0:
            raise ValueError(f"{label} must be non-negative, got {v}")
    if T <= 0:
        raise ValueError("T must be positive")

    params = dict(
        a=a, abar=abar, c=c, q=q, qbar=qbar, r=r, g=g, gbar=gbar,
        sigma0=sigma0, T=T, x0=x0, u_box=tuple(u_box), kappa=kappa,
    )

    def b0(t, x, claw, u):
        x = np.asarray(x, dtype=float)
        return a * x - kappa * x**3 + c * u[0]

    def b0_x(t, x, claw, u):
        return a - 3.0 * kappa * np.asarray(x, dtype=float) ** 2

    return ControlProblemSpec(
        name="lq",
        b0=b0,
        b1=lambda t, m, claw: abar * m,
        sigma=lambda t, x, law, u: sigma0,
        f=lambda t, x, law, u: 0.5 * (q * np.asarray(x) ** 2 + qbar * law.mean**2 + r * u[0] ** 2),
        h=lambda x, law: 0.5 * (g * np.asarray(x) ** 2 + gbar * law.mean**2),
        b0_x=b0_x,
        b0_u=lambda t, x, claw, u: c,
        b1_m=lambda t, m, claw: abar,
        sigma_x=lambda t, x, law, u: 0.0,
        sigma_u=lambda t, x, law, u: 0.0,
        f_x=lambda t, x, law, u: q * np.asarray(x, dtype=float),
        f_u=lambda t, x, law, u: r * u[0],
        h_x=lambda x, law: g * np.asarray(x, dtype=float),
        f_mu=SeparableKernel(lambda t, x, law, u: qbar * law.mean) if qbar else None,
        h_mu=SeparableKernel(lambda x, law: gbar * law.mean) if gbar else None,
        u_lo=np.array([u_box[0]], dtype=float),
        u_hi=np.array([u_box[1]], dtype=float),
        T=T,
        x0=x0,
        constants=MonotoneConstants(alpha2=max(a, 0.0), alpha3=max(abar, 0.0)),
        params=params,
    )


def lq_open_loop_optimum(x0: float, T: float, r: float = 1.0, c: float = 1.0) -> tuple[float, float]:
    """Constant optimal control and cost for ``b = c u``, ``f = r u^2 / 2``, ``h = x^2 / 2``.

    Minimizes ``r u^2 T / 2 + (x0 + c u T)^2 / 2`` over constants (the optimum
    is constant in time for this problem).  The same numbers hold with
    ``h = E[X]^2 / 2`` because the noise drops out of the mean.
    """
    u = -c * x0 / (r + c * c * T)
    J = 0.5 * r * u * u * T + 0.5 * (x0 + c * u * T) ** 2
    return u, J
