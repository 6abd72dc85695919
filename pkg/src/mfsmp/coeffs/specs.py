"""Function-valued coefficient specifications.

All handles are vectorized over particles: the state argument is an array and
the result broadcasts against it.  Law arguments are ``EmpiricalMeasure``
(or ``JointEmpiricalMeasure`` for drivers).  Controls are deterministic per
time step and arrive as a length-``m`` array shared by every particle.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..lions import SeparableKernel
from ..measure import EmpiricalMeasure, JointEmpiricalMeasure


@dataclass(frozen=True)
class MonotoneConstants:
    """Constants asserted by the author of a driver or SDE.

    ``alpha1``: Lipschitz constant in ``z`` and in the law of ``z``.
    ``alpha2``: one-sided bound in ``y`` (or ``x``).
    ``alpha3``: one-sided bound in the mean.
    ``alpha4``: bound on the driver at the origin.
    ``K``: linear growth constant.
    """

    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    alpha4: float = 0.0
    K: float = 1.0

    def picard_weight(self) -> float:
        """Default exponential weight for the Picard residual."""
        return 2.0 * self.alpha2 + 2.0 * self.alpha3 + 8.0 * self.alpha1**2 + 1.0


@dataclass(frozen=True)
class DriverSpec:
    """Mean-field BSDE driver.

    ``g(t, y, z, m, law)`` is the split form: ``law`` is the joint cloud of
    ``(Y, V)`` and ``m`` overrides its first-component mean (the cloud's first
    component is read as centred and shifted to ``m``).  ``f`` evaluates the
    driver at the law's own mean.
    """

    name: str
    g: Callable
    constants: Optional[MonotoneConstants] = None
    lipschitz_in_y: bool = False
    z_dependent: bool = True
    law_dependent: bool = True
    # False when the law enters only through E[Y] and the (frozen) z-component
    law_shape_dependent: bool = True

    def f(self, t: float, y, z, law: JointEmpiricalMeasure) -> np.ndarray:
        return np.asarray(self.g(t, y, z, law.mean_first, law), dtype=float)

    __call__ = f

    @classmethod
    def from_f(cls, name: str, fn: Callable, **kwargs) -> "DriverSpec":
        """Wrap a plain ``fn(t, y, z, law)`` driver."""

        def g(t, y, z, m, law):
            if m != law.mean_first:
                law = law.with_first_mean(m)
            return fn(t, y, z, law)

        return cls(name=name, g=g, **kwargs)


@dataclass(frozen=True)
class SdeCoefficientSpec:
    """Mean-field SDE ``dX = b(t, X, P_X) dt + sigma(t, X, P_X) dW``."""

    name: str
    b: Callable
    sigma: Callable
    constants: Optional[MonotoneConstants] = None


@dataclass(frozen=True)
class ControlProblemSpec:
    """Controlled mean-field system with running cost ``f`` and terminal cost ``h``.

    Drift is split as ``b(t, x, mu, u) = b0(t, x, mu_c, u) + b1(t, E[mu], mu_c)``
    with ``mu_c`` the centred law.  Lions-derivative kernels take the parent's
    arguments followed by ``y``; ``None`` means identically zero.  For ``b0_mu``
    and ``b1_mu`` the kernel variable ``y`` lives on the centred law.
    """

    name: str
    b0: Callable
    b1: Callable
    sigma: Callable
    f: Callable
    h: Callable
    b0_x: Callable
    b0_u: Callable
    b1_m: Callable
    sigma_x: Callable
    sigma_u: Callable
    f_x: Callable
    f_u: Callable
    h_x: Callable
    b0_mu: Optional[Callable] = None
    b1_mu: Optional[Callable] = None
    sigma_mu: Optional[Callable] = None
    f_mu: Optional[Callable] = None
    h_mu: Optional[Callable] = None
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-np.inf]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([np.inf]))
    T: float = 1.0
    x0: float = 0.0
    constants: Optional[MonotoneConstants] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("u_lo and u_hi must have the same length")
        if np.any(lo > hi):
            raise ValueError("empty control box: u_lo > u_hi")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "u_lo", lo)
        object.__setattr__(self, "u_hi", hi)

    @property
    def u_dim(self) -> int:
        return self.u_lo.size

    def drift(self, t: float, x, law: EmpiricalMeasure, u) -> np.ndarray:
        claw = law.centered()
        return as_column(self.b0(t, x, claw, u), np.size(x)) + self.b1(t, law.mean, claw)

    def diffusion(self, t: float, x, law: EmpiricalMeasure, u) -> np.ndarray:
        return as_column(self.sigma(t, x, law, u), np.size(x))

    def kernels(self) -> dict:
        return {
            "b0_mu": self.b0_mu,
            "b1_mu": self.b1_mu,
            "sigma_mu": self.sigma_mu,
            "f_mu": self.f_mu,
            "h_mu": self.h_mu,
        }

    def scaled_costs(self, lam: float) -> "ControlProblemSpec":
        """Same dynamics, running and terminal costs multiplied by ``lam``."""
        return _replace(
            self,
            f=_scale(self.f, lam),
            f_x=_scale(self.f_x, lam),
            f_u=_scale(self.f_u, lam),
            f_mu=_scale(self.f_mu, lam),
            h=_scale(self.h, lam),
            h_x=_scale(self.h_x, lam),
            h_mu=_scale(self.h_mu, lam),
            name=f"{self.name}*{lam!r}",
        )

    def shifted_costs(self, f_shift: float = 0.0, h_shift: float = 0.0) -> "ControlProblemSpec":
        """Add constants to ``f`` and ``h``; derivatives are unchanged."""
        f0, h0 = self.f, self.h
        return _replace(
            self,
            f=lambda t, x, law, u: f0(t, x, law, u) + f_shift,
            h=lambda x, law: h0(x, law) + h_shift,
            name=f"{self.name}+const",
        )


def _replace(spec: ControlProblemSpec, **changes) -> ControlProblemSpec:
    return dataclasses.replace(spec, **changes)


def _scale(fn: Optional[Callable], lam: float) -> Optional[Callable]:
    if fn is None:
        return None
    if isinstance(fn, SeparableKernel):
        alpha = fn.alpha
        return SeparableKernel(lambda *a: lam * np.asarray(alpha(*a)), fn.beta)
    return lambda *a: lam * np.asarray(fn(*a))


def as_column(v, n: int) -> np.ndarray:
    """Broadcast a handle result to a float array of shape ``(n,)``."""
    return np.ascontiguousarray(np.broadcast_to(np.asarray(v, dtype=float), (n,)))


def as_matrix(v, n: int, m: int) -> np.ndarray:
    """Broadcast a control-derivative result to shape ``(n, m)``.

    Accepts scalars, ``(m,)``, ``(n,)`` (when ``m == 1``) and ``(n, m)``.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1 and arr.size == n and m == 1 and n != 1:
        arr = arr[:, None]
    return np.ascontiguousarray(np.broadcast_to(arr, (n, m)))
