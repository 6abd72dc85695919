"""Example corpus: monotone, non-Lipschitz drivers and mean-field SDEs.

Three scalar building blocks appear throughout:

* ``sqrt_cap``: ``-sqrt(min(max(y, 0), 1))``, continuous and non-increasing
  but with infinite slope at ``0+``.
* ``g_oscillating``: a C^1 function bounded by 1 built from cosine pieces of
  growing frequency, so ``g'`` is unbounded below while ``g' <= 1``.
* ``l_piecewise``: ``0`` on ``(-inf, 0]``, ``-sqrt(y)`` on ``(0, 1]`` and
  ``-exp(1 - y)`` beyond.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .._kernels import K, as_f64
from .specs import ControlProblemSpec, DriverSpec, MonotoneConstants, SdeCoefficientSpec

# ---------------------------------------------------------------------------
# scalar building blocks
# ---------------------------------------------------------------------------


def sqrt_cap(y):
    return -np.sqrt(np.clip(y, 0.0, 1.0))


def sqrt_cap_prime(y):
    """Derivative off the kink set ``{0, 1}``; infinite slope at 0 is returned as -inf."""
    y = np.asarray(y, dtype=float)
    inside = (y > 0.0) & (y < 1.0)
    with np.errstate(divide="ignore"):
        return np.where(inside, -0.5 / np.sqrt(np.where(inside, y, 1.0)), 0.0)


class _Breakpoints:
    """Lazily grown, cached breakpoint table for ``g_oscillating``."""

    def __init__(self):
        self._lock = threading.Lock()
        self._table = np.array([0.0])

    def _grow(self, upto: float) -> None:
        pts = list(self._table)
        while pts[-1] <= upto:
            j = len(pts) - 1  # index of last breakpoint
            if j % 2 == 0:
                pts.append(pts[-1] + np.pi / (j // 2 + 1))
            else:
                pts.append(pts[-1] + np.pi)
        self._table = np.array(pts)

    def covering(self, upto: float) -> np.ndarray:
        table = self._table
        if table[-1] > upto:
            return table
        if not np.isfinite(upto):
            raise ValueError("oscillating g needs finite arguments")
        with self._lock:
            if self._table[-1] <= upto:
                self._grow(upto)
            return self._table


BREAKPOINTS = _Breakpoints()


def _osc(kernel, y):
    arr = as_f64(y)
    flat = arr.ravel()
    table = BREAKPOINTS.covering(float(flat.max()) if flat.size else 0.0)
    out = kernel(np.ascontiguousarray(flat), table)
    return float(out[0]) if np.ndim(y) == 0 else out.reshape(np.shape(y))


def g_oscillating(y):
    return _osc(K.osc_g, y)


def g_oscillating_prime(y):
    return _osc(K.osc_g_prime, y)


def l_piecewise(y):
    y = np.asarray(y, dtype=float)
    out = np.where(y <= 0.0, 0.0, -np.sqrt(np.clip(y, 0.0, 1.0)))
    out = np.where(y > 1.0, -np.exp(1.0 - np.maximum(y, 1.0)), out)
    return float(out) if out.ndim == 0 else out


def l_piecewise_prime(y):
    """Derivative off the kink set ``{0, 1}``."""
    y = np.asarray(y, dtype=float)
    inside = (y > 0.0) & (y < 1.0)
    with np.errstate(divide="ignore"):
        mid = -0.5 / np.sqrt(np.where(inside, y, 1.0))
    out = np.where(inside, mid, 0.0)
    return np.where(y > 1.0, np.exp(1.0 - np.maximum(y, 1.0)), out)


# ---------------------------------------------------------------------------
# bounded Lipschitz helpers selectable from config
# ---------------------------------------------------------------------------


def _clip(v):
    return np.clip(v, -1.0, 1.0)


BOUNDED_1D: dict[str, Callable] = {
    "zero": lambda v: np.zeros_like(np.asarray(v, dtype=float)),
    "clip": _clip,
    "tanh": np.tanh,
}

BOUNDED_2D: dict[str, Callable] = {
    "zero": lambda a, b: np.zeros(np.broadcast_shapes(np.shape(a), np.shape(b))),
    "clamped_linear": lambda a, b: 0.5 * _clip(a) + 0.5 * _clip(b),
    "offset_clamped": lambda a, b: 0.3 + 0.1 * _clip(a) + 0.1 * _clip(b),
}

# Lipschitz constant of each 2-D helper in its first argument
_LIP_FIRST = {"zero": 0.0, "clamped_linear": 0.5, "offset_clamped": 0.1}


def _pick(table: dict, key: str, what: str) -> Callable:
    try:
        return table[key]
    except KeyError:
        raise ValueError(f"unknown {what} {key!r}; choose from {sorted(table)}") from None


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

DRIVERS = ("sqrt_cap", "oscillating_g", "piecewise_l")


def _law_term(f1: Callable, h2: Callable, f1_key: str, h2_key: str):
    """``f1(z, E[h(m + Y_c, V)])``, skipped entirely when either helper is zero."""
    if f1_key == "zero":
        return None

    def term(z, m, law):
        if h2_key == "zero":
            e = 0.0
        else:
            e = law.expect(lambda a, b: h2(a - law.mean_first + m, b))
        return f1(z, e)

    return term


def example_driver(name: str, f1: str = "zero", h: str = "zero") -> DriverSpec:
    """Driver from the example corpus; ``f1`` and ``h`` select bounded Lipschitz helpers."""
    f1_fn = _pick(BOUNDED_2D, f1, "f1 helper")
    h_fn = _pick(BOUNDED_2D, h, "h helper")
    extra = _law_term(f1_fn, h_fn, f1, h)
    a1 = _LIP_FIRST[f1]

    def with_extra(base):
        if extra is None:
            return base
        return lambda t, y, z, m, law: base(t, y, z, m, law) + extra(z, m, law)

    if name == "sqrt_cap":
        base = lambda t, y, z, m, law: sqrt_cap(y) + sqrt_cap(m)
        return DriverSpec(
            name=name,
            g=with_extra(base),
            constants=MonotoneConstants(alpha1=a1, alpha2=0.0, alpha3=0.0, alpha4=0.0, K=2.0),
            lipschitz_in_y=False,
            z_dependent=extra is not None,
            law_shape_dependent=h != "zero" and extra is not None,
        )
    if name == "oscillating_g":
        base = lambda t, y, z, m, law: np.asarray(g_oscillating(y)) + g_oscillating(m)
        return DriverSpec(
            name=name,
            g=with_extra(base),
            constants=MonotoneConstants(alpha1=a1, alpha2=1.0, alpha3=1.0, alpha4=2.0, K=2.0),
            lipschitz_in_y=False,
            z_dependent=extra is not None,
            law_shape_dependent=h != "zero" and extra is not None,
        )
    if name == "piecewise_l":
        base = lambda t, y, z, m, law: (
            np.asarray(l_piecewise(y)) + l_piecewise(m) + z + law.mean_second
        )
        return DriverSpec(
            name=name,
            g=with_extra(base),
            constants=MonotoneConstants(alpha1=1.0 + a1, alpha2=1.0, alpha3=1.0, alpha4=0.0, K=2.0),
            lipschitz_in_y=False,
            z_dependent=True,
            law_shape_dependent=h != "zero" and extra is not None,
        )
    raise ValueError(f"unknown driver {name!r}; choose from {list(DRIVERS)}")


# ---------------------------------------------------------------------------
# mean-field SDEs
# ---------------------------------------------------------------------------

SDES = ("sqrt_cap_sde", "oscillating_g_sde", "piecewise_l_sde")


def example_sde(
    name: str,
    b1: str = "zero",
    sigma1: str = "offset_clamped",
    h: str = "clip",
    l: str = "clip",
) -> SdeCoefficientSpec:
    """Mean-field SDE from the corpus.

    ``b1``, ``sigma1`` (two-argument) and ``h``, ``l`` (one-argument) select
    bounded Lipschitz helpers for the first two entries; ``piecewise_l_sde``
    has no free helpers.
    """
    if name == "piecewise_l_sde":
        return SdeCoefficientSpec(
            name=name,
            b=lambda t, x, law: np.asarray(l_piecewise(x)) + l_piecewise(law.mean),
            sigma=lambda t, x, law: np.asarray(x, dtype=float) + law.mean,
            constants=MonotoneConstants(alpha2=1.0, alpha3=1.0, K=2.0),
        )

    b1_fn = _pick(BOUNDED_2D, b1, "b1 helper")
    s1_fn = _pick(BOUNDED_2D, sigma1, "sigma1 helper")
    h_fn = _pick(BOUNDED_1D, h, "h helper")
    l_fn = _pick(BOUNDED_1D, l, "l helper")

    def extra_drift(x, law):
        if b1 == "zero":
            return 0.0
        return b1_fn(x, law.expect(h_fn))

    def sigma(t, x, law):
        return s1_fn(x, law.expect(l_fn))

    if name == "sqrt_cap_sde":
        core = lambda x, m: sqrt_cap(x) + sqrt_cap(m)
        consts = MonotoneConstants(alpha2=0.0, alpha3=0.0, K=2.0)
    elif name == "oscillating_g_sde":
        core = lambda x, m: np.asarray(g_oscillating(x)) + g_oscillating(m)
        consts = MonotoneConstants(alpha2=1.0, alpha3=1.0, K=2.0)
    else:
        raise ValueError(f"unknown SDE {name!r}; choose from {list(SDES)}")

    return SdeCoefficientSpec(
        name=name,
        b=lambda t, x, law: core(x, law.mean) + extra_drift(x, law),
        sigma=sigma,
        constants=consts,
    )


def linear_sde(drift_coef: float = -1.0, mean_coef: float = 0.0, vol: float = 0.0) -> SdeCoefficientSpec:
    """``dX = (drift_coef X + mean_coef E[X]) dt + vol dW``."""
    return SdeCoefficientSpec(
        name="linear",
        b=lambda t, x, law: drift_coef * np.asarray(x) + mean_coef * law.mean,
        sigma=lambda t, x, law: vol,
        constants=MonotoneConstants(alpha2=max(drift_coef, 0.0), alpha3=max(mean_coef, 0.0)),
    )


# ---------------------------------------------------------------------------
# control problems built on the corpus
# ---------------------------------------------------------------------------

CONTROLS = ("sqrt_cap_control", "oscillating_g_control")


def example_control(
    name: str,
    sigma0: float = 0.2,
    T: float = 1.0,
    x0: float = 0.5,
    u_box: tuple[float, float] = (-1.0, 1.0),
) -> ControlProblemSpec:
    """Monotone-drift control problems: ``b = core(x) + core(E[X]) + u``, quadratic costs.

    ``oscillating_g_control`` has an unbounded ``b0_x`` from below; it is
    exposed for probing and is not covered by the gradient guarantees.
    """
    if name == "sqrt_cap_control":
        core, core_p = sqrt_cap, sqrt_cap_prime
    elif name == "oscillating_g_control":
        core, core_p = g_oscillating, g_oscillating_prime
    else:
        raise ValueError(f"unknown control problem {name!r}; choose from {list(CONTROLS)}")

    return ControlProblemSpec(
        name=name,
        b0=lambda t, x, claw, u: np.asarray(core(x)) + u[0],
        b1=lambda t, m, claw: float(core(m)),
        sigma=lambda t, x, law, u: sigma0,
        f=lambda t, x, law, u: 0.5 * (np.asarray(x) ** 2 + u[0] ** 2),
        h=lambda x, law: 0.5 * np.asarray(x) ** 2,
        b0_x=lambda t, x, claw, u: core_p(x),
        b0_u=lambda t, x, claw, u: 1.0,
        b1_m=lambda t, m, claw: float(core_p(m)),
        sigma_x=lambda t, x, law, u: 0.0,
        sigma_u=lambda t, x, law, u: 0.0,
        f_x=lambda t, x, law, u: np.asarray(x, dtype=float),
        f_u=lambda t, x, law, u: u[0],
        h_x=lambda x, law: np.asarray(x, dtype=float),
        u_lo=np.array([u_box[0]]),
        u_hi=np.array([u_box[1]]),
        T=T,
        x0=x0,
        params={"sigma0": sigma0},
    )


__all__ = [
    "BOUNDED_1D",
    "BOUNDED_2D",
    "CONTROLS",
    "DRIVERS",
    "SDES",
    "example_control",
    "example_driver",
    "example_sde",
    "g_oscillating",
    "g_oscillating_prime",
    "l_piecewise",
    "l_piecewise_prime",
    "linear_sde",
    "sqrt_cap",
    "sqrt_cap_prime",
]
