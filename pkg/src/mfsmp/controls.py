"""Deterministic open-loop controls on a time grid, constrained to a box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ControlError(ValueError):
    """Control values outside the admissible box or of the wrong shape."""


def project(values, lo, hi) -> np.ndarray:
    """Componentwise projection onto the box ``[lo, hi]``."""
    return np.clip(np.asarray(values, dtype=float), lo, hi)


@dataclass(frozen=True)
class ControlGrid:
    """Control values ``u_k`` for steps ``k = 0..M-1``, shape ``(M, m)``."""

    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if vals.ndim != 2 or vals.shape[1] != lo.size or lo.shape != hi.shape:
            raise ControlError(f"control shape {vals.shape} does not match box dimension {lo.size}")
        if not np.all(np.isfinite(vals)):
            raise ControlError("control values must be finite")
        if np.any(vals < lo) or np.any(vals > hi):
            bad = int(np.argmax(np.any((vals < lo) | (vals > hi), axis=1)))
            raise ControlError(f"control at step {bad} = {vals[bad]} lies outside [{lo}, {hi}]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def constant(cls, value, M: int, lo, hi) -> "ControlGrid":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        return cls(np.tile(np.broadcast_to(np.asarray(value, dtype=float), lo.shape), (M, 1)), lo, hi)

    @classmethod
    def for_problem(cls, problem, value, M: int) -> "ControlGrid":
        return cls.constant(value, M, problem.u_lo, problem.u_hi)

    @classmethod
    def projected(cls, values, lo, hi) -> "ControlGrid":
        return cls(project(values, lo, hi), lo, hi)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    def step(self, direction, eta: float) -> "ControlGrid":
        """``Pi_U(u - eta * direction)``."""
        return ControlGrid.projected(self.values - eta * np.asarray(direction), self.lo, self.hi)

    def perturbed(self, v: "ControlGrid | np.ndarray", theta: float, clip: bool = False) -> "ControlGrid":
        """``u + theta v``; raises if outside the box unless ``clip``."""
        dv = v.values if isinstance(v, ControlGrid) else np.asarray(v, dtype=float).reshape(self.values.shape)
        new = self.values + theta * dv
        return ControlGrid.projected(new, self.lo, self.hi) if clip else ControlGrid(new, self.lo, self.hi)
