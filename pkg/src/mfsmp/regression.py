"""Least-squares projection on polynomials of one regressor (LSMC).

The regressor is standardized before building monomials, which keeps the
Gram matrix well conditioned at degree 3.  A zero-variance regressor (a
deterministic state) reduces the projection to the column mean.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from ._kernels import K, as_f64

log = logging.getLogger(__name__)

MIN_SAMPLES_PER_COEF = 10
MAX_CONDITION = 1e12


class RegressionError(ValueError):
    pass


class PolynomialRegressor:
    """Projection of targets onto ``span{1, z, ..., z^d}``, ``z`` the standardized regressor."""

    def __init__(self, x, degree: int = 3):
        x = as_f64(x).ravel()
        if degree < 0:
            raise RegressionError("degree must be non-negative")
        self.n = x.size
        mean = K.ordered_mean(x)
        var = K.ordered_mean((x - mean) ** 2)
        scale = np.sqrt(var)
        if not scale > 1e-12 * (1.0 + abs(mean)):
            self.degree = 0
            self.mean_only = True
            self._z = None
            return
        if self.n < MIN_SAMPLES_PER_COEF * (degree + 1):
            raise RegressionError(
                f"{self.n} samples cannot support a degree-{degree} basis "
                f"(need >= {MIN_SAMPLES_PER_COEF * (degree + 1)})"
            )
        self.mean_only = False
        self._z = np.ascontiguousarray((x - mean) / scale)
        self.degree = degree

    def fit(self, targets) -> np.ndarray:
        """Coefficients, shape ``(degree + 1, k)`` for ``(N, k)`` targets."""
        t = as_f64(targets)
        cols = t.reshape(self.n, -1)
        if self.mean_only:
            return np.array([[K.ordered_mean(np.ascontiguousarray(cols[:, j])) for j in range(cols.shape[1])]])
        degree = self.degree
        while True:
            gram, rhs = K.poly_normal_equations(self._z, np.ascontiguousarray(cols), degree)
            cond = np.linalg.cond(gram)
            if cond < MAX_CONDITION or degree == 0:
                break
            log.warning("normal equations ill-conditioned (cond=%.2e); dropping to degree %d", cond, degree - 1)
            degree -= 1
        if degree != self.degree:
            self.degree = degree
        return linalg.solve(gram, rhs, assume_a="pos")

    def project(self, targets) -> np.ndarray:
        """Fitted values at the sample points, same shape as ``targets``."""
        t = as_f64(targets)
        cols = t.reshape(self.n, -1)
        coef = self.fit(cols)
        if self.mean_only:
            out = np.broadcast_to(coef, cols.shape).copy()
        else:
            out = np.empty_like(cols)
            for j in range(cols.shape[1]):
                out[:, j] = K.poly_eval(self._z, np.ascontiguousarray(coef[:, j]))
        return out.reshape(t.shape)


def conditional_step(regressor: PolynomialRegressor, y_next, dW, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(E[Y_next | x], E[Y_next dW | x] / dt)`` at every sample.

    The second estimate regresses ``(Y_next - E[Y_next | x]) dW``; subtracting
    a function of ``x`` leaves the conditional expectation unchanged (``dW``
    has zero conditional mean) and removes most of the variance.  A constant
    ``Y_next`` returns itself with ``Z = 0`` exactly.
    """
    y_next = as_f64(y_next)
    if np.ptp(y_next) == 0.0:
        return y_next.copy(), np.zeros_like(y_next)
    cond = regressor.project(y_next)
    z = regressor.project((y_next - cond) * as_f64(dW)) / dt
    return cond, z


def regress_z(y_next, dW, x, dt: float, degree: int = 3) -> np.ndarray:
    """Martingale-representation estimate ``E[Y_next dW | x] / dt``."""
    return conditional_step(PolynomialRegressor(x, degree), y_next, dW, dt)[1]
