"""Hot numeric kernels with twin implementations.

Every kernel exists as a plain numpy function and as a numba ``@njit``
function with identical semantics.  The active implementation is chosen once
at import time from the ``MFSMP_BACKEND`` environment variable (``numba`` or
``numpy``); when unset, numba is used if it imports.

All reductions run left to right in a fixed order.  The numpy twins use
``np.cumsum`` (a sequential accumulate) rather than ``np.sum`` (pairwise) so
the two backends agree to round-off and neither depends on thread count.
"""

from __future__ import annotations

import os
import types

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    from numba import njit, prange

    # the bundled TBB is often too old and only produces a warning; prefer OpenMP
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

BACKEND_ENV = "MFSMP_BACKEND"

_WORKERS = 1


# --------------------------------------------------------------------------
# numpy twins
# --------------------------------------------------------------------------


def _np_ordered_sum(x):
    if x.size == 0:
        return 0.0
    return float(np.cumsum(x)[-1])


def _np_ordered_mean(x):
    return _np_ordered_sum(x) / x.size


def _np_sq_diff_mean(a, b):
    d = a - b
    return _np_ordered_sum(d * d) / a.size


def _np_row_weighted_mean(mat, w):
    if mat.shape[1] == 0:
        return np.zeros(mat.shape[0])
    return np.cumsum(mat * w[None, :], axis=1)[:, -1] / mat.shape[1]


def _np_poly_normal_equations(z, targets, degree):
    basis = z[:, None] ** np.arange(degree + 1)[None, :]
    gram = np.cumsum(basis[:, :, None] * basis[:, None, :], axis=0)[-1]
    rhs = np.cumsum(basis[:, :, None] * targets[:, None, :], axis=0)[-1]
    return gram, rhs


def _np_poly_eval(z, coef):
    out = np.full(z.shape, coef[-1])
    for c in coef[-2::-1]:
        out = out * z + c
    return out


def _np_osc_g(y, breaks):
    j = np.searchsorted(breaks, y, side="right") - 1
    out = np.ones_like(y, dtype=float)
    inside = j >= 0
    jj = np.where(inside, j, 0)
    start = breaks[jj]
    even = inside & (jj % 2 == 0)
    odd = inside & (jj % 2 == 1)
    ell = jj // 2
    out = np.where(even, np.cos((ell + 1) * (y - start)), out)
    out = np.where(odd, np.cos(y - start + np.pi), out)
    return out


def _np_osc_g_prime(y, breaks):
    j = np.searchsorted(breaks, y, side="right") - 1
    out = np.zeros_like(y, dtype=float)
    inside = j >= 0
    jj = np.where(inside, j, 0)
    start = breaks[jj]
    even = inside & (jj % 2 == 0)
    odd = inside & (jj % 2 == 1)
    ell = jj // 2
    out = np.where(even, -(ell + 1) * np.sin((ell + 1) * (y - start)), out)
    out = np.where(odd, -np.sin(y - start + np.pi), out)
    return out


def _np_euler_step(x, drift, diff, dw, dt, clamp_factor):
    if clamp_factor > 0.0 and np.isfinite(clamp_factor):
        cap = clamp_factor * (1.0 + np.abs(x))
        clipped = np.clip(drift, -cap, cap)
        n_clamped = int(np.count_nonzero(clipped != drift))
    else:
        clipped = drift
        n_clamped = 0
    return x + clipped * dt + diff * dw, n_clamped


numpy_kernels = types.SimpleNamespace(
    name="numpy",
    ordered_sum=_np_ordered_sum,
    ordered_mean=_np_ordered_mean,
    sq_diff_mean=_np_sq_diff_mean,
    row_weighted_mean=_np_row_weighted_mean,
    poly_normal_equations=_np_poly_normal_equations,
    poly_eval=_np_poly_eval,
    osc_g=_np_osc_g,
    osc_g_prime=_np_osc_g_prime,
    euler_step=_np_euler_step,
)


# --------------------------------------------------------------------------
# numba twins
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_ordered_sum(x):
        s = 0.0
        for i in range(x.size):
            s += x[i]
        return s

    @njit(cache=True)
    def _nb_ordered_mean(x):
        s = 0.0
        for i in range(x.size):
            s += x[i]
        return s / x.size

    @njit(cache=True)
    def _nb_sq_diff_mean(a, b):
        s = 0.0
        for i in range(a.size):
            d = a[i] - b[i]
            s += d * d
        return s / a.size

    @njit(cache=True, parallel=True)
    def _nb_row_weighted_mean(mat, w):
        rows, cols = mat.shape
        out = np.zeros(rows)
        if cols == 0:
            return out
        for i in prange(rows):
            s = 0.0
            for j in range(cols):
                s += mat[i, j] * w[j]
            out[i] = s / cols
        return out

    @njit(cache=True)
    def _nb_poly_normal_equations(z, targets, degree):
        n = z.size
        k = targets.shape[1]
        d = degree + 1
        gram = np.zeros((d, d))
        rhs = np.zeros((d, k))
        powers = np.empty(d)
        for i in range(n):
            p = 1.0
            for a in range(d):
                powers[a] = p
                p *= z[i]
            for a in range(d):
                for b in range(d):
                    gram[a, b] += powers[a] * powers[b]
                for c in range(k):
                    rhs[a, c] += powers[a] * targets[i, c]
        return gram, rhs

    @njit(cache=True)
    def _nb_poly_eval(z, coef):
        out = np.empty(z.size)
        d = coef.size
        for i in range(z.size):
            v = coef[d - 1]
            for a in range(d - 2, -1, -1):
                v = v * z[i] + coef[a]
            out[i] = v
        return out

    @njit(cache=True)
    def _nb_osc_g(y, breaks):
        out = np.empty(y.size)
        for i in range(y.size):
            j = np.searchsorted(breaks, y[i], side="right") - 1
            if j < 0:
                out[i] = 1.0
            elif j % 2 == 0:
                out[i] = np.cos((j // 2 + 1) * (y[i] - breaks[j]))
            else:
                out[i] = np.cos(y[i] - breaks[j] + np.pi)
        return out

    @njit(cache=True)
    def _nb_osc_g_prime(y, breaks):
        out = np.empty(y.size)
        for i in range(y.size):
            j = np.searchsorted(breaks, y[i], side="right") - 1
            if j < 0:
                out[i] = 0.0
            elif j % 2 == 0:
                ell1 = j // 2 + 1
                out[i] = -ell1 * np.sin(ell1 * (y[i] - breaks[j]))
            else:
                out[i] = -np.sin(y[i] - breaks[j] + np.pi)
        return out

    @njit(cache=True)
    def _nb_euler_step(x, drift, diff, dw, dt, clamp_factor):
        out = np.empty(x.size)
        n_clamped = 0
        use_clamp = clamp_factor > 0.0 and np.isfinite(clamp_factor)
        for i in range(x.size):
            b = drift[i]
            if use_clamp:
                cap = clamp_factor * (1.0 + abs(x[i]))
                if b > cap:
                    b = cap
                    n_clamped += 1
                elif b < -cap:
                    b = -cap
                    n_clamped += 1
            out[i] = x[i] + b * dt + diff[i] * dw[i]
        return out, n_clamped

    numba_kernels = types.SimpleNamespace(
        name="numba",
        ordered_sum=_nb_ordered_sum,
        ordered_mean=_nb_ordered_mean,
        sq_diff_mean=_nb_sq_diff_mean,
        row_weighted_mean=_nb_row_weighted_mean,
        poly_normal_equations=_nb_poly_normal_equations,
        poly_eval=_nb_poly_eval,
        osc_g=_nb_osc_g,
        osc_g_prime=_nb_osc_g_prime,
        euler_step=_nb_euler_step,
    )
else:  # pragma: no cover
    numba_kernels = None


def _select_backend() -> types.SimpleNamespace:
    wanted = os.environ.get(BACKEND_ENV, "").strip().lower()
    if wanted == "numpy":
        return numpy_kernels
    if wanted not in ("", "numba"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {wanted!r}")
    if numba_kernels is None:
        if wanted == "numba":
            raise ImportError(f"{BACKEND_ENV}=numba but numba is not importable")
        return numpy_kernels
    return numba_kernels


K = _select_backend()
BACKEND = K.name


def set_workers(n: int) -> int:
    """Cap the worker pool used by particle kernels; returns the effective count.

    Results never depend on this value: row kernels reduce each row
    sequentially and cross-particle sums are serial.
    """
    global _WORKERS
    if n < 1:
        raise ValueError("workers must be >= 1")
    _WORKERS = int(n)
    if HAVE_NUMBA:
        numba.set_num_threads(min(_WORKERS, numba.config.NUMBA_NUM_THREADS))
    return _WORKERS


def get_workers() -> int:
    return _WORKERS


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)
