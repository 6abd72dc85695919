"""Lifting Lions-derivative kernels to particle averages.

A Lions derivative ``d_mu phi(args; y)`` is supplied as a kernel in the extra
variable ``y``.  Against an empirical law it becomes a double sum over the
particle cloud and an independent copy of it.  Two orientations occur:

``copy_average``  out_i = (1/N) sum_j K(x_i; y_j) w_j   (hat terms, variational eq.)
``star_average``  out_i = (1/N) sum_j K(x_j; y_i) w_j   (starred hat terms, adjoint eq.)

Kernels declared separable, ``K(x; y) = alpha(x) * beta(y)``, take an O(N)
path; everything else is evaluated in row blocks, O(N^2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._kernels import K, as_f64, get_workers

# elements per evaluated kernel block
_BLOCK_ELEMS = 1 << 21


class SeparableKernel:
    """Lions kernel of product form ``alpha(*args) * beta(y)``.

    ``alpha`` takes the same leading arguments as the parent kernel; ``beta``
    takes ``y`` only (``None`` means the kernel is constant in ``y``).
    """

    def __init__(self, alpha: Callable, beta: Callable | None = None):
        self.alpha = alpha
        self.beta = beta

    def __call__(self, *args):
        *head, y = args
        a = self.alpha(*head)
        if self.beta is None:
            return np.broadcast_to(a, np.broadcast_shapes(np.shape(a), np.shape(y))) * 1.0
        return a * self.beta(y)


@dataclass(frozen=True)
class PairTerm:
    """One additive piece of a bivariate kernel ``K(x; y)``.

    Either ``fn(x, y)`` (general) or the pair ``alpha(x)``, ``beta(y)``.
    """

    fn: Callable | None = None
    alpha: Callable | None = None
    beta: Callable | None = None

    @property
    def separable(self) -> bool:
        return self.fn is None


def pair_term(kernel: Callable, head_before: tuple, head_after: tuple = ()) -> PairTerm:
    """Bind the non-state arguments of a Lions kernel.

    The kernel is called as ``kernel(*head_before, x, *head_after, y)``.
    """
    if isinstance(kernel, SeparableKernel):
        beta = kernel.beta
        return PairTerm(
            alpha=lambda x: kernel.alpha(*head_before, x, *head_after),
            beta=beta if beta is not None else (lambda y: 1.0),
        )
    return PairTerm(fn=lambda x, y: kernel(*head_before, x, *head_after, y))


def law_term(kernel: Callable, head: tuple) -> PairTerm:
    """Bind a kernel that has no state argument, ``kernel(*head, y)``."""
    if isinstance(kernel, SeparableKernel):
        beta = kernel.beta
        const = kernel.alpha(*head)
        return PairTerm(
            alpha=lambda x: const,
            beta=beta if beta is not None else (lambda y: 1.0),
        )
    return PairTerm(fn=lambda x, y: kernel(*head, y))


def _full(v, n: int) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(as_f64(v), (n,)))


def _blocks(n_rows: int, n_cols: int) -> list[slice]:
    step = max(1, _BLOCK_ELEMS // max(n_cols, 1))
    return [slice(s, min(s + step, n_rows)) for s in range(0, n_rows, step)]


def _general(fn: Callable, x: np.ndarray, y: np.ndarray, w: np.ndarray, star: bool) -> np.ndarray:
    n = x.size
    out = np.empty(n)

    def run(blk: slice) -> None:
        if star:
            mat = fn(x[None, :], y[blk, None])
        else:
            mat = fn(x[blk, None], y[None, :])
        rows = blk.stop - blk.start
        mat = np.ascontiguousarray(np.broadcast_to(as_f64(mat), (rows, n)))
        out[blk] = K.row_weighted_mean(mat, w)

    blocks = _blocks(n, n)
    workers = get_workers()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for blk in blocks:
            run(blk)
    return out


def _average(terms: Sequence[PairTerm], x, y, w, star: bool) -> np.ndarray:
    x = as_f64(x)
    y = as_f64(y)
    n = x.size
    w = _full(w, n)
    total = np.zeros(n)
    for term in terms:
        if term.separable:
            a = _full(term.alpha(x), n)
            b = _full(term.beta(y), n)
            if star:
                total = total + b * K.ordered_mean(a * w)
            else:
                total = total + a * K.ordered_mean(b * w)
        else:
            total = total + _general(term.fn, x, y, w, star)
    return total


def copy_average(terms: Sequence[PairTerm], x, y, w) -> np.ndarray:
    """``out_i = (1/N) sum_j K(x_i; y_j) w_j`` summed over ``terms``."""
    return _average(terms, x, y, w, star=False)


def star_average(terms: Sequence[PairTerm], x, y, w) -> np.ndarray:
    """``out_i = (1/N) sum_j K(x_j; y_i) w_j`` summed over ``terms``."""
    return _average(terms, x, y, w, star=True)
