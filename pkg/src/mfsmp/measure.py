"""Uniform-weight empirical measures on the real line and on the plane."""

from __future__ import annotations

import csv
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._kernels import K, as_f64


class MeasureError(ValueError):
    """Raised for invalid sample clouds or incompatible measures."""


def _checked(values, what: str = "samples") -> np.ndarray:
    arr = as_f64(values).ravel()
    if arr.size == 0:
        raise MeasureError(f"{what} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise MeasureError(f"{what} must be finite")
    return arr


class EmpiricalMeasure:
    """Uniform empirical law of ``N`` real samples, stored sorted ascending.

    Instances are immutable; ``mean`` and ``second_moment`` are computed once
    from the sorted storage, so they do not depend on the input order.
    """

    __slots__ = ("_samples", "mean", "second_moment")

    def __init__(self, sorted_samples: np.ndarray, _trusted: bool = False):
        arr = sorted_samples if _trusted else np.sort(_checked(sorted_samples))
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self._samples = arr
        self.mean = K.ordered_mean(arr)
        self.second_moment = K.ordered_mean(arr * arr)

    @classmethod
    def from_samples(cls, values: Sequence[float] | np.ndarray) -> "EmpiricalMeasure":
        return cls(np.sort(_checked(values)), _trusted=True)

    @property
    def samples(self) -> np.ndarray:
        """Sorted, read-only sample array."""
        return self._samples

    @property
    def size(self) -> int:
        return self._samples.size

    def __len__(self) -> int:
        return self._samples.size

    @property
    def variance(self) -> float:
        return K.ordered_mean((self._samples - self.mean) ** 2)

    def shift(self, a: float) -> "EmpiricalMeasure":
        """Image measure under ``y -> y + a``."""
        return EmpiricalMeasure(self._samples + a, _trusted=True)

    def centered(self) -> "EmpiricalMeasure":
        """Image measure under ``y -> y - mean``."""
        return EmpiricalMeasure(self._samples - self.mean, _trusted=True)

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        vals = np.broadcast_to(as_f64(fn(self._samples)), self._samples.shape)
        return K.ordered_mean(np.ascontiguousarray(vals))

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(N={self.size}, mean={self.mean:.6g}, var={self.variance:.6g})"


class JointEmpiricalMeasure:
    """Uniform empirical law of ``N`` pairs ``(first_i, second_i)``.

    Pairs keep particle order (the coupling matters), so nothing is sorted.
    Drivers read it through ``first``, ``second`` and ``expect``.
    """

    def __init__(self, first, second):
        a = _checked(first, "first component")
        b = _checked(second, "second component")
        if b.size == 1 and a.size > 1:
            b = np.full(a.size, b[0])
        if a.size != b.size:
            raise MeasureError("joint components must have equal length")
        a = a.copy()
        b = b.copy()
        a.flags.writeable = False
        b.flags.writeable = False
        self.first = a
        self.second = b
        self.mean_first = K.ordered_mean(a)
        self.mean_second = K.ordered_mean(b)

    @property
    def size(self) -> int:
        return self.first.size

    @cached_property
    def first_marginal(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.first)

    @cached_property
    def second_marginal(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.second)

    def expect(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
        vals = np.broadcast_to(as_f64(fn(self.first, self.second)), self.first.shape)
        return K.ordered_mean(np.ascontiguousarray(vals))

    def with_first_mean(self, m: float) -> "JointEmpiricalMeasure":
        """Law of ``(Y - E[Y] + m, V)``: same centred first component, new mean."""
        return JointEmpiricalMeasure(self.first - self.mean_first + m, self.second)

    def __repr__(self) -> str:
        return (
            f"JointEmpiricalMeasure(N={self.size}, mean=({self.mean_first:.6g}, "
            f"{self.mean_second:.6g}))"
        )


def from_samples(values: Sequence[float] | np.ndarray) -> EmpiricalMeasure:
    return EmpiricalMeasure.from_samples(values)


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between equal-count uniform measures via the sorted coupling."""
    if mu.size != nu.size:
        raise MeasureError(
            f"wasserstein2 needs equal sample counts, got {mu.size} and {nu.size}; resample first"
        )
    return float(np.sqrt(K.sq_diff_mean(mu.samples, nu.samples)))


def center(values: Sequence[float] | np.ndarray) -> tuple[np.ndarray, float]:
    """Split ``values`` into ``(values - mean, mean)``; order is preserved."""
    arr = _checked(values)
    m = K.ordered_mean(arr)
    return arr - m, m


def write_csv(measure: EmpiricalMeasure, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(measure.samples):
            w.writerow([i, repr(float(v))])
