import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfsmp import lions, set_workers
from mfsmp.lions import SeparableKernel, copy_average, law_term, pair_term, star_average


def brute(kernel, x, y, w, star):
    n = x.size
    out = np.empty(n)
    for i in range(n):
        if star:
            out[i] = np.mean([kernel(x[j], y[i]) * w[j] for j in range(n)])
        else:
            out[i] = np.mean([kernel(x[i], y[j]) * w[j] for j in range(n)])
    return out


def general(x, y):
    return np.sin(x) * y + np.tanh(x - y)


@given(st.integers(1, 25), st.integers(0, 2**32 - 1), st.booleans())
def test_general_term_matches_double_loop(n, seed, star):
    r = np.random.default_rng(seed)
    x, y, w = r.normal(size=(3, n))
    avg = star_average if star else copy_average
    got = avg([pair_term(lambda a, b: general(a, b), ())], x, y, w)
    np.testing.assert_allclose(got, brute(general, x, y, w, star), rtol=1e-12, atol=1e-13)


@given(st.integers(1, 25), st.integers(0, 2**32 - 1), st.booleans())
def test_separable_path_matches_general_path(n, seed, star):
    r = np.random.default_rng(seed)
    x, y, w = r.normal(size=(3, n))
    sep = SeparableKernel(lambda t, a: t * a**2, np.cos)
    avg = star_average if star else copy_average
    fast = avg([pair_term(sep, (0.7,))], x, y, w)
    slow = avg([pair_term(lambda t, a, b: sep(t, a, b), (0.7,))], x, y, w)
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-13)


def test_constant_in_y_kernel_and_law_term():
    x = np.array([0.0, 1.0, 2.0])
    const = SeparableKernel(lambda m: 2.0 * m)
    out = copy_average([law_term(const, (1.5,))], x, x, np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out, 3.0 * 2.0)


def test_terms_add():
    x = np.linspace(-1, 1, 7)
    t1 = pair_term(lambda a, b: a * b, ())
    t2 = pair_term(lambda a, b: a + b, ())
    both = copy_average([t1, t2], x, x, 1.0)
    np.testing.assert_allclose(both, copy_average([t1], x, x, 1.0) + copy_average([t2], x, x, 1.0), atol=1e-15)


def test_blocked_threaded_result_is_worker_independent(monkeypatch, rng):
    monkeypatch.setattr(lions, "_BLOCK_ELEMS", 512)  # force many blocks
    x, w = rng.normal(size=(2, 300))
    term = [pair_term(lambda a, b: np.exp(-((a - b) ** 2)), ())]
    try:
        set_workers(1)
        one = star_average(term, x, x, w)
        set_workers(4)
        four = star_average(term, x, x, w)
    finally:
        set_workers(1)
    np.testing.assert_array_equal(one, four)
