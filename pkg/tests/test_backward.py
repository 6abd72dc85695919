import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from mfsmp.backward import (
    BsdeSolverError,
    _implicit_roots,
    check_step_size,
    inner_solve_fixed_v,
    solve_adjoint,
    solve_mf_bsde,
    terminal_adjoint,
)
from mfsmp.coeffs import DRIVERS, DriverSpec, MonotoneConstants, example_driver, lq_problem
from mfsmp.controls import ControlGrid
from mfsmp.forward import NoiseBank, TimeGrid, simulate_controlled


def _driver(name, g, **kw):
    kw.setdefault("z_dependent", False)
    return DriverSpec(name, g, kw.pop("constants", MonotoneConstants()), **kw)


ZERO = _driver("zero", lambda t, y, z, m, law: 0.0 * y, law_dependent=False, law_shape_dependent=False)
MINUS_Y = _driver("minus_y", lambda t, y, z, m, law: -y, law_dependent=False, law_shape_dependent=False)
MEAN_Y = _driver(
    "mean_y", lambda t, y, z, m, law: m + 0.0 * y, constants=MonotoneConstants(alpha3=1.0), law_shape_dependent=False
)


@given(
    st.lists(st.floats(0.05, 5.0), min_size=1, max_size=30),
    st.floats(-50, 50),
    st.integers(0, 2**32 - 1),
)
def test_implicit_roots_solve_increasing_maps(slopes, shift, seed):
    r = np.random.default_rng(seed)
    a = np.array(slopes)
    b = r.normal(scale=10.0, size=a.size) + shift
    # increasing, with slope >= a: a y + y^3 + kink
    phi = lambda y, idx: a[idx] * y + y**3 + np.maximum(y, 0.0) - b[idx]
    c = r.normal(size=a.size)
    roots = _implicit_roots(phi, c, np.full(a.size, 0.01), 0, slope=float(a.min()))
    resid = phi(roots, np.arange(a.size))
    assert np.all(np.abs(resid) <= 1e-10 * (1 + np.abs(b) + np.abs(roots) ** 3))


def test_implicit_roots_exact_start():
    c = np.array([1.0, 2.0])
    out = _implicit_roots(lambda y, idx: y - c[idx], c, np.ones(2), 0)
    np.testing.assert_array_equal(out, c)


def test_step_size_guard():
    drv = example_driver("piecewise_l")
    assert check_step_size(drv, TimeGrid(1.0, 2)) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="alpha2"):
        check_step_size(drv, TimeGrid(1.0, 1))
    with pytest.raises(ValueError):
        solve_mf_bsde(drv, 1.0, TimeGrid(1.0, 1), NoiseBank(0, 200, TimeGrid(1.0, 1)))


def test_zero_driver_deterministic_terminal():
    grid = TimeGrid(1.0, 10)
    sol = inner_solve_fixed_v(ZERO, 1.5, np.zeros((200, 10)), grid, NoiseBank(0, 200, grid))
    np.testing.assert_array_equal(sol.Y, 1.5)
    np.testing.assert_array_equal(sol.Z, 0.0)


def test_linear_decay_oracle():
    grid = TimeGrid(1.0, 200)
    sol = solve_mf_bsde(MINUS_Y, 1.0, grid, NoiseBank(0, 2000, grid))
    assert abs(sol.Y0 - np.exp(-1.0)) <= 5e-3
    assert sol.picard_iterations == 1


def test_mean_driver_oracle():
    grid = TimeGrid(1.0, 200)
    sol = solve_mf_bsde(MEAN_Y, 1.0, grid, NoiseBank(0, 2000, grid))
    assert abs(sol.Y0 - np.e) <= 2e-2


def test_brownian_terminal_representation():
    grid = TimeGrid(1.0, 20)
    N = 10_000
    noise = NoiseBank(1, N, grid)
    sol = solve_mf_bsde(ZERO, noise.W[:, -1], grid, noise)
    assert np.mean(np.abs(sol.Z - 1.0)) <= 0.05
    np.testing.assert_array_equal(sol.Y[:, -1], noise.W[:, -1])
    assert abs(sol.Y0) <= 3 / np.sqrt(N)


def test_terminal_must_be_finite():
    grid = TimeGrid(1.0, 5)
    with pytest.raises(BsdeSolverError):
        solve_mf_bsde(ZERO, np.full(200, np.nan), grid, NoiseBank(0, 200, grid))


@pytest.mark.parametrize("T", [0.3, 0.5])
def test_sqrt_cap_matches_ode(T):
    # deterministic solution: y' = 2 sqrt(y^+ ^ 1) backward from 1, i.e. y(0) = (1 - T)^2
    grid = TimeGrid(T, 400)
    sol = solve_mf_bsde(example_driver("sqrt_cap"), 1.0, grid, NoiseBank(0, 200, grid))
    ode = solve_ivp(lambda s, y: [-2 * np.sqrt(np.clip(y[0], 0, 1))], (0, T), [1.0], rtol=1e-10, atol=1e-12)
    oracle = ode.y[0, -1]
    assert oracle == pytest.approx((1 - T) ** 2, rel=1e-6)
    assert abs(sol.Y0 - oracle) <= 0.01 * oracle
    assert sol.picard_iterations == 1


def test_z_independent_driver_single_pass():
    grid = TimeGrid(1.0, 20)
    sol = solve_mf_bsde(example_driver("oscillating_g"), 0.5, grid, NoiseBank(0, 500, grid))
    assert sol.picard_iterations == 1 and sol.residual == 0.0


def _picard_driver(name):
    return example_driver(name) if name == "piecewise_l" else example_driver(name, f1="clamped_linear")


@pytest.mark.parametrize("name", DRIVERS)
def test_picard_residuals_contract(name):
    grid = TimeGrid(1.0, 100)
    noise = NoiseBank(3, 500, grid)
    sol = solve_mf_bsde(_picard_driver(name), noise.W[:, -1], grid, noise)
    r = sol.residuals
    assert len(r) >= 2 and r[-1] < 1e-8
    assert all(b <= a for a, b in zip(r[1:], r[2:]))
    assert sol.y0_bound == pytest.approx(np.sqrt(r[-1]))


def test_picard_initializations_agree():
    grid = TimeGrid(1.0, 50)
    noise = NoiseBank(5, 2000, grid)
    drv = example_driver("piecewise_l")
    a = solve_mf_bsde(drv, noise.W[:, -1], grid, noise, V0=0.0)
    b = solve_mf_bsde(drv, noise.W[:, -1], grid, noise, V0=1.0)
    assert abs(a.Y0 - b.Y0) < 2 * max(a.y0_bound, b.y0_bound)


def test_picard_failure_carries_residuals():
    grid = TimeGrid(1.0, 20)
    noise = NoiseBank(0, 500, grid)
    with pytest.raises(BsdeSolverError) as info:
        solve_mf_bsde(example_driver("piecewise_l"), noise.W[:, -1], grid, noise, max_picard=2, tol_picard=1e-14)
    assert len(info.value.diagnostics["residuals"]) == 2


def test_column_stats_shape():
    grid = TimeGrid(1.0, 4)
    sol = solve_mf_bsde(MINUS_Y, 1.0, grid, NoiseBank(0, 200, grid))
    rows = sol.column_stats()
    assert len(rows) == 5 and np.isnan(rows[-1]["mean_Z"]) and rows[-1]["mean_Y"] == 1.0


# adjoint ---------------------------------------------------------------------------


def _adjoint(P, u0, M=20, N=500, seed=0):
    grid = TimeGrid(P.T, M)
    noise = NoiseBank(seed, N, grid)
    u = ControlGrid.for_problem(P, u0, M)
    X = simulate_controlled(P, u, grid, noise)
    return X, solve_adjoint(P, X, u, grid, noise), u, grid, noise


def test_adjoint_deterministic_lq():
    X, adj, *_ = _adjoint(lq_problem(), -0.5)
    np.testing.assert_allclose(adj.p, 0.5, atol=1e-14)
    np.testing.assert_allclose(adj.q, 0.0, atol=1e-14)


def test_adjoint_mean_terminal_cost():
    P = lq_problem(g=0.0, gbar=1.0, sigma0=1.0)
    X, adj, *_ = _adjoint(P, 0.0)
    np.testing.assert_allclose(adj.p[:, -1], np.mean(X.terminal), rtol=1e-12)


def test_adjoint_vanishes_without_costs():
    X, adj, *_ = _adjoint(lq_problem(g=0.0, sigma0=1.0, kappa=0.3), 0.2)
    np.testing.assert_array_equal(adj.p, 0.0)
    np.testing.assert_array_equal(adj.q, 0.0)


def test_adjoint_terminal_consistency():
    P = lq_problem(gbar=0.7, sigma0=0.5, kappa=0.2)
    X, adj, *_ = _adjoint(P, 0.1)
    np.testing.assert_array_equal(adj.p[:, -1], terminal_adjoint(P, np.ascontiguousarray(X.terminal)))


@pytest.mark.parametrize("lam", [0.5, 3.0])
def test_adjoint_linear_in_costs(lam):
    P = lq_problem(q=0.4, qbar=0.3, gbar=0.7, sigma0=0.5, kappa=0.2, abar=0.2)
    X, adj, u, grid, noise = _adjoint(P, 0.1)
    scaled = solve_adjoint(P.scaled_costs(lam), X, u, grid, noise)
    np.testing.assert_allclose(scaled.p, lam * adj.p, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(scaled.q, lam * adj.q, rtol=1e-8, atol=1e-10)


def test_adjoint_rejects_mismatched_grid():
    P = lq_problem()
    X, adj, u, grid, noise = _adjoint(P, 0.0)
    with pytest.raises(ValueError):
        solve_adjoint(P, X, u, TimeGrid(1.0, 21), NoiseBank(0, 500, TimeGrid(1.0, 21)))
