import logging

import numpy as np
import pytest

from mfsmp._kernels import get_workers, set_workers
from mfsmp.coeffs import SdeCoefficientSpec, example_sde, linear_sde, lq_problem
from mfsmp.controls import ControlError, ControlGrid
from mfsmp.forward import (
    NoiseBank,
    SimulationError,
    TimeGrid,
    moment_report,
    simulate_controlled,
    simulate_mkv,
    simulate_variational,
)


@pytest.fixture
def restore_workers():
    before = get_workers()
    yield
    set_workers(before)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 10)
    assert TimeGrid(1.0, 3).times[-1] == 1.0


def test_noise_reproducible_and_spawn_independent():
    grid = TimeGrid(1.0, 20)
    a, b = NoiseBank(3, 500, grid), NoiseBank(3, 500, grid)
    np.testing.assert_array_equal(a.dW, b.dW)
    assert a.dW.flags.f_contiguous and not a.dW.flags.writeable
    c = a.spawn(1)
    assert not np.array_equal(a.dW, c.dW)
    np.testing.assert_array_equal(c.dW, b.spawn(1).dW)
    assert not np.array_equal(a.spawn(2).dW, c.dW)
    # column means within the diagnostic band
    assert np.all(np.abs(a.dW.mean(axis=0)) <= 4 * np.sqrt(grid.dt / 500))


def test_antithetic_rows_mirror():
    grid = TimeGrid(1.0, 5)
    nb = NoiseBank(1, 10, grid, antithetic=True)
    np.testing.assert_array_equal(nb.dW[:5], -nb.dW[5:])
    np.testing.assert_array_equal(nb.W[:, 0], 0.0)


def test_linear_decay_oracle():
    grid = TimeGrid(1.0, 1000)
    ens = simulate_mkv(linear_sde(-1.0), 1.0, grid, NoiseBank(0, 200, grid))
    np.testing.assert_allclose(ens.column(0), 1.0)
    assert abs(ens.terminal[0] - np.exp(-1.0)) <= 2 * grid.dt
    np.testing.assert_allclose(ens.means(), np.exp(-grid.times), atol=2 * grid.dt)
    assert ens.states.flags.f_contiguous and not ens.states.flags.writeable


def test_mean_field_growth_oracle():
    grid = TimeGrid(1.0, 1000)
    ens = simulate_mkv(linear_sde(0.0, 1.0), 1.0, grid, NoiseBank(0, 200, grid))
    assert abs(ens.means()[-1] - np.e) <= 3 * grid.dt * np.e


def test_brownian_variance():
    grid, N = TimeGrid(2.0, 50), 20_000
    ens = simulate_mkv(linear_sde(0.0, 0.0, 1.0), 0.0, grid, NoiseBank(4, N, grid))
    assert abs(np.var(ens.terminal) - 2.0) <= 3 * np.sqrt(2 / N) * 2.0


@pytest.mark.parametrize("drift_coef", [-1.0, -0.5])
def test_weak_error_first_order(drift_coef):
    errs = []
    for M in (100, 200, 400):
        grid = TimeGrid(1.0, M)
        ens = simulate_mkv(linear_sde(drift_coef), 1.0, grid, NoiseBank(0, 100, grid))
        errs.append(abs(ens.means()[-1] - np.exp(drift_coef)) / grid.dt)
    assert max(errs) <= 1.2 * min(errs)


def test_workers_do_not_change_bits(restore_workers):
    grid = TimeGrid(1.0, 40)
    spec = example_sde("sqrt_cap_sde", b1="clamped_linear", h="tanh")
    noise = NoiseBank(9, 3001, grid)
    out = []
    for w in (1, 4, 16):
        set_workers(w)
        out.append(simulate_mkv(spec, 0.3, grid, noise).states)
    for o in out[1:]:
        assert np.array_equal(out[0], o)


def test_nonfinite_state_reports_step():
    spec = SdeCoefficientSpec("bad", b=lambda t, x, law: np.where(t > 0.25, np.nan, 0.0), sigma=lambda t, x, law: 0.0)
    grid = TimeGrid(1.0, 10)
    with pytest.raises(SimulationError) as info:
        simulate_mkv(spec, 0.0, grid, NoiseBank(0, 100, grid))
    assert info.value.step == 3


def test_clamp_is_logged(caplog):
    spec = SdeCoefficientSpec("fast", b=lambda t, x, law: 1e6 * np.ones_like(x), sigma=lambda t, x, law: 0.0)
    grid = TimeGrid(0.1, 2)
    with caplog.at_level(logging.WARNING, logger="mfsmp.forward"):
        ens = simulate_mkv(spec, 0.0, grid, NoiseBank(0, 100, grid))
    assert ens.clamped == 200
    assert "clamped" in caplog.text
    # |b| <= 10 (1 + |x|): first step moves 10 * dt
    assert ens.states[0, 1] == pytest.approx(10 * 0.05)


def test_noise_grid_mismatch():
    with pytest.raises(ValueError, match="grid"):
        simulate_mkv(linear_sde(), 1.0, TimeGrid(1.0, 10), NoiseBank(0, 100, TimeGrid(1.0, 11)))


def test_lq_zero_control_is_static():
    P = lq_problem()
    grid = TimeGrid(1.0, 20)
    ens = simulate_controlled(P, ControlGrid.for_problem(P, 0.0, 20), grid, NoiseBank(0, 100, grid))
    np.testing.assert_array_equal(ens.states, 1.0)


def test_lq_constant_control_integrates_exactly():
    P = lq_problem()
    grid = TimeGrid(1.0, 50)
    ens = simulate_controlled(P, ControlGrid.for_problem(P, -0.5, 50), grid, NoiseBank(0, 100, grid))
    np.testing.assert_allclose(ens.terminal, 0.5, atol=1e-14)


def test_control_outside_box_rejected():
    P = lq_problem(u_box=(0.0, 1.0))
    grid = TimeGrid(1.0, 5)
    u = ControlGrid(np.full((5, 1), 2.0), np.array([-5.0]), np.array([5.0]))
    with pytest.raises(ControlError):
        simulate_controlled(P, u, grid, NoiseBank(0, 100, grid))


def _variational_setup(sigma0=0.5, kappa=0.5):
    P = lq_problem(kappa=kappa, sigma0=sigma0, abar=0.3)
    grid = TimeGrid(1.0, 40)
    noise = NoiseBank(2, 500, grid)
    u = ControlGrid.for_problem(P, -0.2, grid.M)
    return P, grid, noise, u, simulate_controlled(P, u, grid, noise)


def test_variational_zero_direction():
    P, grid, noise, u, X = _variational_setup()
    Z = simulate_variational(P, u, np.zeros((grid.M, 1)), X, noise)
    np.testing.assert_array_equal(Z.states, 0.0)


def test_variational_unit_direction_is_time():
    P = lq_problem()
    grid = TimeGrid(1.0, 30)
    noise = NoiseBank(0, 100, grid)
    u = ControlGrid.for_problem(P, 0.0, grid.M)
    Z = simulate_variational(P, u, np.ones((grid.M, 1)), simulate_controlled(P, u, grid, noise), noise)
    np.testing.assert_allclose(Z.states, np.broadcast_to(grid.times, Z.states.shape), atol=1e-14)


def test_variational_linear_in_direction(rng):
    P, grid, noise, u, X = _variational_setup()
    v = rng.normal(size=(grid.M, 1))
    Z1 = simulate_variational(P, u, v, X, noise).states
    Z2 = simulate_variational(P, u, 2 * v, X, noise).states
    np.testing.assert_array_equal(Z2, 2 * Z1)


def test_variational_matches_finite_differences():
    P, grid, noise, u, X = _variational_setup()
    v = np.ones((grid.M, 1))
    Z = simulate_variational(P, u, v, X, noise).states
    errs = []
    for theta in (0.1, 0.05, 0.025):
        Xt = simulate_controlled(P, u.perturbed(v, theta), grid, noise).states
        errs.append(np.max(np.mean(((Xt - X.states) / theta - Z) ** 2, axis=0)))
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3


def test_moment_report_deterministic_and_brownian():
    grid = TimeGrid(1.0, 10)
    ens = simulate_mkv(linear_sde(0.0), -2.0, grid, NoiseBank(0, 100, grid))
    for p in (2, 4, 8):
        rep = moment_report(ens, p)
        assert rep["sup_moment"] == pytest.approx(2.0**p) and rep["finite"]
    with pytest.raises(ValueError):
        moment_report(ens, 3)
    grid = TimeGrid(1.0, 100)
    bm = simulate_mkv(linear_sde(0.0, 0.0, 1.0), 0.0, grid, NoiseBank(1, 100_000, grid))
    rep = moment_report(bm, 2)
    assert 1.0 <= rep["sup_moment"] <= 4.0
    assert rep["max_marginal_moment"] == pytest.approx(1.0, abs=0.02)


def test_bounded_diffusion_sde_fourth_moment_stable_under_refinement():
    spec = example_sde("sqrt_cap_sde", b1="clamped_linear", h="tanh")
    vals = []
    for M in (50, 100, 200):
        grid = TimeGrid(1.0, M)
        vals.append(moment_report(simulate_mkv(spec, -1.0, grid, NoiseBank(0, 4000, grid)), 4)["sup_moment"])
    assert all(np.isfinite(vals))
    assert max(vals) <= 1.5 * min(vals)


def test_propagation_of_chaos_rate():
    # std of the terminal mean across independent banks should halve when N quadruples
    P = lq_problem(sigma0=1.0)
    grid = TimeGrid(1.0, 10)
    u = ControlGrid.for_problem(P, -0.5, grid.M)
    spread = []
    for N in (500, 2000):
        means = [simulate_controlled(P, u, grid, NoiseBank(s, N, grid)).means()[-1] for s in range(40)]
        spread.append(np.std(means))
    assert 1.3 <= spread[0] / spread[1] <= 3.0
