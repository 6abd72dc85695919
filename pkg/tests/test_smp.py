import dataclasses

import numpy as np
import pytest

from mfsmp.backward import solve_adjoint
from mfsmp.coeffs import SeparableKernel, example_control, lq_problem
from mfsmp.controls import ControlGrid
from mfsmp.forward import NoiseBank, TimeGrid, simulate_controlled, simulate_variational
from mfsmp.measure import EmpiricalMeasure
from mfsmp.smp import (
    OptimizeOptions,
    cost,
    cost_gradient,
    duality_check,
    hamiltonian,
    optimize,
    projected_gradient_norm,
    smp_residual,
    sufficiency_probe,
)


def _state(P, u0, M=20, N=200, seed=0, antithetic=False):
    grid = TimeGrid(P.T, M)
    noise = NoiseBank(seed, N, grid, antithetic)
    u = ControlGrid.for_problem(P, u0, M)
    X = simulate_controlled(P, u, grid, noise)
    return grid, noise, u, X, solve_adjoint(P, X, u, grid, noise)


# hamiltonian and cost --------------------------------------------------------------


def test_hamiltonian_lq_closed_form(rng):
    P = lq_problem()
    law = EmpiricalMeasure.from_samples(rng.normal(size=16))
    for u, p in rng.normal(size=(10, 2)):
        h = hamiltonian(P, 0.3, 0.7, law.mean, law.centered(), law, u, p, 5.0)
        assert h == pytest.approx(u * p + 0.5 * u * u, abs=1e-14)


def test_hamiltonian_without_adjoint_is_running_cost(rng):
    P = lq_problem(q=0.5, qbar=0.2, a=0.3, sigma0=1.0)
    law = EmpiricalMeasure.from_samples(rng.normal(size=16))
    x = rng.normal(size=5)
    h = hamiltonian(P, 0.0, x, law.mean, law.centered(), law, [0.4], 0.0, 0.0)
    np.testing.assert_allclose(h, P.f(0.0, x, law, np.array([0.4])))


def test_hamiltonian_zero_point():
    law = EmpiricalMeasure.from_samples([-1.0, 1.0])
    assert hamiltonian(lq_problem(), 0.0, 0.0, 0.0, law.centered(), law, 0.0, 2.0, 3.0) == 0.0


def test_cost_terminal_only():
    P = lq_problem(g=2.0, x0=1.5)
    grid, noise, u, X, _ = _state(P, 0.0)
    assert cost(P, X, u) == pytest.approx(1.5**2, abs=1e-14)


def test_cost_lq_reference_control():
    P = lq_problem()
    grid, noise, u, X, _ = _state(P, -0.5, M=50)
    assert cost(P, X, u) == pytest.approx(0.25, abs=1e-14)


def test_cost_mean_field_variant():
    P = lq_problem(g=0.0, gbar=1.0, sigma0=1.0)
    _, _, u, X, _ = _state(P, -0.5, N=4000, seed=3)
    assert cost(P, X, u) == pytest.approx(0.25, abs=0.02)
    _, _, u, X, _ = _state(P, -0.5, N=4000, seed=3, antithetic=True)
    assert cost(P, X, u) == pytest.approx(0.25, abs=1e-12)


# gradient -------------------------------------------------------------------------------


def test_gradient_at_zero_control_is_one():
    P = lq_problem()
    grid, noise, u, X, adj = _state(P, 0.0)
    np.testing.assert_allclose(cost_gradient(P, X, adj, u), 1.0, atol=1e-14)


def test_gradient_decoupled_control():
    P = lq_problem(c=0.0, r=2.0, sigma0=0.5)
    grid, noise, u, X, adj = _state(P, 0.3)
    np.testing.assert_allclose(cost_gradient(P, X, adj, u), 0.6, atol=1e-14)


@pytest.mark.parametrize("theta", [1e-2, 1e-3])
def test_gradient_matches_common_noise_difference(theta):
    P = lq_problem(kappa=0.5, sigma0=0.5)
    grid, noise, u, X, adj = _state(P, 0.0, M=25, N=2000, seed=1)
    v = np.ones((grid.M, 1))
    up = u.perturbed(v, theta)
    fd = (cost(P, simulate_controlled(P, up, grid, noise), up) - cost(P, X, u)) / theta
    an = float(np.sum(cost_gradient(P, X, adj, u) * v)) * grid.dt
    assert abs(fd - an) <= 0.05 * abs(an)


# residual ---------------------------------------------------------------------------------


def test_residual_at_optimum_and_away():
    P = lq_problem(u_box=(-2.0, 2.0))
    _, _, u, X, adj = _state(P, -0.5)
    assert smp_residual(P, X, u, adj)["residual"] < 1e-12
    _, _, u, X, adj = _state(P, 0.0)
    res = smp_residual(P, X, u, adj)
    assert res["residual"] == pytest.approx(1.0)
    np.testing.assert_allclose(res["per_step"], 1.0)


def test_residual_active_bound_only_inward():
    # optimum -0.5 lies below the box; at u = 0 the gradient points outward
    P = lq_problem(u_box=(0.0, 1.0))
    _, _, u, X, adj = _state(P, 0.0)
    assert smp_residual(P, X, u, adj)["residual"] == 0.0


def test_residual_decoupled_control():
    P = lq_problem(c=0.0, sigma0=1.0)
    _, _, u, X, adj = _state(P, 0.0)
    assert smp_residual(P, X, u, adj)["residual"] == 0.0


# duality ------------------------------------------------------------------------------------


def test_duality_zero_direction():
    P = lq_problem(kappa=0.5, sigma0=0.5)
    grid, noise, u, X, adj = _state(P, -0.2)
    rep = duality_check(P, X, u, adj, np.zeros((grid.M, 1)), noise=noise)
    assert rep["lhs"] == 0.0 and rep["rhs"] == 0.0


def test_duality_pure_lq_exact():
    P = lq_problem()
    grid, noise, u, X, adj = _state(P, -0.3, M=100)
    rep = duality_check(P, X, u, adj, np.ones((grid.M, 1)), noise=noise)
    # Z_T = T and p = X_T = 0.7
    assert rep["lhs"] == pytest.approx(0.7, abs=1e-12)
    assert rep["abs_error"] <= 1e-12


def test_duality_terminal_only_cost():
    P = lq_problem(kappa=0.5, sigma0=0.5)
    grid, noise, u, X, adj = _state(P, -0.2, M=50, N=2000)
    rep = duality_check(P, X, u, adj, np.ones((grid.M, 1)), noise=noise)
    assert rep["abs_error"] <= max(0.02 * abs(rep["lhs"]), 3 * rep["standard_error"])


def test_duality_needs_noise_or_z():
    P = lq_problem()
    grid, noise, u, X, adj = _state(P, 0.0)
    with pytest.raises(ValueError):
        duality_check(P, X, u, adj, np.ones((grid.M, 1)))


# sufficiency --------------------------------------------------------------------------------


def test_sufficiency_lq_convex(rng):
    assert sufficiency_probe(lq_problem(q=1.0, qbar=0.5, gbar=0.5), rng).passed


def test_sufficiency_concave_running_cost(rng):
    P = lq_problem()
    concave = dataclasses.replace(P, f=lambda t, x, law, u: -0.5 * u[0] ** 2 + 0.0 * np.asarray(x))
    rep = sufficiency_probe(concave, rng)
    assert not rep.passed and rep.details["violations"] > 0


def test_sufficiency_sqrt_drift(rng):
    rep = sufficiency_probe(example_control("sqrt_cap_control"), rng)
    assert not rep.passed


def test_sufficiency_sample_floor(rng):
    with pytest.raises(ValueError):
        sufficiency_probe(lq_problem(), rng, samples=999)


# optimizer ------------------------------------------------------------------------------------


def test_options_validation():
    with pytest.raises(ValueError):
        OptimizeOptions(tol=0.0)
    with pytest.raises(ValueError):
        OptimizeOptions(backtrack=1.0)


def _run(P, u0, M=20, N=200, **opts):
    grid = TimeGrid(P.T, M)
    return optimize(P, ControlGrid.for_problem(P, u0, M), grid, NoiseBank(0, N, grid), OptimizeOptions(**opts))


def test_lq_optimizer_reaches_oracle():
    rep = _run(lq_problem(u_box=(-2.0, 2.0)), 0.0)
    assert rep.converged and rep.iterations <= 50
    np.testing.assert_allclose(rep.control.values, -0.5, atol=0.01)
    assert rep.final_cost == pytest.approx(0.25, rel=0.01)
    assert rep.residual < 3 * OptimizeOptions().tol


def test_optimal_start_takes_no_steps():
    rep = _run(lq_problem(), -0.5)
    assert rep.converged and rep.iterations == 0 and rep.costs == [pytest.approx(0.25)]


def test_constrained_optimum_on_boundary():
    rep = _run(lq_problem(u_box=(0.0, 1.0)), 0.7)
    assert rep.converged
    np.testing.assert_allclose(rep.control.values, 0.0, atol=1e-12)
    assert rep.residual <= 1e-2


def test_iterates_remain_admissible():
    rep = _run(lq_problem(u_box=(-0.3, 1.0)), 1.0)
    np.testing.assert_allclose(rep.control.values, -0.3)
    assert rep.converged


def test_descent_certificate_on_fixed_noise():
    P = lq_problem(kappa=0.5, sigma0=0.5, u_box=(-2.0, 2.0))
    rep = _run(P, 0.8, N=500, fresh_noise=False, max_iters=15, tol=1e-6)
    assert all(b <= a for a, b in zip(rep.costs, rep.costs[1:]))


def test_constant_cost_shift_leaves_control():
    P = lq_problem(kappa=0.5, sigma0=0.5, u_box=(-2.0, 2.0))
    base = _run(P, 0.0, N=500)
    shifted = _run(P.shifted_costs(f_shift=0.3, h_shift=-0.2), 0.0, N=500)
    np.testing.assert_allclose(shifted.control.values, base.control.values, atol=1e-6)
    np.testing.assert_allclose(np.array(shifted.costs) - np.array(base.costs), 0.3 * P.T - 0.2, atol=1e-10)
    assert shifted.final_cost - base.final_cost == pytest.approx(0.1, abs=1e-10)


def test_line_search_failure_reported():
    rep = _run(lq_problem(), 0.0, min_eta=0.9)
    assert rep.status == "line_search_failed" and rep.iterations == 0


def test_max_iters_status():
    rep = _run(lq_problem(kappa=0.5, sigma0=0.5), 0.8, N=500, max_iters=1, tol=1e-9)
    assert rep.status == "max_iters" and rep.iterations == 1 and len(rep.costs) == 2


def test_projected_gradient_norm_zero_at_active_bound():
    u = ControlGrid.constant(0.0, 4, 0.0, 1.0)
    assert projected_gradient_norm(u, np.full((4, 1), 3.0)) == 0.0
    assert projected_gradient_norm(u, np.full((4, 1), -0.5)) == 0.5


# drift depending on the centred law's shape --------------------------------------------------


def _law_shape_problem():
    """LQ plus ``-x E[tanh(Y_c)] / 2`` in ``b0`` (general kernel) and ``0.3 Var`` in ``b1`` (separable)."""
    base = lq_problem(sigma0=0.5, kappa=0.3)
    return dataclasses.replace(
        base,
        b0=lambda t, x, claw, u: base.b0(t, x, claw, u) - 0.5 * np.asarray(x) * claw.expect(np.tanh),
        b0_x=lambda t, x, claw, u: base.b0_x(t, x, claw, u) - 0.5 * claw.expect(np.tanh),
        b0_mu=lambda t, x, claw, u, y: -0.5 * np.asarray(x) * (1 - np.tanh(y) ** 2),
        b1=lambda t, m, claw: 0.2 * m + 0.3 * claw.expect(np.square),
        b1_m=lambda t, m, claw: 0.2,
        b1_mu=SeparableKernel(lambda t, m, claw: 0.6, lambda y: np.asarray(y)),
    )


def test_law_shape_terms_gradient_duality_and_variation():
    P = _law_shape_problem()
    grid, noise, u, X, adj = _state(P, 0.0, M=50, N=4000, seed=11)
    v = np.ones((grid.M, 1))
    an = float(np.sum(cost_gradient(P, X, adj, u) * v)) * grid.dt
    for theta in (1e-2, 1e-3):
        up = u.perturbed(v, theta)
        fd = (cost(P, simulate_controlled(P, up, grid, noise), up) - cost(P, X, u)) / theta
        assert abs(fd - an) <= 0.05 * abs(an)
    rep = duality_check(P, X, u, adj, v, noise=noise)
    assert rep["abs_error"] <= max(0.02 * abs(rep["lhs"]), 3 * rep["standard_error"])
    Z = simulate_variational(P, u, v, X, noise).states
    errs = []
    for theta in (0.1, 0.05, 0.025):
        Xt = simulate_controlled(P, u.perturbed(v, theta), grid, noise).states
        errs.append(np.max(np.mean(((Xt - X.states) / theta - Z) ** 2, axis=0)))
    assert errs[0] >= 3 * errs[1] >= 9 * errs[2]
