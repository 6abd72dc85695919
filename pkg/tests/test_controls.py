import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mfsmp.controls import ControlError, ControlGrid, project

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(hnp.arrays(np.float64, (7, 2), elements=finite), st.floats(-5, 0), st.floats(0, 5))
def test_projection_idempotent_and_inside(v, lo, hi):
    box_lo, box_hi = np.array([lo, -1.0]), np.array([hi, np.inf])
    once = project(v, box_lo, box_hi)
    np.testing.assert_array_equal(project(once, box_lo, box_hi), once)
    assert np.all((once >= box_lo) & (once <= box_hi))


@given(hnp.arrays(np.float64, (5, 1), elements=finite), st.floats(1e-3, 10))
def test_step_stays_in_box(direction, eta):
    u = ControlGrid.constant(0.2, 5, -1.0, 1.0)
    out = u.step(direction, eta)
    assert np.all(np.abs(out.values) <= 1.0)


def test_grid_validation():
    with pytest.raises(ControlError, match="outside"):
        ControlGrid(np.array([0.0, 2.0]), -1.0, 1.0)
    with pytest.raises(ControlError, match="finite"):
        ControlGrid(np.array([np.nan]), -1.0, 1.0)
    with pytest.raises(ControlError, match="shape"):
        ControlGrid(np.zeros((3, 2)), -1.0, 1.0)
    u = ControlGrid(np.array([0.0, 0.5]), -1.0, 1.0)
    assert u.values.shape == (2, 1) and u.M == 2 and u.dim == 1
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_perturbation_clip_and_raise():
    u = ControlGrid.constant(0.9, 3, -1.0, 1.0)
    with pytest.raises(ControlError):
        u.perturbed(np.ones((3, 1)), 0.5)
    np.testing.assert_array_equal(u.perturbed(np.ones((3, 1)), 0.5, clip=True).values, 1.0)
    np.testing.assert_allclose(u.perturbed(-np.ones((3, 1)), 0.5).values, 0.4)
