import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magray.dynamics import (first_conjugate_time, generator, integrate, linearized_flow,
                             unit_speed_defect)
from magray.geometry import ConformalSurface, ForceField

from conftest import TWO_PI, modes


def test_flat_geodesics_are_straight(flat16):
    traj = integrate(flat16, ForceField.magnetic(flat16), (0.1, 0.2, 0.6), 7.0, 1e-2)
    expected = np.array([0.1, 0.2]) + traj.t[:, None] * np.array([np.cos(0.6), np.sin(0.6)])
    assert np.max(np.abs(traj.lift - expected)) < 1e-12


@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
def test_constant_field_orbits_are_circles(flat16, b):
    traj = integrate(flat16, ForceField.magnetic(flat16, b), (1.0, 1.0, 0.3), TWO_PI / b, 1e-3)
    # centre lies a distance 1/b to the left of the velocity
    centre = np.array([1.0, 1.0]) + np.array([-np.sin(0.3), np.cos(0.3)]) / b
    radii = np.linalg.norm(traj.lift - centre, axis=1)
    assert np.max(np.abs(radii - 1 / b)) < 1e-10
    assert np.linalg.norm(traj.lift[-1] - traj.lift[0]) < 1e-10


def test_unit_speed_is_preserved(curved, magnetic_field):
    traj = integrate(curved, magnetic_field, (0.3, 0.1, 2.0), 5.0, 1e-2)
    assert unit_speed_defect(curved, traj) < 1e-14


def test_linearization_matches_finite_differences(curved, magnetic_field):
    p, T, h = np.array([0.3, 1.1, 0.4]), 2.0, 1e-6
    lin = linearized_flow(curved, magnetic_field, p, T, 1e-3)
    fd = np.column_stack([
        (integrate(curved, magnetic_field, p + h * e, T, 1e-3).points[-1]
         - integrate(curved, magnetic_field, p - h * e, T, 1e-3).points[-1]) / (2 * h)
        for e in np.eye(3)])
    assert np.allclose(lin.jac, fd, atol=1e-7)
    # Liouville measure e^{2 phi} dx dy dtheta is preserved
    w = lambda q: np.exp(2 * curved.phi_field.value(q[0], q[1]))
    assert np.linalg.det(lin.jac) == pytest.approx(w(p) / w(lin.end), rel=1e-9)


def test_generator_of_thermostat_adds_lambda(flat16):
    F = ForceField.thermostat(flat16, 0.7)
    assert generator(flat16, F, (0.0, 0.0, 1.0))[2] == pytest.approx(0.7)


def test_conjugate_time_requires_positive_horizon(flat16):
    with pytest.raises(ValueError):
        first_conjugate_time(flat16, ForceField.magnetic(flat16), (0, 0, 0), 0.0)


@settings(max_examples=15, deadline=None)
@given(x=st.floats(0, TWO_PI), y=st.floats(0, TWO_PI), th=st.floats(0, TWO_PI), T=st.floats(0.1, 3.0))
def test_reversal_maps_b_to_minus_b(x, y, th, T):
    s = ConformalSurface(TWO_PI, TWO_PI, 8, 8, modes({"kx": 1, "re": 0.1}))
    b = modes({"re": 0.4}, {"ky": 1, "re": 0.2})
    fwd = integrate(s, ForceField.magnetic(s, b), (x, y, th), T, 1e-2).points[-1]
    minus = modes({"re": -0.4}, {"ky": 1, "re": -0.2})
    back = integrate(s, ForceField.magnetic(s, minus), (fwd[0], fwd[1], fwd[2] + np.pi), T, 1e-2).points[-1]
    assert np.allclose(back[:2], [x, y], atol=1e-8)
    assert abs(np.angle(np.exp(1j * (back[2] - np.pi - th)))) < 1e-8


def test_generator_conformal_oracle():
    a, x0 = 0.3, 1.1
    s = ConformalSurface(TWO_PI, TWO_PI, 8, 8, modes({"kx": 1, "re": a}))
    rate = generator(s, ForceField.magnetic(s), (x0, 0.0, np.pi / 2))[2]
    assert rate == pytest.approx(np.exp(-a * np.cos(x0)) * a * np.sin(x0), abs=1e-14)


def test_constant_thermostat_orbits_are_circles(flat16):
    c = 0.8
    traj = integrate(flat16, ForceField.thermostat(flat16, c), (0.0, 0.0, 0.0), TWO_PI / c, 1e-3)
    centre = np.array([0.0, 1 / c])
    assert np.max(np.abs(np.linalg.norm(traj.lift - centre, axis=1) - 1 / c)) < 1e-10
