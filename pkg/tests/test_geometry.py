import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magray.geometry import (ConfigError, ConformalSurface, DomainError, ForceField, ModeField,
                             UnsupportedOperation, lorentz_force)

from conftest import TWO_PI, modes


def test_mode_field_roundtrip_and_values():
    f = modes({"kx": 1, "ky": 2, "re": 0.3, "im": -0.2}, {"re": 0.5})
    again = ModeField.from_list(f.to_list(), TWO_PI, TWO_PI)
    x, y = 0.7, 1.9
    expected = 0.5 + np.real((0.3 - 0.2j) * np.exp(1j * (x + 2 * y)))
    assert f.value(x, y) == pytest.approx(expected, abs=1e-14)
    assert again.value(x, y) == pytest.approx(expected, abs=1e-14)


def test_gradient_matches_finite_differences():
    f = modes({"kx": 1, "ky": -1, "re": 0.3, "im": 0.1}, {"ky": 2, "im": 0.2})
    x, y, h = 0.4, 2.2, 1e-6
    gx, gy, _ = f.grad(x, y)
    assert gx == pytest.approx((f.value(x + h, y) - f.value(x - h, y)) / (2 * h), abs=1e-8)
    assert gy == pytest.approx((f.value(x, y + h) - f.value(x, y - h)) / (2 * h), abs=1e-8)


def test_gauss_curvature_closed_form():
    a = 0.2
    s = ConformalSurface(TWO_PI, TWO_PI, 64, 64, modes({"kx": 1, "re": a}))
    expected = a * np.cos(s.X) * np.exp(-2 * a * np.cos(s.X))
    assert np.max(np.abs(s.gauss_curvature() - expected)) < 1e-12
    x = np.array([0.1, 1.3, 4.0])
    assert np.allclose(s.gauss_curvature_at(x, 0.5 + 0 * x), a * np.cos(x) * np.exp(-2 * a * np.cos(x)))


def test_gauss_bonnet_on_torus(curved):
    assert abs(curved.integrate(curved.gauss_curvature())) < 1e-12


def test_christoffels_against_metric_differences(curved):
    p, h = np.array([0.9, 2.3]), 1e-5

    def metric(q):
        return np.exp(2 * curved.phi_field.value(*q)) * np.eye(2)

    dg = np.array([(metric(p + h * e) - metric(p - h * e)) / (2 * h) for e in np.eye(2)])  # dg[l, i, j]
    ginv = np.linalg.inv(metric(p))
    G = np.einsum("kl,lij->kij", ginv, 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg))
    assert np.allclose(curved.christoffels(p), G, atol=1e-8)


def test_spectral_derivatives_and_interpolation(flat16):
    f = np.sin(2 * flat16.X) * np.cos(flat16.Y)
    assert np.allclose(flat16.dx(f), 2 * np.cos(2 * flat16.X) * np.cos(flat16.Y))
    x, y = np.array([0.3, 5.1]), np.array([2.2, 0.05])
    assert np.allclose(flat16.interpolate(f, x, y), np.sin(2 * x) * np.cos(y))


@pytest.mark.parametrize("args", [(TWO_PI, TWO_PI, 7, 8), (TWO_PI, TWO_PI, 8, 6), (-1.0, 1.0, 8, 8)])
def test_surface_validation(args):
    with pytest.raises(ConfigError):
        ConformalSurface(*args)


def test_exact_field_primitive(curved, exact_field):
    assert exact_field.check_primitive() < 1e-12
    assert exact_field.is_exact


def test_thermostat_restrictions(flat16):
    F = ForceField.thermostat(flat16, modes({"j": 1, "re": 0.3}))
    with pytest.raises(UnsupportedOperation):
        F.require_magnetic("decomposition")
    with pytest.raises(DomainError):
        lorentz_force(flat16, F, (0.0, 0.0), np.array([2.0, 0.0]))
    with pytest.raises(ConfigError):
        ForceField.magnetic(flat16, modes({"j": 1, "re": 0.3}))


@settings(max_examples=30, deadline=None)
@given(th=st.floats(0, 2 * np.pi), b=st.floats(-3, 3))
def test_lorentz_force_is_rotated_velocity(th, b):
    s = ConformalSurface.flat(N=8)
    v = np.array([np.cos(th), np.sin(th)])
    Y = lorentz_force(s, ForceField.magnetic(s, b), (0.2, 0.4), v)
    assert Y @ v == pytest.approx(0.0, abs=1e-12)
    assert v[0] * Y[1] - v[1] * Y[0] == pytest.approx(b, abs=1e-12)  # counterclockwise for b > 0
