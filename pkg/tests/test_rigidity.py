import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magray.dynamics import integrate
from magray.geometry import ConformalSurface, DomainError, ForceField, UnsupportedOperation
from magray.rigidity import (NormalFieldAlongOrbit, index_form, kbar, kmu, kmu_along,
                             modified_index_form, orbit_kbar, random_normal_fields)

from conftest import TWO_PI


@pytest.fixture(scope="module")
def circle_system():
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s, 0.5)
    return s, F, integrate(s, F, (0.0, 0.0, 0.0), TWO_PI / 0.5, 1e-3)


def test_kmu_reduces_to_twice_curvature_without_field(curved):
    F = ForceField.magnetic(curved)
    for p in [(0.3, 1.2, 0.4), (2.0, 5.0, 3.1)]:
        assert kmu(curved, F, p) == pytest.approx(2 * curved.gauss_curvature_at(p[0], p[1]), abs=1e-14)


def test_kmu_vector_form_matches_closed_form(curved, magnetic_field):
    traj = integrate(curved, magnetic_field, (0.5, 0.9, 2.0), 3.0, 1e-2)
    closed = kmu_along(curved, magnetic_field, traj)
    for i in range(0, len(traj), 37):
        p = traj.points[i]
        assert kmu(curved, magnetic_field, p) == pytest.approx(closed[i], abs=1e-12)
        assert kmu(curved, magnetic_field, p, w_sign=-1.0) == pytest.approx(closed[i], abs=1e-12)


def test_kbar_on_the_circle(circle_system):
    s, F, circle = circle_system
    # k_mu = 6 b^2 = 3/2 along an orbit of period 4 pi
    assert orbit_kbar(s, F, circle) == pytest.approx(24 * np.pi ** 2, rel=1e-12)
    assert kbar(s, F, [circle]) == orbit_kbar(s, F, circle)
    with pytest.raises(ValueError):
        kbar(s, F, [])


@pytest.mark.parametrize("L", [1.0, 2.0, 4.0])
def test_index_form_constant_field_oracle(L):
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s, 0.7)
    traj = integrate(s, F, (0.0, 0.0, 0.3), L, 1e-3)
    Z = NormalFieldAlongOrbit.sine_series(traj.t, [1.0])
    assert index_form(s, F, traj, Z) == pytest.approx(np.pi ** 2 / (2 * L) - 0.49 * L / 2, abs=1e-10)
    assert modified_index_form(s, F, traj, Z) == pytest.approx(np.pi ** 2 / (2 * L) - 6 * 0.49 * L / 2,
                                                               abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), seed=st.integers(0, 2 ** 32 - 1))
def test_forms_are_quadratic(a, seed):
    s = ConformalSurface.flat(N=8)
    F = ForceField.magnetic(s, 0.5)
    traj = integrate(s, F, (0.0, 0.0, 0.0), 3.0, 1e-2)
    Z = random_normal_fields(traj.t, np.random.default_rng(seed), 1)[0]
    aZ = NormalFieldAlongOrbit(a * Z.z, a * Z.zdot)
    for form in (index_form, modified_index_form):
        assert form(s, F, traj, aZ) == pytest.approx(a * a * form(s, F, traj, Z), rel=1e-10, abs=1e-12)


def test_finite_difference_derivative_fallback(circle_system):
    s, F, circle = circle_system
    Z = NormalFieldAlongOrbit.sine_series(circle.t, [1.0, 0.3])
    approx = NormalFieldAlongOrbit(Z.z)
    assert index_form(s, F, circle, approx) == pytest.approx(index_form(s, F, circle, Z), rel=1e-5)


def test_modified_form_positive_on_short_arcs(circle_system):
    # below the Wirtinger length pi / sqrt(6 b^2) the form is positive definite
    s, F, _ = circle_system
    arc = integrate(s, F, (0.0, 0.0, 0.0), 2.4, 1e-3)
    vals = [modified_index_form(s, F, arc, Z) for Z in random_normal_fields(arc.t, np.random.default_rng(1), 50)]
    assert min(vals) > 0


def test_errors(circle_system, flat16):
    s, F, circle = circle_system
    bad = NormalFieldAlongOrbit(np.ones(len(circle)))
    with pytest.raises(DomainError):
        index_form(s, F, circle, bad)
    with pytest.raises(DomainError):
        index_form(s, F, circle, NormalFieldAlongOrbit.sine_series(circle.t[:100], [1.0]))
    with pytest.raises(UnsupportedOperation):
        kmu(flat16, ForceField.thermostat(flat16, 0.2), (0, 0, 0))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_parallelogram_law(seed):
    s = ConformalSurface.flat(N=8)
    F = ForceField.magnetic(s, 0.5)
    traj = integrate(s, F, (0.0, 0.0, 0.0), 3.0, 1e-2)
    Z, W = random_normal_fields(traj.t, np.random.default_rng(seed), 2)
    plus = NormalFieldAlongOrbit(Z.z + W.z, Z.zdot + W.zdot)
    minus = NormalFieldAlongOrbit(Z.z - W.z, Z.zdot - W.zdot)
    q = lambda V: index_form(s, F, traj, V)
    assert q(plus) + q(minus) == pytest.approx(2 * q(Z) + 2 * q(W), abs=1e-9)


def test_index_form_positive_on_flat_geodesics(rng):
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    traj = integrate(s, F, (0.0, 0.0, 0.9), 20.0, 1e-2)
    vals = [index_form(s, F, traj, Z) for Z in random_normal_fields(traj.t, rng, 20)]
    assert min(vals) > 0
    zero = NormalFieldAlongOrbit(np.zeros(len(traj)), np.zeros(len(traj)))
    assert index_form(s, F, traj, zero) == 0.0
    assert kmu(s, F, (1.0, 2.0, 0.3)) == 0.0


def test_kbar_is_monotone_in_the_orbit_set(curved, magnetic_field):
    arcs = [integrate(curved, magnetic_field, (0.1 * i, 0.2, 0.3 * i), 4.0, 1e-2) for i in range(4)]
    values = [kbar(curved, magnetic_field, arcs[:n]) for n in range(1, 5)]
    assert all(b >= a for a, b in zip(values, values[1:]))
