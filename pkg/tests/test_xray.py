import numpy as np
import pytest

from magray.geometry import ConfigError, ConformalSurface, ForceField
from magray.lifting import FiberFunction
from magray.tensors import SymTensorField, TensorPair, dmu, jpower_one, random_pair
from magray.xray import (HomotopyClass, discrete_action, find_closed_orbit, magnetic_action,
                         orbit_set, ray_transform, ray_transform_pair, stability_experiment,
                         trajectory_action)

from conftest import TWO_PI


@pytest.fixture(scope="module")
def flat_orbits():
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    return s, F, {(o.homotopy.p, o.homotopy.q): o for o in orbit_set(s, F, pmax=1)}


def test_flat_geodesic_periods_and_actions(flat_orbits):
    s, F, orbits = flat_orbits
    assert len(orbits) == 8
    for (p, q), o in orbits.items():
        length = TWO_PI * np.hypot(p, q)
        assert o.period == pytest.approx(length, abs=1e-8)
        assert o.action == pytest.approx(length, abs=1e-8)  # (1/2) T + (1/2) T at unit speed
        assert o.closure_defect < 1e-8
        assert trajectory_action(s, F, o.trajectory) == pytest.approx(length, abs=1e-8)


def test_ray_transforms_on_flat_orbits(flat_orbits):
    s, F, orbits = flat_orbits
    one = FiberFunction.from_base(np.ones(s.shape), J=1)
    metric = TensorPair(jpower_one(s, 1), SymTensorField.zeros(s, 1))
    dx = TensorPair(SymTensorField(1, np.stack([np.ones(s.shape), np.zeros(s.shape)])),
                    SymTensorField.zeros(s, 0))
    for (p, q), o in orbits.items():
        assert ray_transform(s, F, o, one) == pytest.approx(o.period, rel=1e-12)
        assert ray_transform_pair(s, F, o, metric) == pytest.approx(o.period, rel=1e-12)
        assert ray_transform(s, F, o, lambda x, y, th: np.cos(th)) == pytest.approx(TWO_PI * p, abs=1e-8)
    assert ray_transform_pair(s, F, orbits[(0, 1)], dx) == pytest.approx(0.0, abs=1e-10)
    assert ray_transform_pair(s, F, orbits[(1, 0)], dx) == pytest.approx(TWO_PI, abs=1e-10)


def test_reversed_class_has_same_length(flat_orbits):
    _, _, orbits = flat_orbits
    for (p, q), o in orbits.items():
        assert orbits[(-p, -q)].period == pytest.approx(o.period, abs=1e-8)


def test_coboundaries_integrate_to_zero_on_curved_orbit(curved, exact_field, rng):
    orb = find_closed_orbit(curved, exact_field, HomotopyClass(1, 0))
    assert orb.closure_defect < 1e-8
    for m in (1, 2, 3):
        f = dmu(curved, exact_field, random_pair(curved, m - 1, rng, kmax=3))
        assert abs(ray_transform_pair(curved, exact_field, orb, f)) < 1e-8


def test_discrete_action_matches_continuous(curved, exact_field):
    orb = find_closed_orbit(curved, exact_field, HomotopyClass(0, 1))
    pts = orb.trajectory.lift
    approx = discrete_action(curved, exact_field, pts[:-1], orb.period, HomotopyClass(0, 1))
    assert approx == pytest.approx(orb.action, rel=1e-6)


def test_action_of_fast_straight_line(flat16):
    F = ForceField.magnetic(flat16)
    L = TWO_PI
    t = np.linspace(0, L / 2, 101)
    P = np.column_stack([2 * t, 0 * t])
    V = np.tile([2.0, 0.0], (len(t), 1))
    assert magnetic_action(flat16, F, t, P, V) == pytest.approx(5 * L / 4)


def test_errors(flat16, flat_orbits):
    with pytest.raises(ValueError):
        HomotopyClass(0, 0)
    with pytest.raises(ConfigError):
        magnetic_action(flat16, ForceField.magnetic(flat16, 1.0), [0, 1], np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        stability_experiment(flat16, ForceField.magnetic(flat16), [], None)


def test_shooting_from_perturbed_guess(curved, exact_field):
    ref = find_closed_orbit(curved, exact_field, HomotopyClass(1, 1))
    guess = (ref.start + np.array([2e-3, -1e-3, 5e-3]), ref.period * 1.002)
    orb = find_closed_orbit(curved, exact_field, HomotopyClass(1, 1), method="shooting", guess=guess)
    assert orb.closure_defect < 1e-8
    assert orb.period == pytest.approx(ref.period, abs=1e-7)
    assert np.allclose(orb.trajectory.lifted_displacement, [TWO_PI, TWO_PI], atol=1e-8)
