import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import j0

from magray.dynamics import rk4_step
from magray.geometry import ConfigError, ConformalSurface, DomainError, ForceField
from magray.lifting import apply_generator, pullback
from magray.normal_op import (CutoffProfile, NormalOpConfig, _solenoidal_polarization, c_nm,
                              flow_average_at, jacobian_at_zero, normal_apply,
                              polar_jacobian, sm_volume, stationary_phase_symbol, symbol_probe,
                              thermostat_normal_apply, truncated_scalar_symbol)
from magray.tensors import SymTensorField, TensorPair, dmu, inner, norm, random_pair, random_symtensor

from conftest import TWO_PI, modes


@pytest.fixture(scope="module")
def cutoff():
    return CutoffProfile(2.0, n_t=129)


def test_cutoff_shape(cutoff):
    assert cutoff(0.0)[0] == pytest.approx(1.0)
    assert np.allclose(cutoff.values, cutoff.values[::-1])
    assert np.all(cutoff(np.array([2.0, 2.5, -3.0])) == 0.0)
    assert np.all(cutoff.values >= 0) and np.all(cutoff.values <= 1 + 1e-15)


def test_cutoff_node_spectrum_is_nonnegative(cutoff):
    values = cutoff.node_spectrum()
    assert values.min() >= -1e-13 * values.max()


def test_cutoff_derivative(cutoff):
    t, h = np.array([-1.3, -0.2, 0.4, 1.7]), 1e-5
    fd = (cutoff(t + h) - cutoff(t - h)) / (2 * h)
    assert np.allclose(cutoff.derivative(t), fd, atol=1e-8)


@pytest.mark.parametrize("kwargs", [{"epsilon": 0.0}, {"n_t": 64}, {"n_t": 33}])
def test_cutoff_validation(kwargs):
    with pytest.raises(ConfigError):
        CutoffProfile(**kwargs)


def test_normalizing_constants():
    assert c_nm(2, 0) == pytest.approx(np.pi)
    assert c_nm(2, 1) == pytest.approx(np.pi / 2)
    assert c_nm(3, 0) == pytest.approx(2.0)


def test_flat_stationary_phase_symbol_is_isotropic():
    # 4 pi / |k| on the solenoidal polarisation, for every rank
    for m in range(4):
        k = np.array([3.0, 4.0])
        P = _solenoidal_polarization(k, m)
        out = stationary_phase_symbol(m, k, P)
        assert np.allclose(out, 4 * np.pi / 5 * P)


def test_scalar_multiplier_against_quadrature(cutoff):
    exact = 2 * np.pi * quad(lambda t: cutoff(t)[0] * j0(3 * t), -2, 2, limit=200)[0]
    assert truncated_scalar_symbol(cutoff, 3.0) == pytest.approx(exact, abs=1e-8)


def test_flat_cosine_example(cutoff):
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    cfg = NormalOpConfig(cutoff, n_theta=32)
    f = TensorPair(SymTensorField.function(np.cos(s.X)))
    out = normal_apply(s, F, f, cfg).p.comps[0]
    mult = 2 * np.pi * quad(lambda t: cutoff(t)[0] * j0(t), -2, 2, limit=200)[0]
    assert np.max(np.abs(out - mult * np.cos(s.X))) < 1e-9


def test_constant_function(cutoff, curved, magnetic_field):
    cfg = NormalOpConfig(cutoff, n_theta=16)
    one = TensorPair(SymTensorField.function(np.ones(curved.shape)))
    out = normal_apply(curved, magnetic_field, one, cfg).p.comps[0]
    assert np.allclose(out, 2 * np.pi * cutoff.integral + 2 * np.pi, atol=1e-10)
    assert sm_volume(curved) == pytest.approx(2 * np.pi * curved.integrate(np.ones(curved.shape)))


@pytest.mark.parametrize("m", [0, 1, 2])
def test_normal_operator_is_self_adjoint(m, rng):
    s = ConformalSurface(TWO_PI, TWO_PI, 16, 16, modes({"kx": 1, "re": 0.05}))
    F = ForceField.magnetic(s, modes({"re": 0.4}, {"ky": 1, "re": 0.1}))
    cfg = NormalOpConfig(CutoffProfile(1.0, n_t=65), n_theta=32)
    f, g = random_pair(s, m, rng, kmax=2), random_pair(s, m, rng, kmax=2)
    a = inner(s, normal_apply(s, F, f, cfg), g)
    b = inner(s, f, normal_apply(s, F, g, cfg))
    assert abs(a - b) <= 1e-9 * abs(a)


def test_integration_by_parts_along_the_flow(curved, magnetic_field, rng, cutoff):
    w = pullback(curved, random_symtensor(curved, 1, rng, kmax=2), J=3)
    Fw = apply_generator(curved, magnetic_field, w, J_out=3)
    cfg = NormalOpConfig(cutoff, n_theta=16)
    z0 = np.array([0.8, 2.1, 1.2])
    lhs = flow_average_at(curved, magnetic_field, Fw, *z0, cfg)
    # oracle: -int chi'(t) w(phi_t z) dt on the same RK4 nodes
    acc = cutoff.weights[cutoff.half] * cutoff.derivative(0.0)[0] * w.evaluate(curved, *z0)
    for sign in (1, -1):
        z = z0.copy()
        for i in range(1, cutoff.half + 1):
            z = rk4_step(curved, magnetic_field, z, sign * cutoff.step)
            acc += cutoff.step * cutoff.derivative(sign * i * cutoff.step)[0] * w.evaluate(curved, *z)
    assert lhs == pytest.approx(-acc, abs=1e-7)


def test_symbol_independent_of_cutoff_width():
    s = ConformalSurface.flat(N=128)
    F = ForceField.magnetic(s)
    vals = []
    for eps in (1.0, 2.0):
        cfg = NormalOpConfig(CutoffProfile(eps, n_t=129), n_theta=256)
        vals.append(symbol_probe(s, F, 0, (16, 0), cfg)["rows"][0]["measured"].real)
    assert abs(vals[0] - vals[1]) <= 0.08 * abs(vals[1])
    assert vals[1] == pytest.approx(4 * np.pi / 16, rel=0.12)


def test_symbol_probe_guards():
    s = ConformalSurface.flat(N=32)
    F = ForceField.magnetic(s)
    with pytest.raises(ConfigError):
        symbol_probe(s, F, 0, (0, 0))
    with pytest.raises(ConfigError):
        symbol_probe(s, F, 0, (1, 0))  # |k| eps too small
    with pytest.raises(ConfigError):
        normal_apply(s, F, random_pair(s, 3, np.random.default_rng(0)), NormalOpConfig(n_theta=8))


def test_polar_jacobian_domain(flat16):
    F = ForceField.thermostat(flat16, 0.5)
    with pytest.raises(DomainError):
        polar_jacobian(flat16, F, 0.0, 0.0, 0.0, [0.0, 0.1])
    with pytest.raises(ConfigError):
        thermostat_normal_apply(flat16, F, random_symtensor(flat16, 1, np.random.default_rng(0)))


@settings(max_examples=10, deadline=None)
@given(x=st.floats(0, TWO_PI), y=st.floats(0, TWO_PI), th=st.floats(0, TWO_PI), lam=st.floats(-1, 1))
def test_polar_jacobian_constant_thermostat(x, y, th, lam):
    s = ConformalSurface.flat(N=8)
    assert jacobian_at_zero(s, ForceField.thermostat(s, lam), x, y, th) == pytest.approx(1.0, abs=1e-8)


def test_pointwise_flat_exponential_example(cutoff):
    # flat, b = 0: the orbit from (x, theta) is x + t cos(theta), so A e^{ix} = e^{ix} int chi(t) e^{it cos theta} dt
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    u = pullback(s, SymTensorField.function(np.exp(1j * s.X)), J=1)
    cfg = NormalOpConfig(cutoff, n_theta=16)
    for x, th in [(0.3, 0.0), (1.7, 1.1), (4.0, 2.9)]:
        re = quad(lambda t: cutoff(t)[0] * np.cos(t * np.cos(th)), -2, 2, limit=200)[0]
        im = quad(lambda t: cutoff(t)[0] * np.sin(t * np.cos(th)), -2, 2, limit=200)[0]
        got = flow_average_at(s, F, u, x, 0.4, th, cfg)
        assert got == pytest.approx(np.exp(1j * x) * (re + 1j * im), abs=1e-6)


def test_thermostat_constant_function_is_fixed(cutoff):
    s = ConformalSurface.flat(N=16)
    F = ForceField.thermostat(s, 0.3)
    out, dev = thermostat_normal_apply(s, F, SymTensorField.function(np.ones(s.shape)),
                                       NormalOpConfig(cutoff, n_theta=16))
    assert dev < 1e-6
    assert np.ptp(out.comps) < 1e-6
    assert out.comps[0, 0, 0] == pytest.approx(2 * np.pi * cutoff.integral + 2 * np.pi, abs=1e-6)


@pytest.mark.parametrize("m", [1, 2])
def test_truncated_operator_on_potential_pairs(m, rng, cutoff):
    # potential pairs lift to F-derivatives; the mean term sees nothing of them
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    cfg = NormalOpConfig(cutoff, n_theta=32, include_mean=False)
    a = random_pair(s, m - 1, rng, kmax=2)
    ratio = norm(s, normal_apply(s, F, dmu(s, F, a), cfg)) / norm(s, a)
    assert ratio <= 1e-5
