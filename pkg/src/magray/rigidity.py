"""Curvature-type quantities and index forms along magnetic orbits on surfaces.

Vector fields along an orbit are stored by their coefficient ``z`` on the unit normal
``w = J(gamma')``.  Along a magnetic orbit ``D_t w = -b gamma'``, which turns every
geometric term into a scalar: with ``db(w)`` the derivative of ``b`` along ``w``,

    index form           int z'^2 - (K + b^2 - db(w)) z^2
    modified index form  int z'^2 - k_mu z^2,   k_mu = 2K + 6 b^2 - 2 db(w).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .dynamics import PhasePoint, Trajectory
from .geometry import ConformalSurface, DomainError, ForceField


@dataclass
class NormalFieldAlongOrbit:
    """Normal coefficient ``z(t)`` sampled on the orbit's time grid.

    ``zdot`` is optional; when missing it is obtained by second-order finite
    differences.
    """

    z: np.ndarray
    zdot: np.ndarray | None = None

    @classmethod
    def sine_series(cls, t, coefs):
        """``z = sum_n c_n sin(n pi t / T)``, n = 1, 2, ..., with exact derivative."""
        t = np.asarray(t, float)
        T = t[-1] - t[0]
        s = (t - t[0]) / T
        n = np.arange(1, len(coefs) + 1)[:, None]
        c = np.asarray(coefs, float)[:, None]
        z = np.sum(c * np.sin(n * np.pi * s), axis=0)
        zd = np.sum(c * (n * np.pi / T) * np.cos(n * np.pi * s), axis=0)
        return cls(z, zd)

    def derivative(self, t):
        if self.zdot is not None:
            return np.asarray(self.zdot, float)
        return np.gradient(np.asarray(self.z, float), t, edge_order=2)


def _orbit_samples(orbit):
    traj = orbit if isinstance(orbit, Trajectory) else orbit.trajectory
    return traj.t, traj.lift[:, 0], traj.lift[:, 1], traj.theta_lift


def _frame_terms(surface, field, x, y, theta, sign=1.0):
    """``K``, ``b`` and ``db(w)`` with ``w = sign * J(v)`` at phase points."""
    K = surface.gauss_curvature_at(x, y)
    b = field.b(x, y)
    bx, by = field.b_grad(x, y)
    e = np.exp(-surface.phi_field.value(x, y))
    db_w = sign * e * (-bx * np.sin(theta) + by * np.cos(theta))
    return K, b, db_w


def kmu(surface: ConformalSurface, field: ForceField, p, w_sign=1.0):
    """``2K + (Y(w), v)^2 + 5 |Y(w)|^2 - 2 ((nabla_w Y)(v), w)`` for unit ``w`` normal to ``v``.

    Each term is evaluated from the vectors themselves, so ``w_sign = -1`` (the
    other unit normal) is a genuine re-evaluation, not a shortcut.
    """
    field.require_magnetic("k_mu")
    if isinstance(p, PhasePoint):
        x, y, th = p.x, p.y, p.theta
    else:
        x, y, th = p
    e = np.exp(-surface.phi_field.value(x, y))
    v = e * np.array([np.cos(th), np.sin(th)])
    w = w_sign * e * np.array([-np.sin(th), np.cos(th)])
    b = field.b(x, y)
    bx, by = field.b_grad(x, y)

    def g(a, c):
        return surface.inner(x, y, a, c)

    def rot(a):  # J: quarter turn, an isometry of a conformal metric
        return np.array([-a[1], a[0]])

    Yw = b * rot(w)
    db_w = bx * w[0] + by * w[1]
    nabla_w_Y_v = db_w * rot(v)
    K = surface.gauss_curvature_at(x, y)
    return float(2 * K + g(Yw, v) ** 2 + 5 * g(Yw, Yw) - 2 * g(nabla_w_Y_v, w))


def kmu_along(surface, field, orbit):
    """``k_mu`` at every sample of an orbit (vectorized closed form)."""
    field.require_magnetic("k_mu")
    _, x, y, th = _orbit_samples(orbit)
    K, b, db_w = _frame_terms(surface, field, x, y, th)
    return 2 * K + 6 * b ** 2 - 2 * db_w


def orbit_kbar(surface, field, orbit):
    """``T * int_0^T max(k_mu, 0) dt`` along one orbit (Simpson)."""
    t = _orbit_samples(orbit)[0]
    k = np.maximum(kmu_along(surface, field, orbit), 0.0)
    return float((t[-1] - t[0]) * simpson(k, x=t))


def kbar(surface, field, orbits):
    """Lower bound ``kbar_lower`` for the sup of :func:`orbit_kbar` over closed orbits:
    the maximum over the given finite set."""
    orbits = list(orbits)
    if not orbits:
        raise ValueError("orbit set is empty")
    return max(orbit_kbar(surface, field, o) for o in orbits)


def _check_endpoints(Z, tol=1e-10):
    z = np.asarray(Z.z, float)
    scale = max(np.max(np.abs(z)), 1.0)
    if abs(z[0]) > tol * scale or abs(z[-1]) > tol * scale:
        raise DomainError("normal field must vanish at both endpoints")


def _quadratic_form(surface, field, orbit, Z, potential):
    _check_endpoints(Z)
    t, x, y, th = _orbit_samples(orbit)
    z = np.asarray(Z.z, float)
    if z.shape != t.shape:
        raise DomainError("normal field must be sampled on the orbit's time grid")
    zd = Z.derivative(t)
    return float(simpson(zd ** 2 - potential(x, y, th) * z ** 2, x=t))


def index_form(surface, field, orbit, Z: NormalFieldAlongOrbit):
    """Second-variation form ``int |Z'|^2 - (C(Z), Z) - (Y(gamma'), Z)^2`` for ``Z = z w``."""
    field.require_magnetic("index form")

    def pot(x, y, th):
        K, b, db_w = _frame_terms(surface, field, x, y, th)
        return K + b ** 2 - db_w

    return _quadratic_form(surface, field, orbit, Z, pot)


def modified_index_form(surface, field, orbit, Z: NormalFieldAlongOrbit):
    """``int |Z'|^2 - 2 (C(Z), Z) - (Y(Z), gamma')^2 - 4 |Y(Z)|^2`` for ``Z = z w``."""
    field.require_magnetic("modified index form")

    def pot(x, y, th):
        K, b, db_w = _frame_terms(surface, field, x, y, th)
        return 2 * K + 6 * b ** 2 - 2 * db_w

    return _quadratic_form(surface, field, orbit, Z, pot)


def random_normal_fields(t, rng, count, modes=8, decay=1.0):
    """Random sine-series normal fields vanishing at both ends."""
    n = np.arange(1, modes + 1)
    return [NormalFieldAlongOrbit.sine_series(t, rng.standard_normal(modes) / n ** decay)
            for _ in range(count)]
