"""Magnetic / thermostat flow on the unit tangent bundle in coordinates (x, y, theta).

The unit vector is ``v = e^{-phi}(cos theta, sin theta)``; the generator is

    x' = e^{-phi} cos theta,  y' = e^{-phi} sin theta,
    theta' = e^{-phi}(-phi_x sin theta + phi_y cos theta) + lambda(x, y, theta)

with ``lambda = b`` for magnetic fields.  Integration is classical fixed-step RK4;
Jacobians come from RK4 applied to the variational system, so they are the exact
derivatives of the discrete flow map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import ConformalSurface, ForceField


class IntegrationError(FloatingPointError):
    """Non-finite state encountered; ``last_time`` is the last valid time."""

    def __init__(self, msg, last_time):
        super().__init__(f"{msg} (last valid time {last_time:.6g})")
        self.last_time = last_time


@dataclass(frozen=True)
class PhasePoint:
    x: float
    y: float
    theta: float

    def reduced(self, surface: ConformalSurface) -> "PhasePoint":
        return PhasePoint(self.x % surface.Lx, self.y % surface.Ly, self.theta % (2 * np.pi))

    def as_array(self):
        return np.array([self.x, self.y, self.theta], float)

    def velocity(self, surface):
        """Chart components of the unit vector ``v``."""
        s = np.exp(-surface.phi_field.value(self.x, self.y))
        return np.array([s * np.cos(self.theta), s * np.sin(self.theta)])


@dataclass
class Trajectory:
    """Uniformly sampled orbit.

    ``lift`` holds unreduced chart positions (universal cover) and ``theta_lift``
    the unwrapped angle; ``states`` are reduced modulo periods.
    """

    t: np.ndarray
    lift: np.ndarray
    theta_lift: np.ndarray
    step: float
    periods: tuple

    @property
    def states(self):
        Lx, Ly = self.periods
        return np.column_stack([self.lift[:, 0] % Lx, self.lift[:, 1] % Ly,
                                self.theta_lift % (2 * np.pi)])

    @property
    def lifted_displacement(self):
        return self.lift[-1] - self.lift[0]

    @property
    def points(self):
        """Unreduced ``(x, y, theta)`` samples, shape (n, 3)."""
        return np.column_stack([self.lift, self.theta_lift])

    def __len__(self):
        return len(self.t)


@dataclass
class LinearizedState:
    jac: np.ndarray
    end: np.ndarray


# -- vector field ------------------------------------------------------------

def _rhs(surface, field, z):
    x, y, th = z
    phi, px, py = surface.phi_field.jet(x, y)[:3]
    w = np.exp(-phi)
    c, s = np.cos(th), np.sin(th)
    return np.array([w * c, w * s, w * (-px * s + py * c) + field.lam(x, y, th)])


def _rhs_jac(surface, field, z):
    """Generator and its 3x3 Jacobian (vectorized over trailing axes)."""
    x, y, th = z
    phi, px, py, _, pxx, pxy, pyy = surface.phi_field.jet(x, y)
    lam, lx, ly, lt = field.lam_jet(x, y, th)
    w = np.exp(-phi)
    c, s = np.cos(th), np.sin(th)
    G = -px * s + py * c
    f = np.array([w * c, w * s, w * G + lam])
    A = np.array([
        [-px * w * c, -py * w * c, -w * s],
        [-px * w * s, -py * w * s, w * c],
        [w * (-px * G - pxx * s + pxy * c) + lx,
         w * (-py * G - pxy * s + pyy * c) + ly,
         w * (-px * c - py * s) + lt],
    ])
    return f, A


def generator(surface: ConformalSurface, field: ForceField, p) -> np.ndarray:
    """Generator ``(x', y', theta')`` at a phase point (PhasePoint or 3-array)."""
    z = p.as_array() if isinstance(p, PhasePoint) else np.asarray(p, float)
    return _rhs(surface, field, z)


def rk4_step(surface, field, z, h):
    k1 = _rhs(surface, field, z)
    k2 = _rhs(surface, field, z + 0.5 * h * k1)
    k3 = _rhs(surface, field, z + 0.5 * h * k2)
    k4 = _rhs(surface, field, z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _mat(A, J):
    return np.einsum("ik...,kj...->ij...", A, J)


def rk4_step_var(surface, field, z, J, h):
    """One RK4 step of the flow together with its variational equation."""
    f1, A1 = _rhs_jac(surface, field, z)
    K1 = _mat(A1, J)
    f2, A2 = _rhs_jac(surface, field, z + 0.5 * h * f1)
    K2 = _mat(A2, J + 0.5 * h * K1)
    f3, A3 = _rhs_jac(surface, field, z + 0.5 * h * f2)
    K3 = _mat(A3, J + 0.5 * h * K2)
    f4, A4 = _rhs_jac(surface, field, z + h * f3)
    K4 = _mat(A4, J + h * K3)
    z = z + (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
    J = J + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
    return z, J


def _steps(T, step):
    if step <= 0:
        raise ValueError("step must be positive")
    if T < 0:
        raise ValueError("duration must be non-negative")
    n = int(np.ceil(T / step - 1e-9)) if T > 0 else 0
    return n, (T / n if n else step)


def flow_points(surface, field, z0, T, n):
    """Endpoints after ``n`` RK4 steps of size ``T/n`` (``T`` may be negative or an array)."""
    z = np.array(z0, float)
    h = np.asarray(T, float) / n
    for _ in range(n):
        z = rk4_step(surface, field, z, h)
    return z


def integrate(surface: ConformalSurface, field: ForceField, p0, T: float,
              step: float = 1e-3) -> Trajectory:
    """Integrate the flow from ``p0`` for time ``T`` with fixed RK4 steps.

    The step is shrunk slightly, if needed, so that it divides ``T``.
    """
    n, h = _steps(T, step)
    z = (p0.as_array() if isinstance(p0, PhasePoint) else np.asarray(p0, float)).copy()
    out = np.empty((n + 1, 3))
    out[0] = z
    for i in range(n):
        z = rk4_step(surface, field, z, h)
        if not np.all(np.isfinite(z)):
            raise IntegrationError("non-finite state", i * h)
        out[i + 1] = z
    t = np.arange(n + 1) * h
    return Trajectory(t, out[:, :2].copy(), out[:, 2].copy(), h, (surface.Lx, surface.Ly))


def integrate_with_jacobian(surface, field, p0, T, step=1e-3):
    """Samples of the orbit and of the flow Jacobian, shapes (n+1, 3) and (n+1, 3, 3)."""
    n, h = _steps(T, step)
    z = (p0.as_array() if isinstance(p0, PhasePoint) else np.asarray(p0, float)).copy()
    J = np.eye(3)
    zs = np.empty((n + 1, 3))
    Js = np.empty((n + 1, 3, 3))
    zs[0], Js[0] = z, J
    for i in range(n):
        z, J = rk4_step_var(surface, field, z, J, h)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(J))):
            raise IntegrationError("non-finite state", i * h)
        zs[i + 1], Js[i + 1] = z, J
    return np.arange(n + 1) * h, zs, Js


def linearized_flow(surface, field, p0, T, step=1e-3) -> LinearizedState:
    """Derivative of the time-``T`` flow map in (x, y, theta) coordinates."""
    n, h = _steps(T, step)
    z = (p0.as_array() if isinstance(p0, PhasePoint) else np.asarray(p0, float)).copy()
    J = np.eye(3)
    for i in range(n):
        z, J = rk4_step_var(surface, field, z, J, h)
        if not np.all(np.isfinite(J)):
            raise IntegrationError("non-finite state", i * h)
    return LinearizedState(J, z)


def first_conjugate_time(surface, field, p0, T_max, step=1e-3, threshold=1e-6):
    """First time in ``(0, T_max]`` at which ``d(x, y)/d theta`` vanishes, or None.

    Local minima of ``|d(x,y)/d theta|`` on the sample grid are refined by a bounded
    scalar minimization that re-integrates from the previous sample; a minimum is a
    conjugate time if the refined norm is below ``threshold``.
    """
    if T_max <= 0:
        raise ValueError("T_max must be positive")
    t, zs, Js = integrate_with_jacobian(surface, field, p0, T_max, step)
    h = t[1] - t[0]
    nrm = np.hypot(Js[:, 0, 2], Js[:, 1, 2])
    n = len(t) - 1
    for i in range(1, n + 1):
        right = nrm[i + 1] if i < n else np.inf
        if not (nrm[i] <= nrm[i - 1] and nrm[i] <= right):
            continue
        z0, J0 = zs[i - 1], Js[i - 1]
        span = min(2 * h, t[-1] - t[i - 1])

        def sq(s, z0=z0, J0=J0):
            m = max(1, int(np.ceil(abs(s) / (h / 4))))
            z, J = z0, J0
            for _ in range(m):
                z, J = rk4_step_var(surface, field, z, J, s / m)
            return J[0, 2] ** 2 + J[1, 2] ** 2

        res = minimize_scalar(sq, bounds=(0.0, span), method="bounded",
                              options={"xatol": 1e-12})
        if np.sqrt(max(res.fun, 0.0)) <= threshold:
            return float(t[i - 1] + res.x)
    return None


def hyperbolicity_diagnostics(surface, field, p0, T, step=1e-2, qr_every=10):
    """Benettin estimate of the top Lyapunov exponent and vertical-angle diagnostics.

    Returns a dict with ``lyapunov_estimate`` and the minimal angles (radians)
    between the numerically stabilised unstable / stable directions and the vertical.
    Diagnostic only.
    """
    n, h = _steps(T, step)
    z0 = p0.as_array() if isinstance(p0, PhasePoint) else np.asarray(p0, float)

    def run(z, sign):
        J = np.eye(3)
        logs, dirs = 0.0, []
        for i in range(1, n + 1):
            z, J = rk4_step_var(surface, field, z, J, sign * h)
            if i % qr_every == 0 or i == n:
                Q, R = np.linalg.qr(J)
                logs += np.log(abs(R[0, 0]))
                J = Q * np.sign(np.diag(R))
                dirs.append((z.copy(), J[:, 0].copy()))
        return z, logs, dirs

    z_end, logs, unstable = run(z0.copy(), 1.0)
    _, _, stable = run(z_end.copy(), -1.0)

    def min_angle(records):
        skip = len(records) // 5
        best = np.pi / 2
        for z, u in records[skip:]:
            f = _rhs(surface, field, z)
            f = f / np.linalg.norm(f)
            u = u - (u @ f) * f
            nu = np.linalg.norm(u)
            if nu == 0:
                continue
            best = min(best, float(np.arccos(min(1.0, abs(u[2]) / nu))))
        return best

    return {"lyapunov_estimate": float(logs / (n * h)),
            "min_angle_unstable_vertical": min_angle(unstable),
            "min_angle_stable_vertical": min_angle(stable)}


def unit_speed_defect(surface, traj: Trajectory):
    """Max deviation of ``|v|_g`` from 1 along the samples (identically zero by
    construction of the frame; kept as an explicit check)."""
    th = traj.theta_lift
    v = np.exp(-surface.phi_field.value(traj.lift[:, 0], traj.lift[:, 1]))[:, None] * \
        np.column_stack([np.cos(th), np.sin(th)])
    return float(np.max(np.abs(surface.norm(traj.lift[:, 0], traj.lift[:, 1], v) - 1.0)))
