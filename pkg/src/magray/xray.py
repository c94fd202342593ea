"""Closed orbits, ray transforms over them, and the magnetic action.

Orbit search is two-stage: a discrete free-time action is minimized over loops in a
prescribed homotopy class, then the loop is polished by Newton shooting on
``(x0, y0, theta0, T)``.  Shooting alone is used when no global primitive exists
(thermostats, non-exact magnetic fields).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson, trapezoid
from scipy.optimize import minimize

from .dynamics import Trajectory, integrate, rk4_step_var
from .geometry import ConfigError, ConformalSurface, ForceField
from .lifting import FiberFunction
from .tensors import TensorPair, binomials, norm, ps_decompose


class OrbitSearchError(RuntimeError):
    """Orbit search failed; ``best`` holds the best iterate found."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class HomotopyClass:
    p: int
    q: int

    def __post_init__(self):
        if self.p == 0 and self.q == 0:
            raise ValueError("contractible class excluded")

    def offset(self, surface):
        return np.array([self.p * surface.Lx, self.q * surface.Ly])


@dataclass
class ClosedOrbit:
    trajectory: Trajectory
    period: float
    homotopy: HomotopyClass
    closure_defect: float
    shooting_residual: float
    action: float | None = None

    @property
    def start(self):
        return self.trajectory.points[0]


# -- discrete action ----------------------------------------------------------

def _discrete_action(surface, field, X, logT, offset):
    n = len(X)
    T = np.exp(logT)
    dt = T / n
    Xn = np.vstack([X[1:], X[:1] + offset])
    D = Xn - X
    M = 0.5 * (Xn + X)
    phi = surface.phi_field.value(M[:, 0], M[:, 1])
    px, py, _ = surface.phi_field.grad(M[:, 0], M[:, 1])
    E = np.exp(2 * phi)
    a1, a2 = field.alpha_at(M[:, 0], M[:, 1])
    a1x, a1y, a2x, a2y = field.alpha_jac(M[:, 0], M[:, 1])
    sq = np.sum(D * D, axis=1)
    kin = 0.5 * E * sq / dt
    flux = a1 * D[:, 0] + a2 * D[:, 1]
    A = np.sum(kin) + 0.5 * T - np.sum(flux)
    # gradient
    common = np.column_stack([E * px * sq / dt, E * py * sq / dt]) \
        - np.column_stack([a1x * D[:, 0] + a2x * D[:, 1], a1y * D[:, 0] + a2y * D[:, 1]])
    alpha = np.column_stack([a1, a2])
    g_next = (E / dt)[:, None] * D + 0.5 * common - alpha   # d/dX_{i+1}
    g_here = -(E / dt)[:, None] * D + 0.5 * common + alpha  # d/dX_i
    grad = g_here + np.roll(g_next, 1, axis=0)
    dT = -np.sum(kin) / T + 0.5
    return A, grad, dT * T


def discrete_action(surface, field, X, T, homotopy):
    """Free-time discrete action of the closed polygon ``X`` (trapezoid/midpoint rule)."""
    A, _, _ = _discrete_action(surface, field, np.asarray(X, float), np.log(T),
                               homotopy.offset(surface))
    return float(A)


def _descend(surface, field, homotopy, n_nodes, start, maxiter=2000):
    off = homotopy.offset(surface)
    s = np.linspace(0, 1, n_nodes, endpoint=False)[:, None]
    X0 = np.asarray(start, float)[None] + s * off
    T0 = float(np.linalg.norm(off) * np.exp(surface.phi_field.value(*start)))

    def fun(v):
        X = v[:-1].reshape(-1, 2)
        A, g, gT = _discrete_action(surface, field, X, v[-1], off)
        return A, np.concatenate([g.ravel(), [gT]])

    v0 = np.concatenate([X0.ravel(), [np.log(T0)]])
    res = minimize(fun, v0, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "gtol": 1e-10, "ftol": 1e-15})
    X = res.x[:-1].reshape(-1, 2)
    return X, float(np.exp(res.x[-1])), float(res.fun), res


# -- shooting ---------------------------------------------------------------

def shoot(surface, field, z0, T, offsets, n_steps, tol=1e-11, max_iter=30):
    """Batched Newton (minimum-norm Gauss-Newton) on ``phi_T(z) = z + (dx, dy, 2 pi w)``.

    ``z0`` has shape (B, 3), ``T`` and the rows of ``offsets`` (B, 2) describe the B
    orbits, which are integrated together with a common number of RK4 steps.
    Returns the polished ``(z0, T, residual_norms)``.
    """
    from .dynamics import _rhs

    z0 = np.array(z0, float).reshape(-1, 3)
    T = np.array(T, float).reshape(-1)
    offsets = np.asarray(offsets, float).reshape(-1, 2)
    B = len(T)
    wind = None
    res = np.full(B, np.inf)
    active = np.ones(B, bool)
    for _ in range(max_iter):
        z = z0.T.copy()
        J = np.repeat(np.eye(3)[:, :, None], B, axis=2)
        h = T / n_steps
        for _ in range(n_steps):
            z, J = rk4_step_var(surface, field, z, J, h)
        z1 = z.T
        if wind is None:
            wind = np.round((z1[:, 2] - z0[:, 2]) / (2 * np.pi))
        target = np.column_stack([offsets, 2 * np.pi * wind])
        r = z1 - z0 - target
        res = np.linalg.norm(r, axis=1)
        active &= res >= tol
        if not active.any():
            break
        f1 = _rhs(surface, field, z1.T).T
        for i in np.nonzero(active)[0]:
            M = np.column_stack([J[:, :, i] - np.eye(3), f1[i]])
            step = np.linalg.lstsq(M, -r[i], rcond=None)[0]
            z0[i] += step[:3]
            T[i] += step[3]
        if np.any(T <= 0):
            raise OrbitSearchError("shooting drove a period negative", (z0, T))
    return z0, T, res


def _initial_guess(surface, field, homotopy, n_nodes, start, method, guess):
    use_action = method == "action" or (method == "auto" and field.is_magnetic and field.is_exact())
    if method == "action" and not (field.is_magnetic and field.is_exact()):
        raise ConfigError("action-based search needs an exact magnetic field")
    off = homotopy.offset(surface)
    if use_action:
        X, T, _, _ = _descend(surface, field, homotopy, n_nodes, start)
        d = X[1] - (X[-1] - off)
        return np.array([X[0, 0], X[0, 1], np.arctan2(d[1], d[0])]), T
    if guess is not None:
        return np.asarray(guess[0], float), float(guess[1])
    th0 = np.arctan2(off[1], off[0])
    T = float(np.linalg.norm(off) * np.exp(surface.phi_field.value(*start)))
    return np.array([start[0], start[1], th0]), T


def _polish(surface, field, homotopies, guesses, tol, step):
    z0 = np.array([g[0] for g in guesses])
    T = np.array([g[1] for g in guesses])
    offsets = np.array([h.offset(surface) for h in homotopies])
    n = max(2, 2 * int(np.ceil(T.max() / (2 * step))))
    z0, T, res = shoot(surface, field, z0, T, offsets, n)
    n_new = max(2, 2 * int(np.ceil(T.max() / (2 * step))))
    if n_new != n:
        n = n_new
        z0, T, res = shoot(surface, field, z0, T, offsets, n)
    out = []
    for i, hom in enumerate(homotopies):
        traj = integrate(surface, field, z0[i], T[i], T[i] / n)
        dz = traj.points[-1] - traj.points[0]
        dz[:2] -= offsets[i]
        dz[2] = (dz[2] + np.pi) % (2 * np.pi) - np.pi
        defect = float(np.linalg.norm(dz))
        if not defect < tol:
            out.append(OrbitSearchError(f"closure defect {defect:.2e} above tolerance",
                                        (z0[i], T[i])))
            continue
        action = None
        if field.is_magnetic and field.is_exact():
            action = trajectory_action(surface, field, traj)
        out.append(ClosedOrbit(traj, float(T[i]), hom, defect, float(res[i]), action))
    return out


def find_closed_orbit(surface: ConformalSurface, field: ForceField, homotopy: HomotopyClass,
                      n_nodes=64, tol=1e-8, step=1e-2, method="auto", start=(0.0, 0.0),
                      guess=None) -> ClosedOrbit:
    """Closed orbit in ``homotopy``: action descent (exact magnetic fields) then shooting.

    Parameters
    ----------
    method : {"auto", "action", "shooting"}
        ``auto`` uses the action stage whenever a global primitive exists.
    step : float
        Target RK4 step; the actual step divides the period into an even count.
    guess : (z0, T), optional
        Initial condition for shooting-only searches.
    """
    if not isinstance(homotopy, HomotopyClass):
        homotopy = HomotopyClass(*homotopy)
    g = _initial_guess(surface, field, homotopy, n_nodes, start, method, guess)
    res = _polish(surface, field, [homotopy], [g], tol, step)[0]
    if isinstance(res, Exception):
        raise res
    return res


def orbit_set(surface, field, pmax=3, n_nodes=64, tol=1e-8, step=1e-2, method="auto",
              classes=None):
    """Closed orbits over all classes with ``|p|, |q| <= pmax`` (or the given ``classes``),
    deduplicated by (class, action) within 1e-6.  Failed classes are skipped."""
    if classes is None:
        classes = [(p, q) for p in range(-pmax, pmax + 1) for q in range(-pmax, pmax + 1)
                   if (p, q) != (0, 0)]
    homs, guesses = [], []
    for c in classes:
        hom = HomotopyClass(*c)
        try:
            guesses.append(_initial_guess(surface, field, hom, n_nodes, (0.0, 0.0), method, None))
            homs.append(hom)
        except OrbitSearchError:
            continue
    orbits, seen = [], set()
    for orb in _polish(surface, field, homs, guesses, tol, step):
        if isinstance(orb, Exception):
            continue
        key = (orb.homotopy.p, orb.homotopy.q,
               None if orb.action is None else round(orb.action / 1e-6))
        if key not in seen:
            seen.add(key)
            orbits.append(orb)
    return orbits


# -- transforms ---------------------------------------------------------------

def _simpson(values, t):
    if (len(t) - 1) % 2 == 0:
        return float(simpson(values, x=t))
    return float(trapezoid(values, t))


def ray_transform(surface, field, orbit: ClosedOrbit, u) -> float:
    """``int_0^T u(phi_t z) dt`` by composite Simpson; ``u`` is a FiberFunction or
    a callable ``u(x, y, theta)``."""
    pts = orbit.trajectory.points
    if isinstance(u, FiberFunction):
        vals = u.evaluate(surface, pts[:, 0], pts[:, 1], pts[:, 2])
        vals = vals.real if np.iscomplexobj(vals) else vals
    else:
        vals = u(pts[:, 0], pts[:, 1], pts[:, 2])
    return _simpson(vals, orbit.trajectory.t)


def pullback_at(surface, h, x, y, theta):
    """``h(v, ..., v)`` at arbitrary points, from the interpolated components."""
    m = h.rank
    comps = h.evaluate(surface, x, y)
    c, s = np.cos(theta), np.sin(theta)
    val = sum(binomials(m)[k] * comps[k] * c ** (m - k) * s ** k for k in range(m + 1))
    return np.exp(-m * surface.phi_field.value(x, y)) * val


def ray_transform_pair(surface, field, orbit: ClosedOrbit, f: TensorPair) -> float:
    """``I_m[p, q] = I(pi_m^* p + pi_{m-1}^* q)``."""
    pts = orbit.trajectory.points
    x, y, th = pts[:, 0], pts[:, 1], pts[:, 2]
    vals = pullback_at(surface, f.p, x, y, th)
    if f.q is not None:
        vals = vals + pullback_at(surface, f.q, x, y, th)
    return _simpson(vals, orbit.trajectory.t)


def magnetic_action(surface, field, t, positions, velocities) -> float:
    """``1/2 int |c'|_g^2 + 1/2 T - int alpha`` for a sampled curve (trapezoid rule)."""
    if field.is_magnetic and not field.is_exact():
        raise ConfigError("magnetic action needs a global primitive")
    if not field.is_magnetic:
        raise ConfigError("magnetic action is defined for magnetic fields only")
    t = np.asarray(t, float)
    P = np.asarray(positions, float)
    V = np.asarray(velocities, float)
    E = np.exp(2 * surface.phi_field.value(P[:, 0], P[:, 1]))
    a1, a2 = field.alpha_at(P[:, 0], P[:, 1])
    integrand = 0.5 * E * np.sum(V * V, axis=1) - (a1 * V[:, 0] + a2 * V[:, 1])
    return float(trapezoid(integrand, t) + 0.5 * (t[-1] - t[0]))


def trajectory_action(surface, field, traj: Trajectory) -> float:
    """Action of a unit-speed flow trajectory; Simpson in time."""
    P = traj.lift
    th = traj.theta_lift
    w = np.exp(-surface.phi_field.value(P[:, 0], P[:, 1]))
    V = np.column_stack([w * np.cos(th), w * np.sin(th)])
    a1, a2 = field.alpha_at(P[:, 0], P[:, 1])
    integrand = 1.0 - (a1 * V[:, 0] + a2 * V[:, 1])  # 1/2 |v|^2 + 1/2 = 1 at unit speed
    return _simpson(integrand, traj.t)


# -- stability experiment -------------------------------------------------------

def stability_experiment(surface, field, orbits, f: TensorPair, tol=1e-10):
    """``sup_orbits |I_m f|`` together with the solenoidal norm ``|H|``."""
    if not orbits:
        raise ValueError("orbit set must be non-empty")
    sup = max(abs(ray_transform_pair(surface, field, o, f)) for o in orbits)
    dec = ps_decompose(surface, field, f, tol=tol)
    return {"sup_transform": float(sup), "sol_norm": norm(surface, dec.H)}
