"""Functions on the unit tangent bundle as fiber Fourier series, pullbacks and
pushforwards of symmetric tensors, and the generator acting mode by mode.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .geometry import ConformalSurface, ForceField
from .tensors import SymTensorField, TensorPair, binomials, dmu

DEFAULT_BAND = 32


class BandLimitError(ArithmeticError):
    """Fiber band overflow with non-negligible dropped mass."""


@dataclass
class FiberFunction:
    """``u(x, y, theta) = sum_{|j| <= J} modes[j + J](x, y) e^{i j theta}``."""

    modes: np.ndarray

    @property
    def J(self) -> int:
        return (self.modes.shape[0] - 1) // 2

    @classmethod
    def zeros(cls, surface, J=DEFAULT_BAND):
        return cls(np.zeros((2 * J + 1,) + surface.shape, complex))

    @classmethod
    def from_base(cls, f, J=DEFAULT_BAND):
        f = np.asarray(f)
        out = np.zeros((2 * J + 1,) + f.shape, complex)
        out[J] = f
        return cls(out)

    def mode(self, j):
        return self.modes[j + self.J] if abs(j) <= self.J else 0 * self.modes[0]

    def with_band(self, J):
        """Zero-padded / truncated copy with band ``J`` (truncation must be lossless)."""
        out = np.zeros((2 * J + 1,) + self.modes.shape[1:], complex)
        n = min(J, self.J)
        out[J - n:J + n + 1] = self.modes[self.J - n:self.J + n + 1]
        return FiberFunction(out)

    def __add__(self, other):
        J = max(self.J, other.J)
        return FiberFunction(self.with_band(J).modes + other.with_band(J).modes)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, c):
        return FiberFunction(self.modes * c)

    __rmul__ = __mul__

    def reality_defect(self):
        return float(np.max(np.abs(self.modes - np.conj(self.modes[::-1]))))

    def samples(self, n_theta):
        """Values on ``n_theta`` equispaced angles, shape ``(n_theta, Nx, Ny)``."""
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        j = np.arange(-self.J, self.J + 1)
        return np.einsum("tj,j...->t...", np.exp(1j * np.outer(th, j)), self.modes)

    @classmethod
    def from_samples(cls, vals, J):
        """Fiber modes ``|j| <= J`` from equispaced samples (DFT)."""
        n = vals.shape[0]
        c = sfft.fft(vals, axis=0) / n
        idx = np.arange(-J, J + 1) % n
        return cls(c[idx])

    def evaluate(self, surface, x, y, theta):
        """Point values by direct Fourier summation over significant modes."""
        return evaluate_modes(surface, self.modes, x, y, theta)


def evaluate_modes(surface, modes, x, y, theta, chunk=4096, rtol=1e-15):
    """Sum ``modes[j](x,y) e^{i j theta}`` at points using the nonzero spectrum only.

    The sum is factorized as ``sum_j e^{ij theta} sum_kx e^{i kx x} (sum_ky c e^{i ky y})``
    over the wavenumbers that carry significant coefficients.
    """
    J = (modes.shape[0] - 1) // 2
    coef = sfft.fft2(modes, axes=(-2, -1)) / (surface.Nx * surface.Ny)
    mag = np.abs(coef)
    keep = mag > rtol * max(mag.max(), 1e-300)
    jj = np.nonzero(keep.any(axis=(1, 2)))[0]
    ix = np.nonzero(keep.any(axis=(0, 2)))[0]
    iy = np.nonzero(keep.any(axis=(0, 1)))[0]
    C = coef[np.ix_(jj, ix, iy)]
    kx = 2 * np.pi * sfft.fftfreq(surface.Nx, d=surface.Lx / surface.Nx)[ix]
    ky = 2 * np.pi * sfft.fftfreq(surface.Ny, d=surface.Ly / surface.Ny)[iy]
    nyq_x = ix == surface.Nx // 2
    nyq_y = iy == surface.Ny // 2
    jv = jj - J
    x = np.asarray(x, float)
    shape = np.broadcast(x, y, theta).shape
    xf, yf, tf = (np.broadcast_to(np.asarray(a, float), shape).ravel() for a in (x, y, theta))
    out = np.empty(xf.shape, complex)
    Cm = C.transpose(2, 0, 1).reshape(len(iy), -1)  # (ky, j * kx)
    for s in range(0, len(xf), chunk):
        sl = slice(s, s + chunk)
        ax = np.outer(xf[sl], kx)
        ay = np.outer(yf[sl], ky)
        ex = np.where(nyq_x, np.cos(ax), np.exp(1j * ax))
        ey = np.where(nyq_y, np.cos(ay), np.exp(1j * ay))
        et = np.exp(1j * np.outer(tf[sl], jv))
        inner_y = (ey @ Cm).reshape(-1, len(jj), len(ix))
        out[sl] = np.einsum("pjx,px,pj->p", inner_y, ex, et)
    return out.reshape(shape)


# -- trigonometric moment tables ---------------------------------------------

@lru_cache(maxsize=None)
def moment_table(m):
    """``table[k, j + m]`` = Fourier coefficient of ``cos^{m-k} sin^k`` at ``e^{i j theta}``."""
    cos = {1: 0.5, -1: 0.5}
    sin = {1: -0.5j, -1: 0.5j}
    table = np.zeros((m + 1, 2 * m + 1), complex)
    for k in range(m + 1):
        poly = {0: 1.0 + 0j}
        for factor in [cos] * (m - k) + [sin] * k:
            new = {}
            for a, ca in poly.items():
                for b, cb in factor.items():
                    new[a + b] = new.get(a + b, 0) + ca * cb
            poly = new
        for j, c in poly.items():
            table[k, j + m] = c
    return table


def pullback(surface: ConformalSurface, h: SymTensorField, J=DEFAULT_BAND) -> FiberFunction:
    """``(pi_m^* h)(x, v) = h_x(v, ..., v)`` with ``v = e^{-phi}(cos, sin)``."""
    m = h.rank
    if J < m:
        raise ValueError("fiber band too small for the tensor rank")
    tab = moment_table(m) * binomials(m)[:, None]
    w = np.exp(-m * surface.phi)
    modes = np.zeros((2 * J + 1,) + surface.shape, complex)
    modes[J - m:J + m + 1] = np.einsum("kj,k...->j...", tab, h.comps) * w
    return FiberFunction(modes)


def pullback_pair(surface, f: TensorPair, J=DEFAULT_BAND) -> FiberFunction:
    u = pullback(surface, f.p, J)
    if f.q is not None:
        u = u + pullback(surface, f.q, J)
    return u


def pushforward(surface: ConformalSurface, u: FiberFunction, m: int) -> SymTensorField:
    """``(pi_{m*} u)(v_1..v_m) = int_{S_x} u(v) g(v, v_1)...g(v, v_m) dv`` (exact moments)."""
    tab = moment_table(m)  # coefficients a_j of cos^{m-k} sin^k
    comps = np.zeros((m + 1,) + surface.shape, complex)
    for k in range(m + 1):
        for jj in range(-m, m + 1):
            a = tab[k, jj + m]
            if a != 0:
                comps[k] += 2 * np.pi * a * u.mode(-jj)
    comps *= np.exp(m * surface.phi)
    if np.isrealobj(u.modes) or u.reality_defect() == 0:
        comps = comps.real
    return SymTensorField(m, comps)


def pushforward_pair(surface, u: FiberFunction, m: int) -> TensorPair:
    return TensorPair(pushforward(surface, u, m),
                      pushforward(surface, u, m - 1) if m > 0 else None)


def sm_inner(surface, u: FiberFunction, w: FiberFunction):
    """``int_{SM} u conj(w)`` for the Liouville measure ``e^{2 phi} dx dy dtheta``."""
    J = max(u.J, w.J)
    a, b = u.with_band(J).modes, w.with_band(J).modes
    return 2 * np.pi * surface.integrate(np.sum(a * np.conj(b), axis=0))


def sm_norm(surface, u):
    return float(np.sqrt(abs(sm_inner(surface, u, u))))


def _shift(modes, s):
    """Multiply by ``e^{i s theta}``: mode j moves to j + s (band preserved, overflow dropped)."""
    out = np.zeros_like(modes)
    if s > 0:
        out[s:] = modes[:-s]
    elif s < 0:
        out[:s] = modes[-s:]
    else:
        out[:] = modes
    return out


def apply_generator(surface: ConformalSurface, field: ForceField, u: FiberFunction,
                    J_out=None, tol=1e-8) -> FiberFunction:
    """``F u`` for the magnetic / thermostat generator, computed spectrally.

    The output band is ``J_out`` (default: the input band).  Modes that would exceed
    it are dropped; a :class:`BandLimitError` is raised if their L2 mass exceeds
    ``tol * |u|``.
    """
    lam_modes = field.lambda_modes_grid(surface)
    Jl = max(abs(j) for j in lam_modes) if lam_modes else 0
    Jw = u.J + 1 + Jl
    if J_out is None:
        J_out = u.J
    U = u.with_band(Jw).modes
    j = np.arange(-Jw, Jw + 1).reshape((-1, 1, 1))
    ux = surface.dx(U)
    uy = surface.dy(U)
    ut = 1j * j * U
    cos_ = lambda a: 0.5 * (_shift(a, 1) + _shift(a, -1))
    sin_ = lambda a: (_shift(a, 1) - _shift(a, -1)) / 2j
    e = np.exp(-surface.phi)
    out = e * (cos_(ux) + sin_(uy) + surface.phiy * cos_(ut) - surface.phix * sin_(ut))
    for jl, lam in lam_modes.items():
        out = out + lam * _shift(ut, jl)
    full = FiberFunction(out)
    if J_out < Jw:
        dropped = full.modes.copy()
        dropped[Jw - J_out:Jw + J_out + 1] = 0
        lost = sm_norm(surface, FiberFunction(dropped))
        if lost > tol * max(sm_norm(surface, u), 1e-300):
            raise BandLimitError(f"generator output exceeds fiber band {J_out} (dropped {lost:.2e})")
        return full.with_band(J_out)
    return full


def commutation_residual(surface, field, a: TensorPair, J=None, symmetrize=True) -> float:
    """``|F(pi^* a) - pi^*(D_mu a)| / |a|`` in ``L2(SM)`` (relative to the SM norm of the lift)."""
    m = a.rank
    J = m + 3 if J is None else J
    lhs = apply_generator(surface, field, pullback_pair(surface, a, J), J_out=J)
    rhs = pullback_pair(surface, dmu(surface, field, a, symmetrize=symmetrize), J)
    scale = sm_norm(surface, pullback_pair(surface, a, J))
    if scale == 0:
        return 0.0
    return sm_norm(surface, lhs - rhs) / scale
