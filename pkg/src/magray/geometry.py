"""Model surfaces: flat-chart tori carrying a conformal metric e^{2 phi}(dx^2 + dy^2),
plus the magnetic / thermostat force fields that drive the dynamics.

Scalar fields are given as finite Fourier mode lists so that they can be evaluated
exactly at arbitrary points (orbit integration) and on uniform grids (spectral
calculus).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft as sfft

# +90 degree rotation in the chart; the single orientation convention of the package
ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


class DomainError(ValueError):
    """Raised when an operation is called outside its domain."""


class ConfigError(ValueError):
    """Raised for inconsistent model inputs."""


class UnsupportedOperation(TypeError):
    """Raised when an operation is not defined for the given force kind."""


@dataclass(frozen=True)
class ModeField:
    """Real field ``sum_m Re(c_m exp(i(kappa_x x + kappa_y y + j theta)))``.

    ``kx, ky`` are integer wave numbers in units of ``2 pi / L``; ``j`` is an
    optional fiber frequency (zero for base fields).
    """

    kx: np.ndarray
    ky: np.ndarray
    coef: np.ndarray
    Lx: float
    Ly: float
    j: np.ndarray | None = None

    @classmethod
    def from_list(cls, modes, Lx, Ly):
        """Build from ``[{kx, ky, re, im[, j]}, ...]`` dictionaries."""
        modes = list(modes or [])
        kx = np.array([int(m.get("kx", 0)) for m in modes], dtype=int)
        ky = np.array([int(m.get("ky", 0)) for m in modes], dtype=int)
        coef = np.array([complex(m.get("re", 0.0), m.get("im", 0.0)) for m in modes],
                        dtype=complex)
        j = np.array([int(m.get("j", 0)) for m in modes], dtype=int)
        return cls(kx, ky, coef, float(Lx), float(Ly), j if np.any(j) else None)

    @classmethod
    def zero(cls, Lx, Ly):
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0, complex), Lx, Ly)

    @classmethod
    def constant(cls, c, Lx, Ly):
        return cls(np.zeros(1, int), np.zeros(1, int), np.array([complex(c)]), Lx, Ly)

    def to_list(self):
        out = []
        for i in range(len(self.coef)):
            d = {"kx": int(self.kx[i]), "ky": int(self.ky[i]),
                 "re": float(self.coef[i].real), "im": float(self.coef[i].imag)}
            if self.j is not None:
                d["j"] = int(self.j[i])
            out.append(d)
        return out

    def __post_init__(self):
        object.__setattr__(self, "_ax", 2 * np.pi * np.asarray(self.kx) / self.Lx)
        object.__setattr__(self, "_ay", 2 * np.pi * np.asarray(self.ky) / self.Ly)

    @property
    def wavenumbers(self):
        return self._ax, self._ay

    def jet(self, x, y, theta=None):
        """Value and derivatives ``(f, f_x, f_y, f_theta, f_xx, f_xy, f_yy)`` in one pass."""
        if len(self.coef) == 0:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return (z,) * 7
        ax, ay = self._ax, self._ay
        e = self._phase(x, y, theta)
        ie = 1j * e
        jj = self.j if self.j is not None else 0 * ax
        return (e.real.sum(-1), (ie * ax).real.sum(-1), (ie * ay).real.sum(-1),
                (ie * jj).real.sum(-1), -(e * ax * ax).real.sum(-1),
                -(e * ax * ay).real.sum(-1), -(e * ay * ay).real.sum(-1))

    @property
    def fiber_band(self) -> int:
        return 0 if self.j is None or len(self.j) == 0 else int(np.max(np.abs(self.j)))

    def _phase(self, x, y, theta=None):
        ax, ay = self._ax, self._ay
        x = np.asarray(x, float)[..., None]
        y = np.asarray(y, float)[..., None]
        arg = ax * x + ay * y
        if self.j is not None and theta is not None:
            arg = arg + self.j * np.asarray(theta, float)[..., None]
        return self.coef * np.exp(1j * arg)

    def value(self, x, y, theta=None):
        if len(self.coef) == 0:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return self._phase(x, y, theta).real.sum(-1)

    def grad(self, x, y, theta=None):
        """Return ``(f_x, f_y, f_theta)``."""
        if len(self.coef) == 0:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy(), z.copy()
        ax, ay = self.wavenumbers
        e = 1j * self._phase(x, y, theta)
        jj = self.j if self.j is not None else np.zeros_like(self.kx)
        return (e * ax).real.sum(-1), (e * ay).real.sum(-1), (e * jj).real.sum(-1)

    def hess(self, x, y):
        """Second base derivatives ``(f_xx, f_xy, f_yy)`` (fiber part ignored)."""
        if len(self.coef) == 0:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy(), z.copy()
        ax, ay = self.wavenumbers
        e = -self._phase(x, y)
        return (e * ax * ax).real.sum(-1), (e * ax * ay).real.sum(-1), (e * ay * ay).real.sum(-1)

    def fiber_modes_grid(self, X, Y):
        """Fiber Fourier coefficients ``{j: complex grid}`` of the field."""
        out = {}
        ax, ay = self.wavenumbers
        jj = self.j if self.j is not None else np.zeros_like(self.kx)
        for i in range(len(self.coef)):
            e = np.exp(1j * (ax[i] * X + ay[i] * Y))
            half = 0.5 * self.coef[i] * e
            for jm, val in ((int(jj[i]), half), (-int(jj[i]), np.conj(half))):
                out[jm] = out.get(jm, 0) + val
        return out


def wavenumbers(n: int, length: float) -> np.ndarray:
    """Angular FFT wave numbers with the Nyquist entry zeroed (skew-adjoint derivative)."""
    k = 2 * np.pi * sfft.fftfreq(n, d=length / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


class ConformalSurface:
    """Torus ``[0,Lx) x [0,Ly)`` with metric ``e^{2 phi}(dx^2 + dy^2)``.

    Parameters
    ----------
    Lx, Ly : float
        Chart periods.
    Nx, Ny : int
        Grid sizes (even, at least 8).
    phi : ModeField, optional
        Conformal exponent; ``None`` gives the flat metric.
    """

    def __init__(self, Lx, Ly, Nx, Ny, phi: ModeField | None = None):
        if Nx % 2 or Ny % 2 or Nx < 8 or Ny < 8:
            raise ConfigError("grid sizes must be even and >= 8")
        if Lx <= 0 or Ly <= 0:
            raise ConfigError("periods must be positive")
        self.Lx, self.Ly, self.Nx, self.Ny = float(Lx), float(Ly), int(Nx), int(Ny)
        self.phi_field = phi if phi is not None else ModeField.zero(Lx, Ly)
        self.x = np.arange(self.Nx) * self.Lx / self.Nx
        self.y = np.arange(self.Ny) * self.Ly / self.Ny
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")
        self.kx = wavenumbers(self.Nx, self.Lx)[:, None]
        self.ky = wavenumbers(self.Ny, self.Ly)[None, :]
        self.cell = self.Lx * self.Ly / (self.Nx * self.Ny)
        self.phi = self.phi_field.value(self.X, self.Y)
        self.e2phi = np.exp(2 * self.phi)
        self.phix, self.phiy, _ = self.phi_field.grad(self.X, self.Y)
        self.phixx, self.phixy, self.phiyy = self.phi_field.hess(self.X, self.Y)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def flat(cls, L=2 * np.pi, N=32, Ly=None, Ny=None):
        return cls(L, Ly if Ly is not None else L, N, Ny if Ny is not None else N)

    def with_grid(self, Nx, Ny=None):
        """Same metric sampled on another grid."""
        return ConformalSurface(self.Lx, self.Ly, Nx, Ny if Ny is not None else Nx,
                                self.phi_field)

    @property
    def shape(self):
        return (self.Nx, self.Ny)

    @property
    def is_flat(self):
        return bool(np.all(self.phi_field.coef[(self.phi_field.kx != 0)
                                               | (self.phi_field.ky != 0)] == 0))

    # -- spectral calculus ----------------------------------------------------
    def dx(self, f):
        return self._diff(f, self.kx)

    def dy(self, f):
        return self._diff(f, self.ky)

    def _diff(self, f, k):
        out = sfft.ifft2(1j * k * sfft.fft2(f, axes=(-2, -1)), axes=(-2, -1))
        return out.real if np.isrealobj(f) else out

    def laplacian(self, f):
        """Flat chart Laplacian (spectral)."""
        out = sfft.ifft2(-(self.kx ** 2 + self.ky ** 2) * sfft.fft2(f, axes=(-2, -1)),
                         axes=(-2, -1))
        return out.real if np.isrealobj(f) else out

    def integrate(self, f):
        """Riemannian integral ``int f dVol_g`` by the (spectrally accurate) trapezoid rule."""
        return np.sum(f * self.e2phi, axis=(-2, -1)) * self.cell

    def interpolate(self, f, x, y):
        """Trigonometric interpolation of grid field(s) ``f[..., Nx, Ny]`` at points."""
        coef = sfft.fft2(f, axes=(-2, -1)) / (self.Nx * self.Ny)
        ex = _fourier_basis(self.Nx, self.Lx, np.ravel(x))
        ey = _fourier_basis(self.Ny, self.Ly, np.ravel(y))
        tmp = np.einsum("...ab,pa->...pb", coef, ex)
        val = np.einsum("...pb,pb->...p", tmp, ey)
        shape = np.shape(x)
        val = val.reshape(val.shape[:-1] + shape)
        return val.real if np.isrealobj(f) else val

    # -- geometry -------------------------------------------------------------
    def metric_factor(self, x, y):
        return np.exp(2 * self.phi_field.value(x, y))

    def christoffels(self, point) -> np.ndarray:
        """Christoffel symbols ``G[k, i, j]`` at a chart point."""
        x, y = point
        px, py, _ = self.phi_field.grad(np.array(x, float), np.array(y, float))
        return christoffel_array(px, py)

    def christoffel_grid(self):
        return christoffel_array(self.phix, self.phiy)

    def gauss_curvature(self):
        """Gauss curvature ``K = -e^{-2 phi} Lap(phi)`` on the grid."""
        return -self.laplacian(self.phi) / self.e2phi

    def gauss_curvature_at(self, x, y):
        fxx, _, fyy = self.phi_field.hess(x, y)
        return -np.exp(-2 * self.phi_field.value(x, y)) * (fxx + fyy)

    def norm(self, x, y, v):
        """Riemannian length of chart vector(s) ``v[..., 2]`` at ``(x, y)``."""
        v = np.asarray(v, float)
        return np.exp(self.phi_field.value(x, y)) * np.hypot(v[..., 0], v[..., 1])

    def inner(self, x, y, v, w):
        v, w = np.asarray(v, float), np.asarray(w, float)
        return self.metric_factor(x, y) * (v[..., 0] * w[..., 0] + v[..., 1] * w[..., 1])


def christoffel_array(px, py):
    """Conformal-metric Christoffels ``G[k, i, j]`` from the gradient of phi."""
    px = np.asarray(px, float)
    py = np.asarray(py, float)
    G = np.zeros((2, 2, 2) + px.shape)
    G[0, 0, 0] = px
    G[0, 0, 1] = G[0, 1, 0] = py
    G[0, 1, 1] = -px
    G[1, 1, 1] = py
    G[1, 0, 1] = G[1, 1, 0] = px
    G[1, 0, 0] = -py
    return G


def _fourier_basis(n, length, pts):
    """Rows ``exp(i k x_p)`` for the FFT ordering; Nyquist column uses ``cos``."""
    k = 2 * np.pi * sfft.fftfreq(n, d=length / n)
    arg = np.outer(pts, k)
    e = np.exp(1j * arg)
    if n % 2 == 0:
        e[:, n // 2] = np.cos(arg[:, n // 2])
    return e


@dataclass
class ForceField:
    """Magnetic intensity ``b`` (``Omega = b dVol_g``) or thermostat ``lambda(x, theta)``.

    Use the constructors :meth:`magnetic`, :meth:`exact` and :meth:`thermostat`.
    For an exact field ``b = e^{-2 phi} (d_x alpha_2 - d_y alpha_1)`` is derived from
    the primitive, so that ``d alpha = b dVol_g`` holds identically.
    """

    kind: str
    surface: ConformalSurface
    b_field: ModeField | None = None
    lam_field: ModeField | None = None
    alpha: tuple | None = None
    _cache: dict = dc_field(default_factory=dict, repr=False)

    @classmethod
    def magnetic(cls, surface, b=None):
        """Magnetic field from a mode list / ModeField / constant."""
        if b is None:
            b = ModeField.zero(surface.Lx, surface.Ly)
        elif np.isscalar(b):
            b = ModeField.constant(b, surface.Lx, surface.Ly)
        if b.j is not None:
            raise ConfigError("magnetic intensity cannot depend on the fiber angle")
        return cls("magnetic", surface, b_field=b)

    @classmethod
    def exact(cls, surface, alpha1: ModeField, alpha2: ModeField):
        """Exact magnetic field with primitive ``alpha = alpha1 dx + alpha2 dy``."""
        return cls("magnetic", surface, alpha=(alpha1, alpha2))

    @classmethod
    def thermostat(cls, surface, lam=None):
        if lam is None:
            lam = ModeField.zero(surface.Lx, surface.Ly)
        elif np.isscalar(lam):
            lam = ModeField.constant(lam, surface.Lx, surface.Ly)
        return cls("thermostat", surface, lam_field=lam)

    @property
    def is_magnetic(self):
        return self.kind == "magnetic"

    @property
    def has_primitive(self):
        return self.alpha is not None

    def require_magnetic(self, what="operation"):
        if not self.is_magnetic:
            raise UnsupportedOperation(f"{what} requires a magnetic field (Y fiber-dependent)")

    @property
    def fiber_band(self) -> int:
        return self.lam_field.fiber_band if self.lam_field is not None else 0

    # -- pointwise evaluation -------------------------------------------------
    def b(self, x, y):
        if self.b_field is not None:
            return self.b_field.value(x, y)
        if self.alpha is None:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        a1, a2 = self.alpha
        curl = a2.grad(x, y)[0] - a1.grad(x, y)[1]
        return np.exp(-2 * self.surface.phi_field.value(x, y)) * curl

    def b_grad(self, x, y):
        if self.b_field is not None:
            gx, gy, _ = self.b_field.grad(x, y)
            return gx, gy
        if self.alpha is None:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy()
        a1, a2 = self.alpha
        h1, h2 = a1.hess(x, y), a2.hess(x, y)
        curl = a2.grad(x, y)[0] - a1.grad(x, y)[1]
        curl_x = h2[0] - h1[1]
        curl_y = h2[1] - h1[2]
        px, py, _ = self.surface.phi_field.grad(x, y)
        w = np.exp(-2 * self.surface.phi_field.value(x, y))
        return w * (curl_x - 2 * px * curl), w * (curl_y - 2 * py * curl)

    def b_jet(self, x, y):
        """``(b, b_x, b_y)`` at points."""
        if self.b_field is not None:
            f = self.b_field.jet(x, y)
            return f[0], f[1], f[2]
        if self.alpha is None:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z, z
        a1 = self.alpha[0].jet(x, y)
        a2 = self.alpha[1].jet(x, y)
        ph = self.surface.phi_field.jet(x, y)
        curl = a2[1] - a1[2]
        curl_x = a2[4] - a1[5]
        curl_y = a2[5] - a1[6]
        w = np.exp(-2 * ph[0])
        return w * curl, w * (curl_x - 2 * ph[1] * curl), w * (curl_y - 2 * ph[2] * curl)

    def lam_jet(self, x, y, theta):
        """``(lambda, lambda_x, lambda_y, lambda_theta)`` of the effective fiber rate."""
        if self.is_magnetic:
            b, bx, by = self.b_jet(x, y)
            z = 0 * np.asarray(theta, float)
            return b + z, bx + z, by + z, z + 0 * b
        f = self.lam_field.jet(x, y, theta)
        return f[0], f[1], f[2], f[3]

    def lam(self, x, y, theta):
        """Effective fiber rate: ``b`` (magnetic) or ``lambda(x, theta)`` (thermostat)."""
        if self.is_magnetic:
            return self.b(x, y) + 0 * np.asarray(theta, float)
        return self.lam_field.value(x, y, theta)

    def lam_grad(self, x, y, theta):
        """``(d_x, d_y, d_theta)`` of the effective fiber rate."""
        if self.is_magnetic:
            gx, gy = self.b_grad(x, y)
            z = 0 * np.asarray(theta, float)
            return gx + z, gy + z, z + 0 * gx
        return self.lam_field.grad(x, y, theta)

    def alpha_at(self, x, y):
        """Primitive components ``(alpha_1, alpha_2)`` at points (zero if absent)."""
        if self.alpha is None:
            if self.b_field is not None and np.any(self.b_field.coef != 0):
                raise ConfigError("magnetic primitive required but not supplied")
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy()
        return self.alpha[0].value(x, y), self.alpha[1].value(x, y)

    def alpha_jac(self, x, y):
        """Chart Jacobian ``[[a1_x, a1_y], [a2_x, a2_y]]`` of the primitive."""
        if self.alpha is None:
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy(), z.copy(), z.copy()
        g1, g2 = self.alpha[0].grad(x, y), self.alpha[1].grad(x, y)
        return g1[0], g1[1], g2[0], g2[1]

    def is_exact(self):
        """Whether a global primitive is available (supplied, or the field vanishes)."""
        if self.alpha is not None:
            return True
        return self.is_magnetic and not np.any(self.b_field.coef != 0)

    def is_zero(self):
        if self.is_magnetic:
            return self.alpha is None and not np.any(self.b_field.coef != 0)
        return bool(np.all(self.lam_field.coef == 0))

    # -- grids ----------------------------------------------------------------
    def b_grid(self, surface=None):
        """Magnetic intensity sampled on ``surface``'s grid (default: own surface)."""
        if not self.is_magnetic:
            raise UnsupportedOperation("thermostat fields have no base intensity")
        s = surface if surface is not None else self.surface
        key = ("b", s.Nx, s.Ny)
        if key not in self._cache:
            self._cache[key] = self.b(s.X, s.Y)
        return self._cache[key]

    def lambda_modes_grid(self, surface=None):
        """Fiber modes ``{j: complex grid}`` of the effective rate on a grid."""
        s = surface if surface is not None else self.surface
        if self.is_magnetic:
            return {0: self.b_grid(s).astype(complex)}
        return self.lam_field.fiber_modes_grid(s.X, s.Y)

    def on(self, surface):
        """Same force data attached to another sampling of the metric."""
        return ForceField(self.kind, surface, self.b_field, self.lam_field, self.alpha)

    def check_primitive(self, tol=1e-10):
        """Relative defect of ``d alpha = b dVol_g`` evaluated spectrally on the grid."""
        if self.alpha is None or self.b_field is None:
            return 0.0
        s = self.surface
        a1 = self.alpha[0].value(s.X, s.Y)
        a2 = self.alpha[1].value(s.X, s.Y)
        curl = s.dx(a2) - s.dy(a1)
        target = self.b_field.value(s.X, s.Y) * s.e2phi
        return float(np.max(np.abs(curl - target)) / max(np.max(np.abs(target)), 1e-300))


def lorentz_force(surface: ConformalSurface, field: ForceField, point, v):
    """Lorentz force ``Y(x, v)`` as a chart vector.

    Magnetic: ``b(x) v^perp``; thermostat: ``lambda(x, theta(v)) v^perp`` with
    ``|v|_g = 1`` required. ``v^perp`` is the +90 degree chart rotation.
    """
    x, y = point
    v = np.asarray(v, float)
    vperp = ROTATION @ v
    if field.is_magnetic:
        return field.b(x, y) * vperp
    speed = surface.norm(x, y, v)
    if abs(speed - 1.0) > 1e-8:
        raise DomainError("thermostat force is defined on unit vectors only")
    theta = np.arctan2(v[1], v[0])
    return field.lam(x, y, theta) * vperp
