"""Truncated normal operator: a cutoff-weighted flow average sandwiched between
tensor pullbacks and pushforwards, plus symbol probes and dense spectral experiments.

The flow average is

    (A u)(z) = int_{-eps}^{eps} chi(t) u(phi_t z) dt,

evaluated with one orbit per output node.  ``chi`` is the autocorrelation of a bump,
so its Fourier transform is nonnegative and the quadratic form of ``A`` is
nonnegative up to quadrature error.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import gamma, j0

from .dynamics import _rhs, integrate_with_jacobian, rk4_step
from .geometry import ConfigError, ConformalSurface, DomainError, ForceField
from .lifting import FiberFunction, evaluate_modes, moment_table, pullback_pair, pushforward_pair
from .tensors import (SymTensorField, TensorPair, _pair_weights, binomials, contraction_projector,
                      dmu_star, fourier_pair_basis, from_orthonormal)


def _bump(s):
    out = np.zeros_like(s, dtype=float)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_prime(s):
    out = np.zeros_like(s, dtype=float)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si ** 2)) * (-2 * si / (1.0 - si ** 2) ** 2)
    return out


class CutoffProfile:
    """Even cutoff on ``[-epsilon, epsilon]``: normalized autocorrelation of a bump.

    The bump ``beta(s) = exp(-1/(1 - (2s/eps)^2))`` lives on ``[-eps/2, eps/2]``;
    ``chi(t) = C(t) / C(0)`` with ``C(t) = int beta(s) beta(s + t) ds`` computed by a
    fine trapezoid sum whose spacing divides the node spacing.  The node values are
    therefore a subsequence of a discrete autocorrelation, hence a positive-definite
    sequence: the discrete Fourier transform of the sampled profile is nonnegative.

    Parameters
    ----------
    epsilon : float
        Half-width of the support.
    n_t : int
        Odd number of equispaced time nodes on ``[-epsilon, epsilon]`` (at least 65).
    refine : int
        Fine trapezoid points per node spacing.
    """

    def __init__(self, epsilon=2.0, n_t=129, refine=64):
        if epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if n_t < 64 or n_t % 2 == 0:
            raise ConfigError("n_t must be odd and at least 65")
        self.epsilon = float(epsilon)
        self.n_t = int(n_t)
        self.half = (self.n_t - 1) // 2
        self.step = self.epsilon / self.half
        self.nodes = np.arange(-self.half, self.half + 1) * self.step
        self._fine = self.step / refine
        n_fine = int(round(self.epsilon / 2 / self._fine))
        self._s = np.arange(-n_fine, n_fine + 1) * self._fine
        self._beta = _bump(2 * self._s / self.epsilon)
        self._c0 = self._fine * np.sum(self._beta ** 2)
        self.values = self(self.nodes)
        self.weights = np.full(self.n_t, self.step)
        self.integral = float(np.sum(self.weights * self.values))

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        shifted = _bump(2 * (self._s[None, :] + t[:, None]) / self.epsilon)
        return self._fine * (shifted @ self._beta) / self._c0

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        shifted = _bump_prime(2 * (self._s[None, :] + t[:, None]) / self.epsilon)
        return (2 / self.epsilon) * self._fine * (shifted @ self._beta) / self._c0

    def node_spectrum(self):
        """Real DFT of the node values, periodized on a grid twice the support."""
        padded = np.zeros(2 * self.n_t)
        padded[:self.half + 1] = self.values[self.half:]
        padded[-self.half:] = self.values[:self.half]
        return np.fft.fft(padded).real


@dataclass
class NormalOpConfig:
    """Quadrature and output parameters for the truncated normal operator.

    ``n_theta`` angles per base node resolve fiber modes up to ``n_theta // 4``.
    ``eval_grid`` (Nx, Ny) selects the output resolution (default: input grid).
    """

    cutoff: CutoffProfile = dc_field(default_factory=CutoffProfile)
    n_theta: int = 64
    eval_grid: tuple | None = None
    include_mean: bool = True
    substeps: int = 1

    def __post_init__(self):
        if self.n_theta < 4:
            raise ConfigError("n_theta must be at least 4")
        if self.substeps < 1:
            raise ConfigError("substeps must be positive")

    @property
    def n_t(self):
        return self.cutoff.n_t

    @property
    def band(self):
        return self.n_theta // 4


def _flow_average_at(surface, field, evaluate, x, y, theta, cfg: NormalOpConfig):
    """``sum_i w_i chi(t_i) u(phi_{t_i} z)`` for the phase points ``z = (x, y, theta)``.

    ``evaluate(x, y, theta)`` returns values of ``u`` (last axis indexes points; a
    leading axis is allowed for several functions at once).
    """
    prof = cfg.cutoff
    z0 = np.array([np.ravel(x), np.ravel(y), np.ravel(theta)], float)
    acc = prof.weights[prof.half] * prof.values[prof.half] * evaluate(*z0)
    h = prof.step / cfg.substeps
    for sign in (1.0, -1.0):
        z = z0.copy()
        for i in range(1, prof.half + 1):
            for _ in range(cfg.substeps):
                z = rk4_step(surface, field, z, sign * h)
            idx = prof.half + int(sign) * i
            c = prof.weights[idx] * prof.values[idx]
            if c != 0.0:
                acc = acc + c * evaluate(*z)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite orbit point in flow average")
    return acc


def _fiber_nodes(n_theta):
    return 2 * np.pi * np.arange(n_theta) / n_theta


def _output_surface(surface, cfg):
    if cfg.eval_grid is None:
        return surface
    nx, ny = cfg.eval_grid
    return surface.with_grid(nx, ny)


def truncated_flow_average(surface: ConformalSurface, field: ForceField, u: FiberFunction,
                           cfg: NormalOpConfig | None = None) -> FiberFunction:
    """``A u`` on the output grid, with fiber band ``cfg.n_theta // 4``."""
    cfg = cfg or NormalOpConfig()
    out_s = _output_surface(surface, cfg)
    th = _fiber_nodes(cfg.n_theta)
    X = np.broadcast_to(out_s.X[None], (cfg.n_theta,) + out_s.shape)
    Y = np.broadcast_to(out_s.Y[None], X.shape)
    T = np.broadcast_to(th[:, None, None], X.shape)
    vals = _flow_average_at(surface, field, lambda a, b, c: evaluate_modes(surface, u.modes, a, b, c),
                            X, Y, T, cfg).reshape(X.shape)
    if u.reality_defect() < 1e-13 * max(np.abs(u.modes).max(), 1e-300):
        vals = vals.real
    return FiberFunction.from_samples(vals, cfg.band)


def flow_average_at(surface, field, u: FiberFunction, x, y, theta, cfg: NormalOpConfig | None = None):
    """Pointwise ``(A u)(x, y, theta)`` without fiber truncation of the output."""
    cfg = cfg or NormalOpConfig()
    shape = np.broadcast(x, y, theta).shape
    X, Y, T = (np.broadcast_to(np.asarray(a, float), shape) for a in (x, y, theta))
    vals = _flow_average_at(surface, field, lambda a, b, c: evaluate_modes(surface, u.modes, a, b, c),
                            X, Y, T, cfg)
    return vals.reshape(shape)


def fiber_form_matrix(surface, field, kmax=3, jmax=2, cfg: NormalOpConfig | None = None):
    """Quadratic form of the flow average on ``e^{i(k.x + j theta)}``, ``|k_i| <= kmax, |j| <= jmax``.

    Returns ``(M, G)`` with ``M[a, b] = <A u_b, u_a>`` and ``G`` the Gram matrix, both by
    quadrature over the grid times ``cfg.n_theta`` angles with the Liouville weight.
    """
    cfg = cfg or NormalOpConfig()
    labels = [(i, j, l) for i in range(-kmax, kmax + 1) for j in range(-kmax, kmax + 1)
              for l in range(-jmax, jmax + 1)]
    th = _fiber_nodes(cfg.n_theta)
    n = surface.Nx * surface.Ny
    X = np.tile(surface.X.ravel(), cfg.n_theta)
    Y = np.tile(surface.Y.ravel(), cfg.n_theta)
    T = np.repeat(th, n)

    kx = 2 * np.pi * np.arange(-kmax, kmax + 1) / surface.Lx
    ky = 2 * np.pi * np.arange(-kmax, kmax + 1) / surface.Ly
    jj = np.arange(-jmax, jmax + 1)

    def ev(a, b, c):
        ex, ey, et = (np.exp(1j * np.outer(w, v)) for w, v in ((kx, a), (ky, b), (jj, c)))
        return (ex[:, None, None] * ey[None, :, None] * et[None, None, :]).reshape(len(labels), -1)

    U = ev(X, Y, T)
    AU = _flow_average_at(surface, field, ev, X, Y, T, cfg)
    wt = np.tile((surface.e2phi * surface.cell).ravel(), cfg.n_theta) * (2 * np.pi / cfg.n_theta)
    return (U.conj() * wt) @ AU.T, (U.conj() * wt) @ U.T


def sm_volume(surface):
    return 2 * np.pi * surface.integrate(np.ones(surface.shape))


def _mean_term(surface, u: FiberFunction):
    """Coefficient of the rank-one term: ``<u, 1> / Vol(SM)``."""
    return 2 * np.pi * surface.integrate(u.mode(0)) / sm_volume(surface)


def normal_apply(surface: ConformalSurface, field: ForceField, f: TensorPair,
                 cfg: NormalOpConfig | None = None) -> TensorPair:
    """Truncated normal operator on a pair ``[p, q]`` of ranks ``(m, m - 1)``.

    Pullback, flow average, pushforward; with ``cfg.include_mean`` the rank-one mean
    term (the normalized ``<u, 1> 1``) is added before pushing forward.
    """
    cfg = cfg or NormalOpConfig()
    m = f.rank
    if cfg.band < m:
        raise ConfigError(f"n_theta = {cfg.n_theta} too small for rank {m}")
    u = pullback_pair(surface, f, max(m, 1))
    Au = truncated_flow_average(surface, field, u, cfg)
    out_s = _output_surface(surface, cfg)
    if cfg.include_mean:
        Au = Au + FiberFunction.from_base(np.full(out_s.shape, _mean_term(surface, u)), Au.J)
    out = pushforward_pair(out_s, Au, m)
    if all(np.isrealobj(t.comps) for t in f.parts()):
        out = TensorPair(*(SymTensorField(t.rank, t.comps.real) for t in out.parts())) \
            if m > 0 else TensorPair(SymTensorField(0, out.p.comps.real))
    return out


# -- thermostats -------------------------------------------------------------

def polar_jacobian(surface, field, x, y, theta, times, step=None):
    """``|det d(r, omega) / d(t, theta)|`` along the orbit from ``(x, y, theta)``.

    ``r = e^{phi(x)} |X(t) - x|`` and ``omega`` is the chart polar angle of
    ``X(t) - x``; with ``dr d omega = e^{2 phi(x)} dX / r`` this reads
    ``e^{2 phi(x)} |det[X'(t), dX/dtheta]| / r``.  ``times`` must be positive.
    """
    times = np.asarray(times, float)
    if np.any(times <= 0):
        raise DomainError("polar coordinates are singular at t = 0")
    h = times.min() / 8 if step is None else step
    T = times.max()
    t, zs, Js = integrate_with_jacobian(surface, field, (x, y, theta), T, h)
    idx = np.rint(times / (t[1] - t[0])).astype(int)
    if np.max(np.abs(t[idx] - times)) > 1e-9 * max(T, 1):
        raise ConfigError("times must be multiples of the integration step")
    e = np.exp(surface.phi_field.value(x, y))
    X = zs[idx, :2]
    V = np.array([_rhs(surface, field, z)[:2] for z in zs[idx]])
    dth = Js[idx, :2, 2]
    det = np.abs(V[:, 0] * dth[:, 1] - V[:, 1] * dth[:, 0])
    r = e * np.linalg.norm(X - np.array([x, y]), axis=1)
    return e ** 2 * det / r


def jacobian_at_zero(surface, field, x, y, theta, h=1e-2, order=6):
    """``J(x, 0, theta)`` by polynomial extrapolation of ``J(x, k h, theta)``, k = 1..order+1."""
    times = h * np.arange(1, order + 2)
    vals = polar_jacobian(surface, field, x, y, theta, times, step=h / 8)
    coef = np.polynomial.polynomial.polyfit(times, vals, order)
    return float(coef[0])


def thermostat_normal_apply(surface, field, f: SymTensorField, cfg: NormalOpConfig | None = None,
                            check_points=8, tol=1e-6, rng=None):
    """``N_0 f`` for a thermostat (or magnetic) flow; checks ``J(x, 0, theta) = 1``.

    The polar Jacobian is extrapolated to ``t = 0`` at ``check_points`` random phase
    points; a deviation above ``tol`` raises :class:`DomainError`.
    Returns ``(N_0 f, max |J(x, 0, theta) - 1|)``.
    """
    if f.rank != 0:
        raise ConfigError("thermostat normal operator acts on functions")
    rng = np.random.default_rng(0) if rng is None else rng
    dev = 0.0
    for _ in range(check_points):
        x, y = rng.uniform(0, surface.Lx), rng.uniform(0, surface.Ly)
        th = rng.uniform(0, 2 * np.pi)
        dev = max(dev, abs(jacobian_at_zero(surface, field, x, y, th) - 1.0))
    if dev > tol:
        raise DomainError(f"polar Jacobian at t = 0 deviates from 1 by {dev:.2e}")
    return normal_apply(surface, field, TensorPair(f), cfg).p, dev


# -- symbols -----------------------------------------------------------------

def c_nm(n, m):
    """Normalizing constant ``sqrt(pi) Gamma((n-1)/2 + m) / Gamma(n/2 + m)``."""
    return float(np.sqrt(np.pi) * gamma((n - 1) / 2 + m) / gamma(n / 2 + m))


def stationary_phase_symbol(m, k, P):
    """Leading flat-space symbol applied to the compressed tensor ``P`` of rank m.

    Only the two unit covectors ``omega = +-k_perp/|k|`` contribute to the fiber
    integral at high frequency; each gives ``(2 pi / |k|) P(omega^m) omega^m``.
    """
    k = np.asarray(k, float)
    kn = np.linalg.norm(k)
    out = np.zeros(m + 1, complex)
    for sgn in (1, -1):
        w = sgn * np.array([-k[1], k[0]]) / kn
        mono = np.array([w[0] ** (m - c) * w[1] ** c for c in range(m + 1)])
        out += (2 * np.pi / kn) * np.sum(binomials(m) * P * mono) * mono
    return out


def truncated_scalar_symbol(cutoff: CutoffProfile, k_norm):
    """Exact flat-space multiplier of the truncated rank-0 operator: ``2 pi int chi(t) J_0(|k| t) dt``."""
    t = cutoff.nodes
    return float(2 * np.pi * np.sum(cutoff.weights * cutoff.values * j0(k_norm * t)))


def _solenoidal_polarization(k, m):
    if m == 0:
        return np.ones(1)
    B = contraction_projector(k, m)
    w, V = np.linalg.eigh(B)
    v = V[:, np.argmax(w)]
    v = from_orthonormal(v, m)
    return v / v[np.argmax(np.abs(v))]


def _normal_at_points(surface, field, f: TensorPair, cfg, x, y):
    """Components of the truncated normal operator at base points (no mean term)."""
    m = f.rank
    u = pullback_pair(surface, f, max(m, 1))
    th = _fiber_nodes(cfg.n_theta)
    X = np.repeat(np.asarray(x, float)[None], cfg.n_theta, 0)
    Y = np.repeat(np.asarray(y, float)[None], cfg.n_theta, 0)
    T = np.broadcast_to(th[:, None], X.shape)
    vals = _flow_average_at(surface, field, lambda a, b, c: evaluate_modes(surface, u.modes, a, b, c),
                            X, Y, T, cfg).reshape(X.shape)
    jmodes = np.fft.fft(vals, axis=0) / cfg.n_theta  # (n_theta, npts)
    e = np.exp(surface.phi_field.value(x, y))
    res = []
    for r in ([m, m - 1] if m > 0 else [m]):
        tab = moment_table(r)
        comps = np.zeros((r + 1, len(x)), complex)
        for c in range(r + 1):
            for j in range(-r, r + 1):
                comps[c] += 2 * np.pi * tab[c, j + r] * jmodes[(-j) % cfg.n_theta]
        res.append(comps * e ** r)
    return res


def symbol_probe(surface, field, m, k, cfg: NormalOpConfig | None = None, n_points=8, strict=True):
    """Measured versus predicted principal symbol on an oscillatory solenoidal input.

    The input ``e^{i k.x} P`` uses the polarization ``P`` spanning ``ker i_k``.  For
    ``m > 0`` the two pair entries are probed separately, giving the diagonal blocks
    and the off-diagonal leakage.  Returns a dict with per-component rows
    ``(block, component, measured, predicted, rel_err)`` plus summary numbers.
    """
    cfg = cfg or NormalOpConfig()
    kx, ky = int(k[0]), int(k[1])
    kvec = 2 * np.pi * np.array([kx / surface.Lx, ky / surface.Ly])
    kn = float(np.linalg.norm(kvec))
    if kn == 0:
        raise ConfigError("wavevector must be non-zero")
    if strict:
        if kn * cfg.cutoff.epsilon < 8:
            raise ConfigError("need |k| * epsilon >= 8")
        if max(abs(kx), abs(ky)) > min(surface.Nx, surface.Ny) // 4:
            raise ConfigError("wavevector exceeds a quarter of the grid")
    if cfg.band < m:
        raise ConfigError(f"n_theta = {cfg.n_theta} too small for rank {m}")
    rng = np.random.default_rng(12345)
    ix = rng.integers(0, surface.Nx, n_points)
    iy = rng.integers(0, surface.Ny, n_points)
    x, y = surface.x[ix], surface.y[iy]
    wave = np.exp(1j * (kvec[0] * surface.X + kvec[1] * surface.Y))
    wave_pts = np.exp(1j * (kvec[0] * x + kvec[1] * y))
    rows = []
    off = 0.0
    ranks = [m, m - 1] if m > 0 else [m]
    for block, r in enumerate(ranks):
        P = _solenoidal_polarization(kvec, r)
        parts = []
        for rr in ranks:
            comps = (P[:, None, None] * wave[None]) if rr == r else np.zeros((rr + 1,) + surface.shape, complex)
            parts.append(SymTensorField(rr, comps))
        out = _normal_at_points(surface, field, TensorPair(*parts), cfg, x, y)
        pred = stationary_phase_symbol(r, kvec, P)
        for c in range(r + 1):
            if abs(P[c]) < 1e-12:
                continue
            meas = complex(np.mean(out[block][c] / (P[c] * wave_pts)))
            pr = float((pred[c] / P[c]).real)
            rows.append({"block": f"{r}<-{r}", "component": c, "measured": meas, "predicted": pr,
                         "rel_err": abs(meas - pr) / abs(pr)})
        if len(ranks) == 2:
            other = out[1 - block]
            off = max(off, float(np.max(np.abs(other))) / np.max(np.abs(P)))
    return {"k": (kx, ky), "k_norm": kn, "rows": rows,
            "max_rel_err": max(r["rel_err"] for r in rows),
            "off_diagonal": off / (2 * np.pi / kn) if len(ranks) == 2 else 0.0,
            "scalar_reference": truncated_scalar_symbol(cfg.cutoff, kn)}


# -- dense experiments -------------------------------------------------------

def _basis_on_sm(surface, X, Y, T, modes, ranks):
    """Pullbacks of Fourier basis pairs at phase points, shape (n_basis, n_points)."""
    phi = surface.phi_field.value(X, Y)
    c, s = np.cos(T), np.sin(T)
    ix = np.array([i for i, _ in modes])
    iy = np.array([j for _, j in modes])
    ux, uy = np.unique(ix), np.unique(iy)
    Ex = np.exp(1j * np.outer(2 * np.pi * ux / surface.Lx, X))
    Ey = np.exp(1j * np.outer(2 * np.pi * uy / surface.Ly, Y))
    waves = Ex[np.searchsorted(ux, ix)] * Ey[np.searchsorted(uy, iy)]
    rows = []
    for r in ranks:
        bins = binomials(r)
        for comp in range(r + 1):
            rows.append(waves * (bins[comp] * c ** (r - comp) * s ** comp * np.exp(-r * phi))[None])
    return np.concatenate(rows, axis=0)


def normal_galerkin(surface, field, m, cfg: NormalOpConfig | None = None):
    """Dense matrix of the truncated normal operator on the Fourier pair basis.

    Entries are ``<A pi^* e_b, pi^* e_a>_{SM}`` (plus the mean term) by quadrature on
    the grid times ``n_theta`` angles; returned with the basis Gram matrix.
    """
    cfg = cfg or NormalOpConfig()
    Nx, Ny = surface.shape
    modes = [(i, j) for i in range(-(Nx // 2) + 1, Nx // 2) for j in range(-(Ny // 2) + 1, Ny // 2)]
    ranks = [m, m - 1] if m > 0 else [m]
    th = _fiber_nodes(cfg.n_theta)
    X = np.repeat(surface.X.ravel()[None], cfg.n_theta, 0).ravel()
    Y = np.repeat(surface.Y.ravel()[None], cfg.n_theta, 0).ravel()
    T = np.repeat(th[:, None], Nx * Ny, 1).ravel()

    def ev(a, b, c):
        return _basis_on_sm(surface, a, b, c, modes, ranks)

    U = ev(X, Y, T)
    AU = _flow_average_at(surface, field, ev, X, Y, T, cfg)
    wt = np.repeat((surface.e2phi * surface.cell).ravel()[None], cfg.n_theta, 0).ravel() \
        * (2 * np.pi / cfg.n_theta)
    M = (U.conj() * wt) @ AU.T
    if cfg.include_mean:
        means = U @ wt
        M = M + np.outer(means.conj(), means) / sm_volume(surface)
    # basis Gram matrix in the tensor L2 product
    B = fourier_pair_basis(surface, m)
    w = _pair_weights(surface, m)
    G = B.conj().T @ (w[:, None] * B)
    return M, G, B


def injectivity_spectrum(surface, field, m, small_grid_N=12, cfg: NormalOpConfig | None = None,
                         threshold=1e-8):
    """Singular values of the truncated normal operator on numerically solenoidal pairs.

    Returns a dict with ``singular_values`` (ascending), ``smallest_solenoidal``,
    ``coercivity`` (minimum of ``<N f, f>`` over unit solenoidal ``f``) and the
    dimension of the solenoidal subspace.
    """
    if small_grid_N > 16:
        raise MemoryError("dense assembly limited to small_grid_N <= 16")
    if m < 1:
        raise ConfigError("solenoidal restriction needs m >= 1")
    cfg = cfg or NormalOpConfig()
    s = surface.with_grid(small_grid_N, small_grid_N)
    M, G, B = normal_galerkin(s, field, m, cfg)
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    N_on = Li @ M @ Li.conj().T  # orthonormal coordinates
    # discretized D_mu^* on the basis, measured in the output L2 norm
    w_out = _pair_weights(s, m - 1)
    cols = np.array([dmu_star(s, field, TensorPair.from_vector(B[:, b], m, s.shape)).to_vector()
                     for b in range(B.shape[1])]).T
    D = (np.sqrt(w_out)[:, None] * cols) @ Li.conj().T
    _, sv, vh = np.linalg.svd(D)
    rank = int(np.sum(sv > threshold * sv.max()))
    Q = vh[rank:].conj().T
    Ns = Q.conj().T @ N_on @ Q
    svals = np.sort(np.linalg.svd(Ns, compute_uv=False))
    herm = 0.5 * (Ns + Ns.conj().T)
    coer = float(np.linalg.eigvalsh(herm).min())
    return {"singular_values": svals.tolist(), "smallest_solenoidal": float(svals[0]),
            "coercivity": coer, "solenoidal_dim": int(Q.shape[1]),
            "hermitian_defect": float(np.abs(N_on - N_on.conj().T).max() / np.abs(N_on).max())}
