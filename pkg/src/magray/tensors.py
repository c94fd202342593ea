"""Symmetric tensor fields on the model surface and the magnetic potential operator.

A rank-``m`` field is stored as ``m + 1`` grids: component ``k`` is
``T(e_1, ..., e_1, e_2, ..., e_2)`` with ``k`` copies of ``e_2`` (chart basis).
Pointwise inner products carry multinomial weights and the factor ``e^{-2 m phi}``
coming from the inverse metric; L2 products integrate against ``dVol = e^{2 phi} dx dy``.

``S`` denotes the averaging symmetrizer, ``D = S o nabla``, and the divergence used
throughout is the formal adjoint ``D^* = -tr nabla`` written in conservative form so
that the discrete operators are exact adjoints of each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import comb

import numpy as np
from scipy import fft as sfft

from .geometry import ROTATION, ConformalSurface, DomainError, ForceField


class RankError(ValueError):
    """Operation applied to a tensor of unsupported rank."""


class SolverError(RuntimeError):
    """Iterative solver failed to converge; ``residual`` holds the last relative residual."""

    def __init__(self, msg, residual, iterations):
        super().__init__(f"{msg}: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SymTensorField:
    rank: int
    comps: np.ndarray

    def __post_init__(self):
        self.comps = np.asarray(self.comps)
        if self.comps.shape[0] != self.rank + 1:
            raise RankError(f"rank {self.rank} needs {self.rank + 1} components")

    @classmethod
    def zeros(cls, surface, m, dtype=float):
        return cls(m, np.zeros((m + 1,) + surface.shape, dtype))

    @classmethod
    def function(cls, f):
        return cls(0, np.asarray(f)[None])

    def __add__(self, other):
        _same_rank(self, other)
        return SymTensorField(self.rank, self.comps + other.comps)

    def __sub__(self, other):
        _same_rank(self, other)
        return SymTensorField(self.rank, self.comps - other.comps)

    def __mul__(self, c):
        return SymTensorField(self.rank, self.comps * c)

    __rmul__ = __mul__

    def __neg__(self):
        return SymTensorField(self.rank, -self.comps)

    def evaluate(self, surface, x, y):
        """Components at arbitrary chart points by trigonometric interpolation."""
        return surface.interpolate(self.comps, x, y)


def _same_rank(a, b):
    if a.rank != b.rank:
        raise RankError(f"rank mismatch {a.rank} vs {b.rank}")


@dataclass
class TensorPair:
    """Pair ``[p, q]`` of ranks ``(m, m - 1)``; ``q`` is None when ``m = 0``."""

    p: SymTensorField
    q: SymTensorField | None = None

    def __post_init__(self):
        if self.p.rank == 0 and self.q is not None:
            raise RankError("rank-0 pairs have no second entry")
        if self.p.rank > 0:
            if self.q is None:
                raise RankError("second entry missing")
            if self.q.rank != self.p.rank - 1:
                raise RankError("pair ranks must differ by one")

    @property
    def rank(self):
        return self.p.rank

    @classmethod
    def zeros(cls, surface, m, dtype=float):
        return cls(SymTensorField.zeros(surface, m, dtype),
                   SymTensorField.zeros(surface, m - 1, dtype) if m > 0 else None)

    def parts(self):
        return [self.p] if self.q is None else [self.p, self.q]

    def _combine(self, other, op):
        return TensorPair(op(self.p, other.p),
                          None if self.q is None else op(self.q, other.q))

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, c):
        return TensorPair(self.p * c, None if self.q is None else self.q * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_vector(self):
        return np.concatenate([t.comps.ravel() for t in self.parts()])

    @classmethod
    def from_vector(cls, vec, m, shape):
        n = int(np.prod(shape))
        p = SymTensorField(m, vec[: (m + 1) * n].reshape((m + 1,) + shape))
        q = None
        if m > 0:
            q = SymTensorField(m - 1, vec[(m + 1) * n:(2 * m + 1) * n].reshape((m,) + shape))
        return cls(p, q)


# -- index bookkeeping -------------------------------------------------------

@lru_cache(maxsize=None)
def _index_groups(m):
    """For each k, the full index tuples with exactly k entries equal to 1 (i.e. e_2)."""
    groups = [[] for _ in range(m + 1)]
    for idx in product(range(2), repeat=m):
        groups[sum(idx)].append(idx)
    return groups


def _canon(m, k):
    return (0,) * (m - k) + (1,) * k


def binomials(m):
    return np.array([comb(m, k) for k in range(m + 1)], float)


def expand(T: SymTensorField) -> np.ndarray:
    """Full component array of shape ``(2,)*m + grid``."""
    m = T.rank
    full = np.empty((2,) * m + T.comps.shape[1:], T.comps.dtype)
    for k, group in enumerate(_index_groups(m)):
        for idx in group:
            full[idx] = T.comps[k]
    return full


def compress(full: np.ndarray, m: int, symmetrize=True) -> SymTensorField:
    """Compressed components of ``S(full)`` (or raw canonical entries if not symmetrizing)."""
    comps = []
    for k, group in enumerate(_index_groups(m)):
        if symmetrize:
            comps.append(sum(full[idx] for idx in group) / len(group))
        else:
            comps.append(full[_canon(m, k)])
    return SymTensorField(m, np.array(comps))


# -- inner products ----------------------------------------------------------

def pointwise_inner(surface, A: SymTensorField, B: SymTensorField):
    _same_rank(A, B)
    w = binomials(A.rank).reshape((-1, 1, 1))
    return np.exp(-2 * A.rank * surface.phi) * np.sum(w * A.comps * np.conj(B.comps), axis=0)


def inner(surface, A, B):
    """L2 inner product of tensors or tensor pairs."""
    if isinstance(A, TensorPair):
        return sum(inner(surface, a, b) for a, b in zip(A.parts(), B.parts()))
    return surface.integrate(pointwise_inner(surface, A, B))


def norm(surface, A):
    return float(np.sqrt(abs(inner(surface, A, A))))


def l2_weights(surface, m):
    """Per-component quadrature weights realising the L2 product on compressed data."""
    return (binomials(m).reshape((-1, 1, 1)) * surface.cell
            * np.exp((2 - 2 * m) * surface.phi)[None])


# -- differential operators --------------------------------------------------

def _grad_full(surface, T):
    """Spectral ``(d_x T, d_y T)`` as full arrays."""
    dx = SymTensorField(T.rank, surface.dx(T.comps))
    dy = SymTensorField(T.rank, surface.dy(T.comps))
    return expand(dx), expand(dy)


def covariant_derivative(surface: ConformalSurface, T: SymTensorField) -> np.ndarray:
    """Full array ``(nabla T)[a, i_1..i_m]`` (derivative index first)."""
    m = T.rank
    G = surface.christoffel_grid()
    full = expand(T)
    d = _grad_full(surface, T)
    out = np.empty((2,) * (m + 1) + T.comps.shape[1:], np.result_type(full, float))
    for a in range(2):
        for idx in product(range(2), repeat=m):
            val = d[a][idx].copy()
            for pos in range(m):
                for c in range(2):
                    val = val - G[c, a, idx[pos]] * full[idx[:pos] + (c,) + idx[pos + 1:]]
            out[(a,) + idx] = val
    return out


def sym_derivative(surface: ConformalSurface, T: SymTensorField) -> SymTensorField:
    """``D T = S(nabla T)``, rank ``m + 1``."""
    return compress(covariant_derivative(surface, T), T.rank + 1)


def divergence(surface: ConformalSurface, T: SymTensorField) -> SymTensorField:
    """``-tr_g(nabla T)`` (rank ``m - 1``), the L2 adjoint of :func:`sym_derivative`."""
    M = T.rank
    if M < 1:
        raise RankError("divergence needs rank >= 1")
    m = M - 1
    G = surface.christoffel_grid()
    w = expand(T) * np.exp(-2 * m * surface.phi)
    dwx = surface.dx(w[0])
    dwy = surface.dy(w[1])
    out = np.empty((2,) * m + T.comps.shape[1:], np.result_type(w, float))
    scale = np.exp((2 * m - 2) * surface.phi)
    for idx in product(range(2), repeat=m):
        val = -(dwx[idx] + dwy[idx])
        for pos in range(m):
            for a in range(2):
                for i in range(2):
                    val = val - G[idx[pos], a, i] * w[(a,) + idx[:pos] + (i,) + idx[pos + 1:]]
        out[idx] = scale * val
    return compress(out, m, symmetrize=False)


def divergence_direct(surface, T: SymTensorField) -> SymTensorField:
    """``-tr_g(nabla T)`` evaluated literally (non-conservative form), for cross-checks."""
    M = T.rank
    if M < 1:
        raise RankError("divergence needs rank >= 1")
    nab = covariant_derivative(surface, T)
    out = -(nab[0, 0] + nab[1, 1]) * np.exp(-2 * surface.phi)
    return compress(out, M - 1, symmetrize=False)


def trace(surface, T: SymTensorField) -> SymTensorField:
    """Metric trace over one index pair (rank ``m - 2``)."""
    if T.rank < 2:
        raise RankError("trace needs rank >= 2")
    full = expand(T)
    return compress((full[0, 0] + full[1, 1]) * np.exp(-2 * surface.phi), T.rank - 2,
                    symmetrize=False)


def lorentz_on_tensors(surface, field: ForceField, T: SymTensorField) -> SymTensorField:
    """``(Y T)(v_1..v_m) = (1/m) sum_i T(.., Y v_i, ..)``; the identity on functions."""
    field.require_magnetic("Lorentz action on tensors")
    m = T.rank
    if m == 0:
        return SymTensorField(0, T.comps.copy())
    b = field.b_grid(surface)
    full = expand(T)
    out = np.zeros_like(full, dtype=np.result_type(full, float))
    for idx in product(range(2), repeat=m):
        val = 0
        for pos in range(m):
            for a in range(2):
                r = ROTATION[a, idx[pos]]
                if r:
                    val = val + r * full[idx[:pos] + (a,) + idx[pos + 1:]]
        out[idx] = b * val / m
    return compress(out, m, symmetrize=False)


def _g_times(surface, u: SymTensorField) -> np.ndarray:
    """Unsymmetrized full ``g (x) u``."""
    full = expand(u)
    out = np.zeros((2, 2) + full.shape, full.dtype)
    out[0, 0] = full * surface.e2phi
    out[1, 1] = full * surface.e2phi
    return out


def jmap(surface, u: SymTensorField, symmetrize=True) -> SymTensorField:
    """``J u = S(g (x) u)``, rank ``j + 2``."""
    return compress(_g_times(surface, u), u.rank + 2, symmetrize=symmetrize)


def jpower_one(surface, k):
    """``J^k(1)``."""
    u = SymTensorField.function(np.ones(surface.shape))
    for _ in range(k):
        u = jmap(surface, u)
    return u


# -- magnetic potential and divergence ---------------------------------------

def dmu(surface, field, a: TensorPair, symmetrize=True) -> TensorPair:
    """Magnetic potential operator, rank ``m`` pairs to rank ``m + 1`` pairs:

        D_mu[xi, eta] = [D xi + (m - 1) S(Y(eta) (x) g),  D eta + m Y(xi)]

    where ``m`` is the rank of ``xi``.  ``symmetrize=False`` keeps the raw
    ``Y(eta) (x) g`` entries (negative control only).
    """
    field.require_magnetic("magnetic potential")
    xi, eta = a.p, a.q
    m = xi.rank
    top = sym_derivative(surface, xi)
    if m >= 2:
        top = top + (m - 1) * jmap(surface, lorentz_on_tensors(surface, field, eta),
                                   symmetrize=symmetrize)
    if m == 0:
        bottom = SymTensorField(0, np.zeros_like(xi.comps, dtype=top.comps.dtype))
    else:
        bottom = sym_derivative(surface, eta) + m * lorentz_on_tensors(surface, field, xi)
    return TensorPair(top, bottom)


def dmu_star(surface, field, f: TensorPair) -> TensorPair:
    """L2 adjoint of :func:`dmu`: rank ``M`` pairs ``[p, q]`` to rank ``M - 1`` pairs,

        D_mu^*[p, q] = [-tr nabla p - (M - 1) Y(q),  -tr nabla q - M tr Y(p)].
    """
    field.require_magnetic("magnetic divergence")
    p, q = f.p, f.q
    M = p.rank
    if M < 1:
        raise RankError("magnetic divergence needs rank >= 1")
    top = divergence(surface, p)
    if M >= 2:
        top = top - (M - 1) * lorentz_on_tensors(surface, field, q)
    if M == 1:
        return TensorPair(top)
    bottom = divergence(surface, q) - M * trace(surface, lorentz_on_tensors(surface, field, p))
    return TensorPair(top, bottom)


def kernel_element(surface, m) -> TensorPair:
    """L2-normalized ``[J^{m/2} 1, 0]`` (m even) or ``[0, J^{(m-1)/2} 1]`` (m odd)."""
    if m % 2 == 0:
        pair = TensorPair(jpower_one(surface, m // 2),
                          SymTensorField.zeros(surface, m - 1) if m > 0 else None)
    else:
        pair = TensorPair(SymTensorField.zeros(surface, m), jpower_one(surface, (m - 1) // 2))
    return pair * (1.0 / norm(surface, pair))


# -- potential / solenoidal decomposition ------------------------------------

@dataclass
class Decomposition:
    P: TensorPair
    H: TensorPair
    iterations: int
    residual: float


def laplacian_mu(surface, field, P: TensorPair, kernel: TensorPair | None = None):
    """``D_mu^* D_mu P + Pi_K P`` (the kernel term is skipped if ``kernel`` is None)."""
    out = dmu_star(surface, field, dmu(surface, field, P))
    if kernel is not None:
        c = inner(surface, P, kernel)
        out = out + kernel * (c if np.iscomplexobj(P.p.comps) else c.real)
    return out


def _pair_weights(surface, m):
    ws = [l2_weights(surface, m)]
    if m > 0:
        ws.append(l2_weights(surface, m - 1))
    return np.concatenate([w.ravel() for w in ws])


def _preconditioner(surface, m):
    """Flat inverse Laplacian per mode, conjugated by the square-root weights."""
    w = _pair_weights(surface, m)
    sw = np.sqrt(w)
    ncomp = 2 * m + 1 if m > 0 else 1
    symbol = (surface.kx ** 2 + surface.ky ** 2) + 1.0
    scale = float(np.mean(np.exp(-2 * surface.phi)))
    shape = (ncomp,) + surface.shape

    def apply(r):
        z = (sw * r).reshape(shape)
        z = sfft.ifft2(sfft.fft2(z, axes=(-2, -1)) / (scale * symbol), axes=(-2, -1)).real
        return z.ravel() / sw  # W^{-1/2} L^{-1} W^{1/2} is self-adjoint in the W product

    return apply, w


def ps_decompose(surface, field, f: TensorPair, tol=1e-10, max_iter=None) -> Decomposition:
    """Split ``f = D_mu P + H`` with ``D_mu^* H = 0``.

    ``P`` (rank ``m - 1``) solves ``(D_mu^* D_mu + Pi_K) P = D_mu^* f`` by conjugate
    gradients in the L2 inner product with a flat inverse-Laplacian preconditioner;
    ``H = f - D_mu P``.  The residual is measured against ``max(|D_mu^* f|, |f|)`` so that
    nearly solenoidal input (tiny right-hand side) still terminates.  Raises :class:`SolverError` on non-convergence.
    """
    m = f.rank
    if m < 1:
        raise RankError("decomposition needs a pair of rank >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    r0 = m - 1
    shape = surface.shape
    if max_iter is None:
        max_iter = 10 * surface.Nx * surface.Ny
    K = kernel_element(surface, r0)
    rhs = dmu_star(surface, field, f).to_vector().real
    precond, w = _preconditioner(surface, r0)

    def A(vec):
        P = TensorPair.from_vector(vec, r0, shape)
        return laplacian_mu(surface, field, P, K).to_vector().real

    def dot(a, b):
        return float(np.sum(w * a * b))

    x = np.zeros_like(rhs)
    if not np.any(rhs):
        P = TensorPair.from_vector(x, r0, shape)
        return Decomposition(P, f - dmu(surface, field, P), 0, 0.0)
    bnorm = max(np.sqrt(dot(rhs, rhs)), norm(surface, f))
    r = rhs.copy()
    z = precond(r)
    d = z.copy()
    rz = dot(r, z)
    res = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        Ad = A(d)
        alpha = rz / dot(d, Ad)
        x += alpha * d
        if it % 25 == 0:
            r = rhs - A(x)
        else:
            r -= alpha * Ad
        res = np.sqrt(dot(r, r)) / bnorm
        if res <= tol:
            r = rhs - A(x)
            res = np.sqrt(dot(r, r)) / bnorm
            if res <= tol:
                break
        z = precond(r)
        rz_new = dot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    else:
        raise SolverError("conjugate gradients did not converge", res, it)
    P = TensorPair.from_vector(x, r0, shape)
    H = f - dmu(surface, field, P)
    return Decomposition(P, H, it, float(res))


# -- pointwise algebra -------------------------------------------------------

def contraction_matrix(xi, m):
    """Matrix of ``T -> i_xi T`` from compressed rank-m to compressed rank-(m-1) data."""
    A = np.zeros((m, m + 1))
    for k in range(m):  # output component with k twos among m-1 slots
        # (i_xi T)(e1^(m-1-k) e2^k) = xi_1 T_{k twos} + xi_2 T_{k+1 twos}
        A[k, k] += xi[0]
        A[k, k + 1] += xi[1]
    return A


def contraction_projector(xi, m):
    """Orthogonal projector onto ``ker i_xi`` in ``S^m`` at a point.

    Returned in orthonormal coordinates ``sqrt(binom(m, k)) * T_k`` so that the
    matrix is symmetric; use :func:`to_orthonormal` / :func:`from_orthonormal`.
    """
    xi = np.asarray(xi, float)
    if not np.any(xi):
        raise DomainError("covector must be non-zero")
    if m == 0:
        return np.eye(1)
    s = np.sqrt(binomials(m))
    A = contraction_matrix(xi, m) / s[None, :]
    # orthonormal basis of ker A
    _, sv, vt = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-12 * sv.max()))
    B = vt[rank:].T
    return B @ B.T


def to_orthonormal(comps, m):
    return np.sqrt(binomials(m)) * np.asarray(comps)


def from_orthonormal(comps, m):
    return np.asarray(comps) / np.sqrt(binomials(m))


# -- random band-limited data ------------------------------------------------

def random_scalar(surface, rng, kmax=4, amplitude=1.0, decay=1.0):
    """Real random trigonometric polynomial with ``|kx|, |ky| <= kmax``."""
    Nx, Ny = surface.shape
    coef = np.zeros((Nx, Ny), complex)
    for i in range(-kmax, kmax + 1):
        for j in range(-kmax, kmax + 1):
            c = (rng.standard_normal() + 1j * rng.standard_normal()) / (1 + i * i + j * j) ** (decay / 2)
            coef[i % Nx, j % Ny] += c
    f = sfft.ifft2(coef).real
    return amplitude * f / max(np.max(np.abs(f)), 1e-300)


def random_symtensor(surface, m, rng, kmax=4, amplitude=1.0):
    return SymTensorField(m, np.array([random_scalar(surface, rng, kmax, amplitude)
                                       for _ in range(m + 1)]))


def random_pair(surface, m, rng, kmax=4, amplitude=1.0):
    return TensorPair(random_symtensor(surface, m, rng, kmax, amplitude),
                      random_symtensor(surface, m - 1, rng, kmax, amplitude) if m > 0 else None)


# -- dense Galerkin assembly -------------------------------------------------

def fourier_pair_basis(surface, m):
    """Complex Fourier basis of rank-m pairs, one mode per (component, wavevector).

    Nyquist wavevectors are left out: their spectral derivative is set to zero, so
    keeping them would add spurious kernel directions.  Returns the matrix of grid
    values (columns are basis vectors) in :meth:`TensorPair.to_vector` layout.
    """
    Nx, Ny = surface.shape
    ix = [i for i in range(-(Nx // 2) + 1, Nx // 2)]
    iy = [j for j in range(-(Ny // 2) + 1, Ny // 2)]
    ncomp = 2 * m + 1 if m > 0 else 1
    n = Nx * Ny
    cols = []
    for c in range(ncomp):
        for i in ix:
            for j in iy:
                wave = np.exp(2j * np.pi * (i * surface.X / surface.Lx + j * surface.Y / surface.Ly))
                col = np.zeros(ncomp * n, complex)
                col[c * n:(c + 1) * n] = wave.ravel()
                cols.append(col)
    return np.array(cols).T


def galerkin_matrix(surface, apply, m_in, m_out=None, basis=None):
    """Orthonormalised Galerkin matrix of a linear pair operator on the Fourier basis.

    ``apply`` maps a rank ``m_in`` :class:`TensorPair` to a rank ``m_out`` pair.  The
    result ``L^{-1} <apply(e_b), e_a> L^{-H}`` (``G = L L^H`` the basis Gram matrix)
    is the operator in an L2-orthonormal basis; it is only square when ranks agree.
    """
    if m_out is None:
        m_out = m_in
    B_in = fourier_pair_basis(surface, m_in) if basis is None else basis
    B_out = fourier_pair_basis(surface, m_out)
    w_in, w_out = _pair_weights(surface, m_in), _pair_weights(surface, m_out)
    cols = np.array([apply(TensorPair.from_vector(B_in[:, b], m_in, surface.shape)).to_vector()
                     for b in range(B_in.shape[1])]).T
    L_in = np.linalg.cholesky(B_in.conj().T @ (w_in[:, None] * B_in))
    L_out = np.linalg.cholesky(B_out.conj().T @ (w_out[:, None] * B_out))
    M = B_out.conj().T @ (w_out[:, None] * cols)
    M = np.linalg.solve(L_out, M)
    return np.linalg.solve(L_in.conj(), M.T).T


def laplacian_spectrum(surface, field, m, with_kernel=False):
    """Singular values (ascending) of the dense ``D_mu^* D_mu`` on rank-(m-1) pairs.

    With ``with_kernel`` the projector onto the normalized kernel element is added,
    which should lift the single vanishing singular value.
    """
    if m < 1:
        raise RankError("needs m >= 1")
    if surface.Nx * surface.Ny > 32 * 32:
        raise MemoryError("dense assembly limited to grids of at most 32 x 32")
    K = kernel_element(surface, m - 1) if with_kernel else None
    A = galerkin_matrix(surface, lambda P: laplacian_mu(surface, field, P, K), m - 1)
    return np.sort(np.linalg.svd(A, compute_uv=False))
