"""
β-spread discretization of the mixed elastic Helmholtz operator on a MAC grid.

The discrete system for ``(u, p)`` reads::

    [ ∇ᵀ A_e(μ) ∇^β − M^β A_f(ρ)    ∇_h       ] [u]   [q]
    [ (∇·)^β                        1/(λ+μ)   ] [p] = [0]

where ``∇ᵀ∇^β = −Δ^β`` is the compact 9-point (2D) / 27-point (3D)
Laplacian. The β-spread first derivative along ``a`` is the standard 2-point
difference followed by ``βI + (1−β)∏_{j≠a} T_j`` with ``T_j`` the
``[1, 2, 1]/4`` average along axis ``j``; the spread mass is
``βI + (1−β)·(mean of the 2d nearest neighbours)``. Values outside the grid
are zero; near boundaries the mass spreading is renormalized over the
neighbours that exist.

The pressure coupling in the displacement rows is the discrete gradient
``∇_h = −(∇·)_hᵀ``, which makes the Schur complement ``A_uu − ∇_h(λ+μ)(∇·)^β``
the (negated) elastic Helmholtz operator.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np
import scipy.sparse as sp

from .grid import (FieldVector, MediaModel, StaggeredGrid, average_cell_to_edge,
                   average_cell_to_face)

__all__ = ['OperatorSpec', 'Stencil', 'StencilTable', 'MixedOperator', 'stencil_d_std',
           'stencil_d_spread', 'stencil_mass', 'stencil_laplacian', 'stencil_table',
           'apply_mixed_operator', 'apply_shifted_operator', 'assemble_sparse',
           'assemble_schur_sparse', 'schur_eliminate_pressure', 'SizeGuardError']


class SizeGuardError(MemoryError):
    """Explicit assembly requested for a system above the size guard."""


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Everything needed to apply the discrete operator matrix-free."""

    beta: float
    omega: float
    grid: StaggeredGrid
    media: MediaModel
    shift_alpha: float = 0.0
    precision: str = 'double'

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.shift_alpha < 0:
            raise ValueError("shift_alpha must be non-negative")
        if self.precision not in ('double', 'single'):
            raise ValueError("precision must be 'double' or 'single'")
        self.media.check_grid(self.grid)

    @property
    def gamma_eff(self):
        return self.media.gamma + self.shift_alpha

    @property
    def dtype(self):
        return np.complex64 if self.precision == 'single' else np.complex128

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def key(self):
        """Hashable fingerprint; cached data must be rebuilt when it changes."""
        m = self.media
        arrays = b''.join(np.ascontiguousarray(a).tobytes() for a in (m.lam, m.mu, m.rho, m.gamma))
        return (self.beta, self.omega, self.shift_alpha, self.precision,
                self.grid.dims, self.grid.h, hash(arrays))


# ---------------------------------------------------------------------------
# Stencil tables (constant coefficients)
# ---------------------------------------------------------------------------

@dataclass
class Stencil:
    """Sparse stencil: ``offsets`` in units of ``h`` (may be half-integer)."""

    offsets: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.offsets = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        self.coeffs = np.asarray(self.coeffs, dtype=complex)

    @classmethod
    def from_dict(cls, entries, ndim):
        entries = {k: v for k, v in entries.items() if v != 0}
        if not entries:
            return cls(np.zeros((0, ndim)), np.zeros(0))
        offs = sorted(entries)
        return cls(np.array(offs, dtype=float), np.array([entries[o] for o in offs]))

    def as_dict(self, tol=0.0):
        out = {}
        for o, c in zip(self.offsets, self.coeffs):
            key = tuple(float(v) for v in o)
            out[key] = out.get(key, 0) + c
        return {k: v for k, v in out.items() if abs(v) > tol}

    @property
    def ndim(self):
        return self.offsets.shape[1]

    def __add__(self, other):
        d = self.as_dict()
        for k, v in other.as_dict().items():
            d[k] = d.get(k, 0) + v
        return Stencil.from_dict(d, self.ndim)

    def __mul__(self, a):
        return Stencil(self.offsets, a*self.coeffs)

    __rmul__ = __mul__

    def transpose(self):
        return Stencil(-self.offsets, self.coeffs)

    def compose(self, other):
        """Stencil of ``self ∘ other`` (apply ``other`` first)."""
        d = {}
        for o1, c1 in zip(self.offsets, self.coeffs):
            for o2, c2 in zip(other.offsets, other.coeffs):
                key = tuple(float(v) for v in o1 + o2)
                d[key] = d.get(key, 0) + c1*c2
        return Stencil.from_dict(d, self.ndim)

    def total(self):
        return complex(self.coeffs.sum())

    def apply_to(self, func):
        """Evaluate ``Σ c·func(offset)`` for a function of the offset vector."""
        return sum(c*func(o) for o, c in zip(self.offsets, self.coeffs))


def _unit(ndim, axis, value):
    e = [0.0]*ndim
    e[axis] = value
    return tuple(e)


def stencil_d_std(ndim, axis, h=1.0):
    """Standard 2-point first derivative ``[-1 * 1]/h`` between half points."""
    return Stencil.from_dict({_unit(ndim, axis, -0.5): -1/h, _unit(ndim, axis, 0.5): 1/h}, ndim)


def stencil_d_spread(beta, ndim, axis, h=1.0):
    """β-spread first derivative along ``axis``.

    2D: ``β[-1 * 1] + (1-β)/4 [[-1,,1],[-2,*,2],[-1,,1]]``; 3D spreads over
    both other axes with the ``[1,2,1]⊗[1,2,1]/16`` weights.
    """
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    others = [j for j in range(ndim) if j != axis]
    entries = {}
    for shifts in product((-1, 0, 1), repeat=len(others)):
        w = (1 - beta)*np.prod([(2 if s == 0 else 1)/4 for s in shifts])
        if all(s == 0 for s in shifts):
            w += beta
        for sign in (-1, 1):
            o = [0.0]*ndim
            o[axis] = 0.5*sign
            for j, s in zip(others, shifts):
                o[j] = float(s)
            entries[tuple(o)] = entries.get(tuple(o), 0) + sign*w/h
    return Stencil.from_dict(entries, ndim)


def stencil_mass(beta, ndim, omega=1.0, gamma_eff=0.0):
    """Spread mass ``ω²(1-γi)(β[1] + (1-β)/(2d)·neighbours)``."""
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    scale = omega**2*(1 - 1j*gamma_eff)
    entries = {(0.0,)*ndim: beta*scale}
    for axis in range(ndim):
        for s in (-1, 1):
            entries[_unit(ndim, axis, float(s))] = (1 - beta)/(2*ndim)*scale
    return Stencil.from_dict(entries, ndim)


def stencil_laplacian(beta, ndim, h=1.0):
    """Composite ``∇ᵀ∇^β`` (i.e. ``-Δ^β``) for unit coefficient."""
    hh = np.broadcast_to(np.asarray(h, dtype=float), (ndim,))
    parts = [stencil_d_std(ndim, a, hh[a]).transpose().compose(stencil_d_spread(beta, ndim, a, hh[a]))
             for a in range(ndim)]
    return reduce(lambda s, t: s + t, parts)


@dataclass
class StencilTable:
    d_std: list
    d_spread: list
    mass: Stencil
    laplacian_beta: Stencil


def stencil_table(beta, ndim, h=1.0, omega=1.0, gamma_eff=0.0):
    return StencilTable(
        d_std=[stencil_d_std(ndim, a, h) for a in range(ndim)],
        d_spread=[stencil_d_spread(beta, ndim, a, h) for a in range(ndim)],
        mass=stencil_mass(beta, ndim, omega, gamma_eff),
        laplacian_beta=stencil_laplacian(beta, ndim, h),
    )


# ---------------------------------------------------------------------------
# Matrix-free array kernels
# ---------------------------------------------------------------------------

def _sl(ndim, axis, s):
    idx = [slice(None)]*ndim
    idx[axis] = s
    return tuple(idx)


def _diff_nodes(f, axis, h):
    """Node-centered (n+1) -> cell-centered (n) difference along ``axis``."""
    nd = f.ndim
    return (f[_sl(nd, axis, slice(1, None))] - f[_sl(nd, axis, slice(None, -1))])*(1/h)


def _diff_cells(f, axis, h):
    """Cell-centered (n) -> node-centered (n+1) difference, zero ghosts."""
    nd = f.ndim
    shape = list(f.shape)
    shape[axis] += 1
    out = np.empty(shape, dtype=f.dtype)
    inv = 1/h
    out[_sl(nd, axis, slice(1, -1))] = (f[_sl(nd, axis, slice(1, None))]
                                        - f[_sl(nd, axis, slice(None, -1))])*inv
    out[_sl(nd, axis, 0)] = f[_sl(nd, axis, 0)]*inv
    out[_sl(nd, axis, -1)] = -f[_sl(nd, axis, -1)]*inv
    return out


def _smooth121(f, axis):
    """``[1, 2, 1]/4`` average along ``axis`` with zero ghosts."""
    nd = f.ndim
    out = 0.5*f
    out[_sl(nd, axis, slice(1, None))] += 0.25*f[_sl(nd, axis, slice(None, -1))]
    out[_sl(nd, axis, slice(None, -1))] += 0.25*f[_sl(nd, axis, slice(1, None))]
    return out


def _spread(f, beta, axis):
    """Apply ``βI + (1-β)∏_{j≠axis} T_j`` to a derivative array."""
    if beta == 1:
        return f
    g = f
    for j in range(f.ndim):
        if j != axis:
            g = _smooth121(g, j)
    return beta*f + (1 - beta)*g


def _neighbour_sum(f):
    nd = f.ndim
    out = np.zeros_like(f)
    for axis in range(nd):
        out[_sl(nd, axis, slice(1, None))] += f[_sl(nd, axis, slice(None, -1))]
        out[_sl(nd, axis, slice(None, -1))] += f[_sl(nd, axis, slice(1, None))]
    return out


def _neighbour_count(shape):
    cnt = np.zeros(shape)
    nd = len(shape)
    for axis, n in enumerate(shape):
        c = np.full(n, 2.0)
        c[0] -= 1
        c[-1] -= 1
        cnt = cnt + c.reshape([n if j == axis else 1 for j in range(nd)])
    return cnt


class MixedOperator:
    """Matrix-free application of the (shifted) discrete mixed operator.

    Coefficients are averaged once at construction; :meth:`matvec` works on
    flat vectors in the layout of :class:`~elastmg.grid.FieldVector`.
    """

    def __init__(self, spec):
        self.spec = spec
        grid = spec.grid
        media = spec.media
        nd = grid.ndim
        dtype = spec.dtype
        rdtype = np.float32 if dtype == np.complex64 else np.float64
        self.grid = grid
        self.beta = spec.beta
        self.dtype = dtype
        self.h = grid.h
        # μ where ∂_a u_k lives: cell centers for a == k, edges (k, a) otherwise
        self.mu_flux = [[(media.mu if a == k else average_cell_to_edge(media.mu, (k, a))).astype(rdtype)
                         for a in range(nd)] for k in range(nd)]
        gamma_eff = spec.gamma_eff
        self.mass = []
        self.inv_count = []
        for k in range(nd):
            rho_f = average_cell_to_face(media.rho, k)
            gam_f = average_cell_to_face(gamma_eff, k)
            self.mass.append((spec.omega**2*rho_f*(1 - 1j*gam_f)).astype(dtype))
            self.inv_count.append((1/_neighbour_count(grid.u_shape(k))).astype(rdtype))
        self.lam_mu = (media.lam + media.mu).astype(rdtype)
        self.inv_lam_mu = (1/(media.lam + media.mu)).astype(rdtype)

    @property
    def shape(self):
        return (self.grid.ndof, self.grid.ndof)

    # -- blocks -------------------------------------------------------------
    def mass_term(self, k, uk):
        v = self.mass[k]*uk
        if self.beta == 1:
            return v
        return self.beta*v + (1 - self.beta)*self.inv_count[k]*_neighbour_sum(v)

    def laplacian_term(self, k, uk):
        """``∇ᵀ A_e(μ) ∇^β`` applied to component ``k``."""
        h = self.h
        out = None
        for a in range(uk.ndim):
            if a == k:
                flux = self.mu_flux[k][a]*_spread(_diff_nodes(uk, a, h[a]), self.beta, a)
                term = -_diff_cells(flux, a, h[a])
            else:
                flux = self.mu_flux[k][a]*_spread(_diff_cells(uk, a, h[a]), self.beta, a)
                term = -_diff_nodes(flux, a, h[a])
            out = term if out is None else out + term
        return out

    def uu_term(self, k, uk):
        return self.laplacian_term(k, uk) - self.mass_term(k, uk)

    def grad_term(self, k, p):
        return _diff_cells(p, k, self.h[k])

    def div_term(self, u):
        out = None
        for k, uk in enumerate(u):
            term = _spread(_diff_nodes(uk, k, self.h[k]), self.beta, k)
            out = term if out is None else out + term
        return out

    # -- full operator ------------------------------------------------------
    def matvec(self, x):
        x = np.asarray(x, dtype=self.dtype)
        parts = self.grid.split(x)
        u, p = parts[:-1], parts[-1]
        out = [self.uu_term(k, uk) + self.grad_term(k, p) for k, uk in enumerate(u)]
        out.append(self.div_term(u) + self.inv_lam_mu*p)
        return np.concatenate([o.ravel() for o in out])

    __call__ = matvec

    def apply(self, x):
        if x.grid != self.grid:
            raise ValueError(f"vector grid {x.grid.dims} does not match operator grid {self.grid.dims}")
        return FieldVector(self.grid, self.matvec(x.data).astype(complex))

    def residual(self, b, x):
        return b - self.matvec(x)

    # -- displacement-only Schur complement -------------------------------
    def schur_matvec(self, u_flat):
        g = self.grid
        off = g.offsets
        u = [u_flat[off[k]:off[k+1]].reshape(g.u_shape(k)) for k in range(g.ndim)]
        w = self.lam_mu*self.div_term(u)
        out = [self.uu_term(k, uk) - self.grad_term(k, w) for k, uk in enumerate(u)]
        return np.concatenate([o.ravel() for o in out])


def apply_mixed_operator(spec, x):
    """Apply the discrete operator of ``spec`` (with its shift) to ``x``."""
    return MixedOperator(spec).apply(x)


def apply_shifted_operator(spec, x, alpha=None):
    """Apply the operator with attenuation ``γ + α``; ``alpha`` overrides the spec's shift."""
    if alpha is not None:
        spec = spec.replace(shift_alpha=alpha)
    return MixedOperator(spec).apply(x)


def schur_eliminate_pressure(spec):
    """Displacement-only operator ``u ↦ A_uu u − ∇_h diag(λ+μ) (∇·)^β u``."""
    op = MixedOperator(spec)
    return op.schur_matvec


# ---------------------------------------------------------------------------
# Explicit sparse assembly (verification oracle, coarsest-grid direct solves)
# ---------------------------------------------------------------------------

def _kron(mats):
    return reduce(lambda a, b: sp.kron(a, b, format='csr'), mats)


def _d_nodes_1d(n, h):
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1))/h


def _d_cells_1d(n, h):
    return -_d_nodes_1d(n, h).T


def _t121_1d(m):
    return sp.diags([np.full(m - 1, 0.25), np.full(m, 0.5), np.full(m - 1, 0.25)], [-1, 0, 1])


def _avg_cells_1d(n):
    """Cells -> nodes with replication at both ends, shape (n+1, n)."""
    rows = [0, n] + [i for i in range(1, n) for _ in (0, 1)]
    cols = [0, n - 1] + [j for i in range(1, n) for j in (i - 1, i)]
    vals = [1.0, 1.0] + [0.5]*(2*(n - 1))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _adjacency_1d(m):
    return sp.diags([np.ones(m - 1), np.ones(m - 1)], [-1, 1])


def _assemble_blocks(spec):
    grid, media = spec.grid, spec.media
    nd, dims, h, beta = grid.ndim, grid.dims, grid.h, spec.beta
    eye = lambda m: sp.identity(m, format='csr')
    mu, rho, lam = media.mu.ravel(), media.rho.ravel(), media.lam.ravel()
    gam = spec.gamma_eff.ravel()

    def sizes(loc):
        return [n + 1 if l else n for n, l in zip(dims, loc)]

    def average(loc):
        return _kron([_avg_cells_1d(n) if l else eye(n) for n, l in zip(dims, loc)])

    def spread(loc, axis):
        if beta == 1:
            return eye(int(np.prod(sizes(loc))))
        m = sizes(loc)
        T = _kron([eye(mj) if j == axis else _t121_1d(mj) for j, mj in enumerate(m)])
        return beta*eye(T.shape[0]) + (1 - beta)*T

    uu, grad, div = [], [], []
    for k in range(nd):
        loc_u = [j == k for j in range(nd)]
        m_u = sizes(loc_u)
        lap = None
        for a in range(nd):
            loc_d = list(loc_u)
            loc_d[a] = not loc_d[a]
            D = _kron([(_d_nodes_1d(n, h[j]) if loc_u[j] else _d_cells_1d(n, h[j])) if j == a else eye(mj)
                       for j, (n, mj) in enumerate(zip(dims, m_u))])
            mu_d = average(loc_d) @ mu
            term = D.T @ sp.diags(mu_d) @ spread(loc_d, a) @ D
            lap = term if lap is None else lap + term
        rho_f = average(loc_u) @ rho
        gam_f = average(loc_u) @ gam
        c = spec.omega**2*rho_f*(1 - 1j*gam_f)
        adj = None
        for j, mj in enumerate(m_u):
            t = _kron([_adjacency_1d(mi) if i == j else eye(mi) for i, mi in enumerate(m_u)])
            adj = t if adj is None else adj + t
        cnt = np.asarray(adj.sum(axis=1)).ravel()
        M = beta*eye(adj.shape[0]) + (1 - beta)*sp.diags(1/cnt) @ adj
        uu.append((lap - M @ sp.diags(c)).tocsr())
        G = _kron([_d_cells_1d(n, h[j]) if j == k else eye(n) for j, n in enumerate(dims)])
        grad.append(G.tocsr())
        Dk = _kron([_d_nodes_1d(n, h[j]) if j == k else eye(n) for j, n in enumerate(dims)])
        div.append((spread([False]*nd, k) @ Dk).tocsr())
    pp = sp.diags(1/(lam + media.mu.ravel())).tocsr()
    return uu, grad, div, pp


def _guard(n, max_dofs):
    if max_dofs is not None and n > max_dofs:
        raise SizeGuardError(f"explicit assembly of {n} DOFs exceeds guard of {max_dofs}")


def assemble_sparse(spec, max_dofs=10**6):
    """Assemble the operator of ``spec`` as a CSR matrix via Kronecker products.

    Independent of :class:`MixedOperator`; used as a test oracle and for
    direct coarsest-grid solves.
    """
    _guard(spec.grid.ndof, max_dofs)
    uu, grad, div, pp = _assemble_blocks(spec)
    nd = spec.grid.ndim
    blocks = [[None]*(nd + 1) for _ in range(nd + 1)]
    for k in range(nd):
        blocks[k][k] = uu[k]
        blocks[k][nd] = grad[k]
        blocks[nd][k] = div[k]
    blocks[nd][nd] = pp
    return sp.bmat(blocks, format='csr').astype(spec.dtype)


def assemble_schur_sparse(spec, max_dofs=10**6):
    """Displacement Schur complement ``A_uu − B diag(λ+μ) C`` as CSR."""
    _guard(spec.grid.n_u, max_dofs)
    uu, grad, div, _ = _assemble_blocks(spec)
    B = sp.vstack(grad)
    C = sp.hstack(div)
    lm = sp.diags((spec.media.lam + spec.media.mu).ravel())
    S = sp.block_diag(uu, format='csr') - B @ lm @ C
    return S.tocsr().astype(spec.dtype)
