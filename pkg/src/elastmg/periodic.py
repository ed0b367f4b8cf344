"""
Constant-coefficient operators on a doubly periodic 2D MAC grid.

Every component has ``n x n`` DOFs; positions in units of ``h`` are
``(i, j + 1/2)`` for ``u_1``, ``(i + 1/2, j)`` for ``u_2`` and
``(i + 1/2, j + 1/2)`` for ``p``. Matrices are assembled from the same
stencils the Fourier analysis uses, so plane waves with ``θ = 2πk/n`` are exact
probes of the symbols. A periodic two-grid cycle built from these pieces
measures the convergence the analysis predicts, free of boundary effects.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .lfa import homogeneous_stencils, transfer_stencils
from .smoothers import VankaConfig, factor_local_systems

__all__ = ['SHIFTS', 'dof_positions', 'plane_wave', 'periodic_operator',
           'periodic_transfers', 'periodic_cell_dofs', 'PeriodicTwoGrid']

# component offsets within a cell, in units of h
SHIFTS = np.array([[0.0, 0.5], [0.5, 0.0], [0.5, 0.5]])


def dof_positions(n, comp, scale=1.0):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    return scale*np.stack([i + SHIFTS[comp][0], j + SHIFTS[comp][1]], axis=-1).reshape(-1, 2)


def plane_wave(n, theta, comp):
    """Flat vector with ``exp(iθ·x)`` in component ``comp`` and zeros elsewhere."""
    x = np.zeros(3*n*n, dtype=complex)
    x[comp*n*n:(comp + 1)*n*n] = np.exp(1j*dof_positions(n, comp) @ np.asarray(theta, dtype=float))
    return x


def _index(n, ij):
    ij = np.mod(np.rint(ij).astype(int), n)
    return ij[..., 0]*n + ij[..., 1]


def _circulant_block(n_row, n_col, pos_row, col_shift, col_scale, stencil, scale=1.0):
    """Sparse block with ``stencil`` entries, columns located by position."""
    rows, cols, vals = [], [], []
    nr = pos_row.shape[0]
    for o, c in zip(stencil.offsets, stencil.coeffs):
        target = (pos_row + o*scale)/col_scale - col_shift
        if np.any(np.abs(target - np.rint(target)) > 1e-9):
            raise ValueError("stencil offset does not land on a DOF")
        rows.append(np.arange(nr))
        cols.append(_index(n_col, target))
        vals.append(np.full(nr, c))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nr, n_col*n_col))


def periodic_operator(params, n, h=None, omega=None):
    """CSR matrix of the homogeneous operator on an ``n x n`` periodic grid."""
    st = homogeneous_stencils(params, h, omega)
    blocks = [[None]*3 for _ in range(3)]
    for (r, c), s in st.items():
        blocks[r][c] = _circulant_block(n, n, dof_positions(n, r), SHIFTS[c], 1.0, s)
    return sp.bmat(blocks, format='csr')


def periodic_transfers(n):
    """Restriction (coarse x fine) and prolongation (fine x coarse) for even ``n``."""
    if n % 2:
        raise ValueError("periodic two-grid needs even n")
    N = n//2
    Rb, Pb = [], []
    for c in range(3):
        rst, pst = transfer_stencils(c)
        coarse_pos = dof_positions(N, c, scale=2.0)
        R = _circulant_block(N, n, coarse_pos, SHIFTS[c], 1.0, rst)
        # prolongation weights as a function of fine minus coarse position
        P = _circulant_block(N, n, coarse_pos, SHIFTS[c], 1.0, pst).T.tocsr()
        Rb.append(R)
        Pb.append(P)
    return sp.block_diag(Rb, format='csr'), sp.block_diag(Pb, format='csr')


def periodic_cell_dofs(n):
    """Cell DOFs ``[u1 lo, u1 hi, u2 lo, u2 hi, p]`` with periodic wrap."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    i, j = i.ravel(), j.ravel()
    nn = n*n
    return np.stack([i*n + j, ((i + 1) % n)*n + j,
                     nn + i*n + j, nn + i*n + (j + 1) % n,
                     2*nn + i*n + j], axis=1)


class PeriodicTwoGrid:
    """Two-grid cycle (lexicographic Vanka, exact coarse solve) on a periodic grid."""

    def __init__(self, params, n, config=None, nu1=1, nu2=1):
        self.params = params
        self.n = n
        self.config = config or VankaConfig('economic', 'lexicographic', 0.65)
        self.nu1, self.nu2 = nu1, nu2
        A = periodic_operator(params, n)
        A.sort_indices()
        self.A = A
        self.R, self.P = periodic_transfers(n)
        Ac = periodic_operator(params, n//2, h=2*params.h)
        self.coarse_lu = splu(Ac.tocsc())
        self.dofs = periodic_cell_dofs(n)
        Ad = A.tocsr()
        K = np.stack([Ad[d][:, d].toarray() for d in self.dofs[:1]])
        K = np.broadcast_to(K, (n*n,) + K.shape[1:]).copy()
        self.cells = factor_local_systems(K, self.config.variant, self.dofs, (n, n))
        self._blocks = np.ascontiguousarray(self.cells.ainv_blocks())

    def sweep(self, x, b):
        A, c = self.A, self.cells
        _kernels.vanka_lex_sweep(A.indptr, A.indices, A.data, self.dofs, self._blocks, c.ainvb,
                                 c.c, c.sinv, x, b, complex(self.config.damping), 2)
        return x

    def cycle(self, x, b):
        for _ in range(self.nu1):
            self.sweep(x, b)
        rc = self.R @ (b - self.A @ x)
        x += self.P @ self.coarse_lu.solve(rc)
        for _ in range(self.nu2):
            self.sweep(x, b)
        return x

    def convergence_factor(self, warmup=5, tol=1e-9, max_cycles=200, rng=0):
        """Residual-based factor as in the bounded-grid measurement."""
        rng = np.random.default_rng(rng)
        nd = self.A.shape[0]
        x = rng.standard_normal(nd) + 1j*rng.standard_normal(nd)
        b = np.zeros(nd, dtype=complex)
        for _ in range(warmup):
            self.cycle(x, b)
        r0 = np.linalg.norm(self.A @ x)
        rel = 1.0
        k = 0
        for k in range(1, max_cycles + 1):
            self.cycle(x, b)
            rel = np.linalg.norm(self.A @ x)/r0
            if rel < tol or not np.isfinite(rel):
                break
        return rel**(1/k)
