"""
Intergrid transfers for MAC fields and media coarsening.

All transfers are tensor products of four 1D operators, chosen per axis by
whether the component is node-centered (face axis) or cell-centered there:

=========  ===============================  ===============================
           restriction                      prolongation
=========  ===============================  ===============================
node axis  full weighting ``[1 2 1]/4``     linear ``[1/2 1 1/2]``
cell axis  two-point mean ``[1 1]/2``       ``[1 3 3 1]/4`` (transpose)
=========  ===============================  ===============================

which gives ``R_p = [1 1; 1 1]/4``, ``P_p = [1 3 3 1]⊗[1 3 3 1]/16`` and
``R_u2 = [1 2 1]ᵀ⊗[1 1]/8``, ``P_u2 = [1 2 1]ᵀ⊗[1 3 3 1]/8`` in 2D. Rows
truncated at the boundary are either renormalized to preserve constants
(``boundary='renormalize'``) or evaluated with zero values outside the grid
(``boundary='zero'``), which matches the zero exterior of the operator.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .grid import FieldVector, MediaModel, StaggeredGrid

BOUNDARY_MODES = ('zero', 'renormalize')

__all__ = ['BOUNDARY_MODES', 'TransferPair', 'restrict', 'prolong', 'coarsen_media',
           'restriction_matrix', 'prolongation_matrix']


def _move(f, axis):
    return np.moveaxis(f, axis, 0)


def _restrict_cell(f, axis):
    g = _move(f, axis)
    return np.moveaxis(0.5*(g[0::2] + g[1::2]), 0, axis)


def _restrict_node(f, axis, renormalize=True):
    g = _move(f, axis)
    out = 0.5*g[0::2]
    out[1:] += 0.25*g[1::2]
    out[:-1] += 0.25*g[1::2]
    if renormalize:
        out[0] *= 4/3
        out[-1] *= 4/3
    return np.moveaxis(out, 0, axis)


def _prolong_cell(c, axis, renormalize=True):
    g = _move(c, axis)
    N = g.shape[0]
    out = np.empty((2*N,) + g.shape[1:], dtype=g.dtype)
    out[0::2] = 0.75*g
    out[1::2] = 0.75*g
    out[2::2] += 0.25*g[:-1]
    out[1:-1:2] += 0.25*g[1:]
    if renormalize:
        out[0] = g[0]
        out[-1] = g[-1]
    return np.moveaxis(out, 0, axis)


def _prolong_node(c, axis):
    g = _move(c, axis)
    N = g.shape[0] - 1
    out = np.empty((2*N + 1,) + g.shape[1:], dtype=g.dtype)
    out[0::2] = g
    out[1::2] = 0.5*(g[:-1] + g[1:])
    return np.moveaxis(out, 0, axis)


def _component_is_node(grid, comp):
    return [comp == j for j in range(grid.ndim)]


def _check_boundary(boundary):
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")
    return boundary == 'renormalize'


def _check_even(grid):
    if any(n % 2 for n in grid.dims):
        raise ValueError(f"restriction needs even grid dims, got {grid.dims}")


def restrict_array(arr, node_axes, boundary='zero'):
    ren = _check_boundary(boundary)
    for axis, is_node in enumerate(node_axes):
        arr = _restrict_node(arr, axis, ren) if is_node else _restrict_cell(arr, axis)
    return arr


def prolong_array(arr, node_axes, boundary='zero'):
    ren = _check_boundary(boundary)
    for axis, is_node in enumerate(node_axes):
        arr = _prolong_node(arr, axis) if is_node else _prolong_cell(arr, axis, ren)
    return arr


def restrict_flat(fine_grid, x, boundary='zero'):
    _check_even(fine_grid)
    parts = fine_grid.split(x)
    return np.concatenate([restrict_array(a, _component_is_node(fine_grid, c), boundary).ravel()
                           for c, a in enumerate(parts)])


def prolong_flat(coarse_grid, x, boundary='zero'):
    parts = coarse_grid.split(x)
    return np.concatenate([prolong_array(a, _component_is_node(coarse_grid, c), boundary).ravel()
                           for c, a in enumerate(parts)])


def restrict(x_fine, boundary='zero'):
    """Restrict a fine :class:`FieldVector` componentwise to the coarse grid."""
    coarse = x_fine.grid.coarsen()
    return FieldVector(coarse, restrict_flat(x_fine.grid, x_fine.data, boundary))


def prolong(x_coarse, boundary='zero'):
    """Prolongate a coarse :class:`FieldVector` to the grid with twice the cells."""
    g = x_coarse.grid
    fine = StaggeredGrid([2*n for n in g.dims], [v/2 for v in g.h])
    return FieldVector(fine, prolong_flat(g, x_coarse.data, boundary))


@dataclass(frozen=True)
class TransferPair:
    """Restriction/prolongation between ``fine`` and ``fine.coarsen()``."""

    fine: StaggeredGrid
    boundary: str = 'zero'

    def __post_init__(self):
        _check_even(self.fine)
        _check_boundary(self.boundary)

    @property
    def coarse(self):
        return self.fine.coarsen()

    def restrict(self, x):
        return restrict_flat(self.fine, x, self.boundary)

    def prolong(self, x):
        return prolong_flat(self.coarse, x, self.boundary)


def coarsen_media(media, grid=None):
    """Average every media field over the ``2^d`` children of each coarse cell."""
    shape = media.shape
    if any(n % 2 for n in shape):
        raise ValueError(f"cannot coarsen media of odd shape {shape}")
    if grid is not None:
        media.check_grid(grid)

    def mean(f):
        newshape = []
        for n in shape:
            newshape += [n//2, 2]
        return f.reshape(newshape).mean(axis=tuple(range(1, 2*len(shape), 2)))

    return MediaModel(mean(media.lam), mean(media.mu), mean(media.rho), mean(media.gamma))


# Explicit matrices (tests, Galerkin comparisons).

def _r_cell_1d(N):
    return sp.kron(sp.identity(N), sp.csr_matrix([[0.5, 0.5]]), format='csr')


def _r_node_1d(N, renormalize=True):
    rows, cols, vals = [], [], []
    for I in range(N + 1):
        ws = {2*I - 1: 0.25, 2*I: 0.5, 2*I + 1: 0.25}
        ws = {j: w for j, w in ws.items() if 0 <= j <= 2*N}
        s = sum(ws.values()) if renormalize else 1.0
        for j, w in ws.items():
            rows.append(I)
            cols.append(j)
            vals.append(w/s)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N + 1, 2*N + 1))


def _p_cell_1d(N, renormalize=True):
    rows, cols, vals = [], [], []
    for j in range(2*N):
        J = j//2
        far = J - 1 if j % 2 == 0 else J + 1
        ws = {J: 0.75, far: 0.25}
        ws = {i: w for i, w in ws.items() if 0 <= i < N}
        s = sum(ws.values()) if renormalize else 1.0
        for i, w in ws.items():
            rows.append(j)
            cols.append(i)
            vals.append(w/s)
    return sp.csr_matrix((vals, (rows, cols)), shape=(2*N, N))


def _p_node_1d(N):
    rows, cols, vals = [], [], []
    for j in range(2*N + 1):
        if j % 2 == 0:
            rows.append(j)
            cols.append(j//2)
            vals.append(1.0)
        else:
            rows += [j, j]
            cols += [j//2, j//2 + 1]
            vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2*N + 1, N + 1))


def _block(fine_grid, maker_node, maker_cell):
    coarse = fine_grid.coarsen()
    blocks = []
    for comp in range(fine_grid.ndim + 1):
        mats = [maker_node(N) if is_node else maker_cell(N)
                for N, is_node in zip(coarse.dims, _component_is_node(fine_grid, comp))]
        blocks.append(reduce(lambda a, b: sp.kron(a, b, format='csr'), mats))
    return sp.block_diag(blocks, format='csr')


def restriction_matrix(fine_grid, boundary='zero'):
    ren = _check_boundary(boundary)
    return _block(fine_grid, lambda N: _r_node_1d(N, ren), _r_cell_1d)


def prolongation_matrix(fine_grid, boundary='zero'):
    ren = _check_boundary(boundary)
    return _block(fine_grid, _p_node_1d, lambda N: _p_cell_1d(N, ren))
