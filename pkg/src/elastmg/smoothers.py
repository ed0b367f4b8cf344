"""
Cell-wise Vanka relaxation and hybrid Kaczmarz relaxation.

A Vanka step relaxes all DOFs of one cell at once: the ``2d`` face
displacements and the cell pressure. The local matrix has the form
``[[A, B], [C, d]]`` where ``A`` is block diagonal (one 2x2 block per
displacement component, since the displacement block of the operator does not
couple components). The *full* variant inverts this system exactly, the
*economic* variant replaces ``A`` by its diagonal. Local systems are obtained
by probing the matrix-free operator.

Red-black ordering colours cells by the parity of their index sum. Cells of
one colour never share a DOF, so a colour is relaxed simultaneously from one
residual evaluation. Lexicographic ordering is a sequential (numba) sweep over
cells in C order and needs the assembled operator rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import _kernels
from .discretization import MixedOperator, assemble_sparse
from .grid import FieldVector

__all__ = ['VankaConfig', 'CellSystems', 'SingularCellError', 'build_cell_systems',
           'factor_local_systems', 'VankaSmoother', 'vanka_sweep', 'cell_dofs', 'KaczmarzRelaxation',
           'kaczmarz_sweep']

VARIANTS = ('full', 'economic')
ORDERINGS = ('lexicographic', 'red-black')


class SingularCellError(np.linalg.LinAlgError):
    def __init__(self, cell, msg="singular local Vanka system"):
        self.cell = cell
        super().__init__(f"{msg} at cell {cell}")


@dataclass(frozen=True)
class VankaConfig:
    variant: str = 'full'
    ordering: str = 'red-black'
    damping: float = 0.55

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")


def cell_dofs(grid):
    """Flat indices of the ``2d+1`` DOFs of every cell (C order).

    Column order is ``[u_0 low, u_0 high, u_1 low, u_1 high, ..., p]``.
    """
    nd = grid.ndim
    idx = np.indices(grid.dims).reshape(nd, -1)
    off = grid.offsets
    cols = []
    for k in range(nd):
        shape = grid.u_shape(k)
        for hi in (0, 1):
            ii = idx.copy()
            ii[k] += hi
            cols.append(off[k] + np.ravel_multi_index(tuple(ii), shape))
    cols.append(off[nd] + np.arange(grid.ncells))
    return np.stack(cols, axis=1)


@dataclass
class CellSystems:
    """Factorized local systems of every cell, stored in compact form.

    ``ainv`` holds ``A⁻¹`` (2x2 blocks, or diagonal entries for the economic
    variant), ``ainvb = A⁻¹B``, ``c = C`` and ``sinv = 1/(d − C A⁻¹ B)``.
    """

    variant: str
    ndim: int
    dofs: np.ndarray
    ainv: np.ndarray
    ainvb: np.ndarray
    c: np.ndarray
    sinv: np.ndarray
    key: tuple
    local: np.ndarray = None

    @property
    def floats_per_cell(self):
        return int(np.prod(self.ainv.shape[1:]) + self.ainvb.shape[1] + self.c.shape[1] + 1)

    def ainv_blocks(self):
        if self.variant == 'full':
            return self.ainv
        n, nd = self.ainv.shape[0], self.ndim
        blocks = np.zeros((n, nd, 2, 2), dtype=self.ainv.dtype)
        d = self.ainv.reshape(n, nd, 2)
        blocks[:, :, 0, 0] = d[:, :, 0]
        blocks[:, :, 1, 1] = d[:, :, 1]
        return blocks

    def solve(self, r):
        """Solve all (or the selected rows of) local systems for ``r`` of shape (n, 2d+1)."""
        return self._solve(r, slice(None))

    def _solve(self, r, sel):
        nd = self.ndim
        nu = 2*nd
        ru = r[:, :nu]
        if self.variant == 'full':
            z = np.einsum('nkab,nkb->nka', self.ainv[sel], ru.reshape(-1, nd, 2)).reshape(-1, nu)
        else:
            z = self.ainv[sel]*ru
        yp = (r[:, nu] - np.einsum('na,na->n', self.c[sel], z))*self.sinv[sel]
        y = np.empty_like(r)
        y[:, :nu] = z - self.ainvb[sel]*yp[:, None]
        y[:, nu] = yp
        return y


def _probe_local_matrices(op, dofs):
    grid = op.grid
    nd = grid.ndim
    k = dofs.shape[1]
    idx = np.indices(grid.dims).reshape(nd, -1)
    K = np.zeros((grid.ncells, k, k), dtype=op.dtype)
    x = np.zeros(grid.ndof, dtype=op.dtype)
    # cells three apart never see each other's DOFs through the stencil
    for cls in product(range(3), repeat=nd):
        sel = np.flatnonzero(np.all(idx % 3 == np.array(cls)[:, None], axis=0))
        if sel.size == 0:
            continue
        for bcol in range(k):
            x[:] = 0
            x[dofs[sel, bcol]] = 1
            y = op.matvec(x)
            K[sel, :, bcol] = y[dofs[sel]]
    return K


def build_cell_systems(op, variant='full', keep_local=False):
    """Extract and factor the local Vanka systems of ``op`` (a spec or operator)."""
    if not isinstance(op, MixedOperator):
        op = MixedOperator(op)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    dofs = cell_dofs(op.grid)
    K = _probe_local_matrices(op, dofs)
    return factor_local_systems(K, variant, dofs, op.grid.dims, op.spec.key(), keep_local)


def factor_local_systems(K, variant, dofs, dims, key=None, keep_local=False):
    """Compact factorization of local matrices ``K`` of shape (ncells, 2d+1, 2d+1)."""
    nd = len(dims)
    nu = 2*nd
    n = K.shape[0]
    B = K[:, :nu, nu]
    C = K[:, nu, :nu]
    d = K[:, nu, nu]
    if variant == 'full':
        blocks = np.stack([K[:, 2*j:2*j+2, 2*j:2*j+2] for j in range(nd)], axis=1)
        det = blocks[:, :, 0, 0]*blocks[:, :, 1, 1] - blocks[:, :, 0, 1]*blocks[:, :, 1, 0]
        bad = np.flatnonzero(~np.all(np.isfinite(det) & (det != 0), axis=1))
        if bad.size:
            raise SingularCellError(np.unravel_index(bad[0], dims))
        ainv = np.empty_like(blocks)
        ainv[:, :, 0, 0] = blocks[:, :, 1, 1]/det
        ainv[:, :, 1, 1] = blocks[:, :, 0, 0]/det
        ainv[:, :, 0, 1] = -blocks[:, :, 0, 1]/det
        ainv[:, :, 1, 0] = -blocks[:, :, 1, 0]/det
        ainvb = np.einsum('nkab,nkb->nka', ainv, B.reshape(n, nd, 2)).reshape(n, nu)
    else:
        diag = np.einsum('naa->na', K[:, :nu, :nu])
        bad = np.flatnonzero(~np.all(np.isfinite(diag) & (diag != 0), axis=1))
        if bad.size:
            raise SingularCellError(np.unravel_index(bad[0], dims))
        ainv = 1/diag
        ainvb = ainv*B
    s = d - np.einsum('na,na->n', C, ainvb)
    bad = np.flatnonzero(~(np.isfinite(s) & (s != 0)))
    if bad.size:
        raise SingularCellError(np.unravel_index(bad[0], dims))
    return CellSystems(variant, nd, dofs, ainv, ainvb, np.ascontiguousarray(C), 1/s,
                       key, K if keep_local else None)


class VankaSmoother:
    """Vanka relaxation bound to one operator; works in place on flat vectors."""

    def __init__(self, op, config, cells=None):
        self.op = op
        self.config = config
        self.cells = cells if cells is not None else build_cell_systems(op, config.variant)
        if self.cells.variant != config.variant:
            raise ValueError("cell systems were built for a different Vanka variant")
        grid = op.grid
        if config.ordering == 'red-black':
            parity = np.indices(grid.dims).sum(axis=0).ravel() % 2
            self._colors = [np.flatnonzero(parity == c) for c in (0, 1)]
        else:
            self._csr = assemble_sparse(op.spec, max_dofs=None).tocsr()
            self._blocks = np.ascontiguousarray(self.cells.ainv_blocks())

    def is_stale(self, spec):
        return spec.key() != self.cells.key

    def with_damping(self, damping):
        """Same cell systems, different damping (no rebuild)."""
        cfg = VankaConfig(self.config.variant, self.config.ordering, damping)
        return VankaSmoother(self.op, cfg, self.cells)

    def sweep(self, x, b):
        w = self.config.damping
        cells = self.cells
        if self.config.ordering == 'red-black':
            for sel in self._colors:
                r = b - self.op.matvec(x)
                idx = cells.dofs[sel]
                x[idx] += w*cells._solve(r[idx], sel)
        else:
            A = self._csr
            _kernels.vanka_lex_sweep(A.indptr, A.indices, A.data, cells.dofs, self._blocks,
                                     cells.ainvb, cells.c, cells.sinv, x, b.astype(x.dtype),
                                     x.dtype.type(w), cells.ndim)
        return x


def vanka_sweep(spec, config, x, b, cells=None):
    """One Vanka sweep for ``A x = b``; returns a new :class:`FieldVector`."""
    op = MixedOperator(spec)
    if cells is not None and cells.key != spec.key():
        raise ValueError("cell systems are stale for this operator spec; rebuild them")
    sm = VankaSmoother(op, config, cells)
    xs = x.data.astype(op.dtype).copy()
    sm.sweep(xs, b.data.astype(op.dtype))
    return FieldVector(x.grid, xs.astype(complex))


class KaczmarzRelaxation:
    """Damped Kaczmarz sweeps over ``subdomains`` contiguous row slabs.

    Each slab sweeps its rows sequentially from the common iterate; the slab
    updates are merged by averaging every unknown over the slabs whose rows
    touch it (component averaging), so the result does not depend on the order
    in which slabs are processed.
    """

    def __init__(self, A, damping=0.8, subdomains=1):
        A = A.tocsr()
        A.sort_indices()
        self.A = A
        self.damping = float(damping)
        n = A.shape[0]
        self.subdomains = max(1, min(int(subdomains), n))
        self.rownorm2 = np.asarray(abs(A).power(2).sum(axis=1)).ravel()
        if np.any(self.rownorm2 == 0):
            raise ZeroDivisionError(f"zero row norm in row {int(np.flatnonzero(self.rownorm2 == 0)[0])}")
        self.bounds = np.linspace(0, n, self.subdomains + 1).astype(int)
        if self.subdomains > 1:
            touch = np.zeros(A.shape[1])
            for s in range(self.subdomains):
                cols = np.unique(A.indices[A.indptr[self.bounds[s]]:A.indptr[self.bounds[s+1]]])
                touch[cols] += 1
            self.inv_touch = np.where(touch > 0, 1/np.maximum(touch, 1), 0.0)

    def sweep(self, x, b):
        A = self.A
        b = np.asarray(b, dtype=A.dtype)
        if self.subdomains == 1:
            _kernels.kaczmarz_slab_sweep(A.indptr, A.indices, A.data, self.rownorm2, x, b,
                                         self.damping, 0, A.shape[0])
            return x
        delta = np.zeros_like(x)
        for s in range(self.subdomains):
            xs = x.copy()
            _kernels.kaczmarz_slab_sweep(A.indptr, A.indices, A.data, self.rownorm2, xs, b,
                                         self.damping, self.bounds[s], self.bounds[s+1])
            delta += xs - x
        x += self.inv_touch*delta
        return x

    def __call__(self, b, sweeps=1):
        """``sweeps`` relaxations from a zero guess: the preconditioner action."""
        x = np.zeros(self.A.shape[1], dtype=np.result_type(self.A.dtype, b.dtype))
        for _ in range(sweeps):
            self.sweep(x, b)
        return x


def kaczmarz_sweep(A, x, b, damping=0.8, subdomains=1):
    """One forward hybrid Kaczmarz sweep on the rows of ``A``; returns ``x'``."""
    xs = np.array(x, dtype=np.result_type(A.dtype, np.asarray(x).dtype, complex))
    return KaczmarzRelaxation(A, damping, subdomains).sweep(xs, b)
