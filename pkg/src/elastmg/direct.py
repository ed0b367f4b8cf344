"""
Sparse direct solves of the mixed system.

The pressure is eliminated first (its block is diagonal), and the displacement
Schur complement is factorized by SuperLU after a geometric nested-dissection
ordering of the unknowns. Elimination also avoids the badly scaled pressure
pivots, so the factorization runs without row pivoting.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.sparse.linalg import splu

from .discretization import MixedOperator, assemble_schur_sparse
from .krylov import fgmres

__all__ = ['dof_coordinates', 'nested_dissection', 'SchurDirectSolver']

log = logging.getLogger(__name__)


def dof_coordinates(grid, components=None):
    """Positions (in cell units) of the DOFs of the given components, stacked."""
    comps = range(grid.ndim + 1) if components is None else components
    pts = []
    for c in comps:
        shape = grid.shapes[c]
        idx = np.indices(shape).reshape(grid.ndim, -1).astype(float)
        for j in range(grid.ndim):
            if j != c:
                idx[j] += 0.5
        pts.append(idx.T)
    return np.concatenate(pts)


def nested_dissection(A, coords, leaf=64):
    """Fill-reducing order from recursive coordinate bisection.

    Each set is split at the median of its longest coordinate extent; the
    vertices of the lower half that couple to the upper half form the
    separator, which is ordered after both halves.
    """
    G = (abs(A) + abs(A).T).tocsr()
    n = G.shape[0]
    upper = np.zeros(n, dtype=bool)

    def split(ids):
        if len(ids) <= leaf:
            return [ids]
        c = coords[ids]
        ax = int(np.argmax(np.ptp(c, axis=0)))
        low = c[:, ax] < np.median(c[:, ax])
        if low.all() or not low.any():
            return [ids]
        lo, hi = ids[low], ids[~low]
        upper[hi] = True
        sub = G[lo]
        touches = np.add.reduceat(upper[sub.indices].astype(int), sub.indptr[:-1]) > 0
        touches &= np.diff(sub.indptr) > 0
        upper[hi] = False
        return split(lo[~touches]) + split(hi) + [lo[touches]]

    return np.concatenate(split(np.arange(n)))


class SchurDirectSolver:
    """Solver for ``spec``'s operator via the displacement Schur complement.

    Parameters
    ----------
    spec : OperatorSpec
    precision : {'double', 'single'}
        ``'single'`` stores the factors in complex64, halving their memory,
        and recovers double-precision accuracy by FGMRES on the matrix-free
        Schur complement preconditioned with the single-precision factors.
    rel_tol : float
        Target relative residual of the refinement (single precision only).
    """

    def __init__(self, spec, precision='double', rel_tol=1e-12):
        if precision not in ('double', 'single'):
            raise ValueError(f"unknown precision {precision!r}")
        self.spec = spec
        self.precision = precision
        self.rel_tol = rel_tol
        grid = spec.grid
        self.grid = grid
        self.op = MixedOperator(spec.replace(precision='double'))
        self._dtype = np.complex128 if precision == 'double' else np.complex64
        S = assemble_schur_sparse(spec, max_dofs=None).astype(self._dtype).tocsr()
        self.perm = nested_dissection(S, dof_coordinates(grid, range(grid.ndim)))
        S = S[self.perm]
        S = S[:, self.perm].tocsc()
        self.lu = splu(S, permc_spec='NATURAL', diag_pivot_thresh=0.0,
                       options={'SymmetricMode': True})
        del S
        self.lam_mu = (spec.media.lam + spec.media.mu).ravel()
        self.refinement_iterations = 0

    def _factor_solve(self, r):
        x = np.empty(r.shape, dtype=np.complex128)
        x[self.perm] = self.lu.solve(r[self.perm].astype(self._dtype))
        return x

    def solve_schur(self, rhs):
        """Displacement ``u`` with ``S u = rhs``."""
        rhs = np.asarray(rhs, dtype=np.complex128)
        if self.precision == 'double':
            return self._factor_solve(rhs)
        res = fgmres(self.op.schur_matvec, self._factor_solve, rhs, restart=20,
                     rel_tol=self.rel_tol, max_iters=60)
        self.refinement_iterations = res.iterations
        if not res.converged:
            log.warning("single-precision refinement reached %.2e only", res.rel_residual)
        return res.x

    def solve(self, b):
        g = self.grid
        op = self.op
        b = np.asarray(b, dtype=np.complex128)
        n_u = g.n_u
        f, q = b[:n_u], b[n_u:]
        lq = (self.lam_mu*q).reshape(g.p_shape)
        rhs = f - np.concatenate([op.grad_term(k, lq).ravel() for k in range(g.ndim)])
        u = self.solve_schur(rhs)
        off = g.offsets
        parts = [u[off[k]:off[k+1]].reshape(g.u_shape(k)) for k in range(g.ndim)]
        p = self.lam_mu*(q - op.div_term(parts).ravel())
        return np.concatenate([u, p])

    __call__ = solve
