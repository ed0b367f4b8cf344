"""Numba kernels for the sequential parts of the smoothers."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def _local_solve(ainv, ainvb, c, sinv, r, y, nd):
    """Structured solve of one cell system ``[[A, B], [C, d]] y = r``.

    ``A`` is block diagonal with one 2x2 block per displacement component.
    """
    nu = 2*nd
    z = np.empty(nu, dtype=r.dtype)
    for k in range(nd):
        r0 = r[2*k]
        r1 = r[2*k + 1]
        z[2*k] = ainv[k, 0, 0]*r0 + ainv[k, 0, 1]*r1
        z[2*k + 1] = ainv[k, 1, 0]*r0 + ainv[k, 1, 1]*r1
    cz = 0j
    for a in range(nu):
        cz += c[a]*z[a]
    yp = (r[nu] - cz)*sinv
    for a in range(nu):
        y[a] = z[a] - ainvb[a]*yp
    y[nu] = yp


@nb.njit(cache=True)
def vanka_lex_sweep(indptr, indices, data, dofs, ainv, ainvb, c, sinv, x, b, w, nd):
    """One lexicographic multiplicative Vanka sweep, updating ``x`` in place."""
    ncell, k = dofs.shape
    r = np.empty(k, dtype=x.dtype)
    y = np.empty(k, dtype=x.dtype)
    for cell in range(ncell):
        for a in range(k):
            row = dofs[cell, a]
            s = b[row]
            for jj in range(indptr[row], indptr[row + 1]):
                s -= data[jj]*x[indices[jj]]
            r[a] = s
        _local_solve(ainv[cell], ainvb[cell], c[cell], sinv[cell], r, y, nd)
        for a in range(k):
            x[dofs[cell, a]] += w*y[a]


@nb.njit(cache=True)
def kaczmarz_slab_sweep(indptr, indices, data, rownorm2, x, b, damping, r0, r1):
    """Sequential damped Kaczmarz projections over rows ``r0 .. r1-1`` (in place)."""
    for row in range(r0, r1):
        nrm = rownorm2[row]
        if nrm == 0.0:
            continue
        s = b[row]
        for jj in range(indptr[row], indptr[row + 1]):
            s -= data[jj]*x[indices[jj]]
        s *= damping/nrm
        for jj in range(indptr[row], indptr[row + 1]):
            x[indices[jj]] += s*np.conj(data[jj])
