"""
Flexible restarted GMRES with right preconditioning.

The preconditioner may change between applications (e.g. a K-cycle), so the
preconditioned directions ``z_j = M(v_j)`` are stored and the update is
``x += Z y``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = ['KrylovConfig', 'KrylovResult', 'fgmres', 'gmres_inner']

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KrylovConfig:
    restart: int = 5
    rel_tol: float = 1e-6
    max_iters: int = 600
    reorthogonalize: bool = True

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass
class KrylovResult:
    """Outcome of :func:`fgmres`.

    ``iterations`` counts preconditioner applications. ``history`` holds the
    relative residual after every iteration (Givens estimate inside a restart
    block, true residual at block ends), starting with the initial one.
    """

    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False

    @property
    def rel_residual(self):
        return self.history[-1] if self.history else np.nan

    def __iter__(self):
        # allows ``x, its, hist = fgmres(...)``
        return iter((self.x, self.iterations, self.history))


def _as_callable(op):
    if op is None:
        return lambda v: v
    if callable(op):
        return op
    if hasattr(op, 'matvec'):
        return op.matvec
    return lambda v: op @ v


def _givens(a, b):
    """Complex Givens rotation zeroing ``b`` in ``(a, b)``."""
    if b == 0:
        return 1.0, 0.0, a
    if a == 0:
        return 0.0, np.conj(b)/abs(b), abs(b)
    r = np.hypot(abs(a), abs(b))
    c = abs(a)/r
    s = (a/abs(a))*np.conj(b)/r
    return c, s, (a/abs(a))*r


def fgmres(A, M, b, x0=None, config=None, *, restart=None, rel_tol=None, max_iters=None,
           callback=None):
    """Solve ``A x = b`` with right-preconditioned flexible GMRES(m).

    Parameters
    ----------
    A, M : callable, matrix or LinearOperator
        Operator and (possibly varying) preconditioner. ``M=None`` means none.
    b : ndarray
    x0 : ndarray, optional
        Initial guess, zero by default.
    config : KrylovConfig, optional
        Keyword overrides ``restart``, ``rel_tol`` and ``max_iters`` take
        precedence.
    callback : callable, optional
        Called as ``callback(iteration, rel_residual)``.

    Returns
    -------
    KrylovResult
    """
    cfg = config or KrylovConfig()
    m = restart or cfg.restart
    tol = cfg.rel_tol if rel_tol is None else rel_tol
    maxit = cfg.max_iters if max_iters is None else max_iters
    Aop, Mop = _as_callable(A), _as_callable(M)

    b = np.asarray(b)
    dtype = np.result_type(b.dtype, np.complex64)
    x = np.zeros(b.shape, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return KrylovResult(np.zeros_like(x), 0, [0.0], True)

    r = b - Aop(x) if x0 is not None else b.astype(dtype)
    beta = np.linalg.norm(r)
    hist = [beta/bnorm]
    its = 0
    if hist[-1] <= tol:
        return KrylovResult(x, 0, hist, True)

    n = b.size
    while its < maxit:
        V = np.empty((m + 1, n), dtype=dtype)
        Z = np.empty((m, n), dtype=dtype)
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = beta
        V[0] = r/beta
        k = 0
        breakdown = False
        for j in range(m):
            if its >= maxit:
                break
            Z[j] = Mop(V[j])
            w = Aop(Z[j])
            its += 1
            w0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j]*V[i]
            if cfg.reorthogonalize and np.linalg.norm(w) < w0/np.sqrt(2):
                for i in range(j + 1):
                    c = np.vdot(V[i], w)
                    H[i, j] += c
                    w = w - c*V[i]
            hn = np.linalg.norm(w)
            H[j + 1, j] = hn
            if hn > 0:
                V[j + 1] = w/hn
            for i in range(j):
                t = cs[i]*H[i, j] + sn[i]*H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i])*H[i, j] + cs[i]*H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j], H[j, j] = _givens(H[j, j], H[j + 1, j])
            H[j + 1, j] = 0
            g[j + 1] = -np.conj(sn[j])*g[j]
            g[j] = cs[j]*g[j]
            k = j + 1
            est = abs(g[j + 1])/bnorm
            if callback is not None:
                callback(its, est)
            if hn <= 1e-14*max(w0, 1.0):
                breakdown = True
                break
            hist.append(est)
            if est <= tol:
                break
        if k:
            y = solve_triangular(H[:k, :k], g[:k])
            x = x + y @ Z[:k]
        r = b - Aop(x)
        beta = np.linalg.norm(r)
        true_rel = beta/bnorm
        if breakdown:
            hist.append(true_rel)
            log.debug("FGMRES breakdown after %d iterations (rel res %.3e)", its, true_rel)
            return KrylovResult(x, its, hist, true_rel <= max(tol, 1e-10), True)
        hist[-1] = true_rel
        if true_rel <= tol:
            return KrylovResult(x, its, hist, True)
    log.info("FGMRES stopped at max_iters=%d with rel res %.3e", maxit, hist[-1])
    return KrylovResult(x, its, hist, False)


def gmres_inner(A, M, b, restart=5, drop=0.1, cap=250, sweeps=10):
    """Inexact coarse solve: FGMRES(``restart``) until the residual drops by ``drop``.

    ``M`` applies ``sweeps`` relaxation sweeps per call; the total number of
    sweeps is capped at ``cap``.

    Returns
    -------
    x : ndarray
    nsweeps : int
        Relaxation sweeps spent.
    """
    b = np.asarray(b)
    if not np.any(b):
        return np.zeros_like(b), 0
    max_apps = max(cap//sweeps, 1)
    res = fgmres(A, M, b, restart=restart, rel_tol=drop, max_iters=max_apps)
    return res.x, res.iterations*sweeps
