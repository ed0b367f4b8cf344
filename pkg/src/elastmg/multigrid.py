"""
Geometric multigrid for the shifted mixed operator.

Every level is a re-discretization of the same β-stencil on media averaged
over child cells. The coarsest level is solved either exactly (sparse LU of
the assembled mixed matrix) or inexactly by Kaczmarz-preconditioned FGMRES on
the displacement Schur complement, with the pressure recovered afterwards.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .direct import SchurDirectSolver
from .discretization import MixedOperator, OperatorSpec, assemble_schur_sparse, assemble_sparse
from .grid import FieldVector
from .krylov import fgmres, gmres_inner
from .smoothers import KaczmarzRelaxation, VankaConfig, VankaSmoother
from .transfer import TransferPair, coarsen_media

__all__ = ['CYCLES', 'COARSEST_SOLVERS', 'CoarsestConfig', 'Level', 'MGHierarchy', 'build_hierarchy', 'cycle',
           'ConvergenceMeasurement', 'measure_convergence_factor', 'as_preconditioner',
           'CyclePreconditioner']

log = logging.getLogger(__name__)

CYCLES = ('two-grid', 'V', 'W', 'K')


COARSEST_SOLVERS = ('lu', 'schur-lu', 'kaczmarz')


@dataclass(frozen=True)
class CoarsestConfig:
    """Coarsest-level solver.

    ``solver='lu'`` factorizes the assembled mixed matrix, ``solver='schur-lu'``
    the displacement Schur complement in nested-dissection order (much less
    fill on large coarse grids). ``solver='kaczmarz'`` runs FGMRES(``restart``) on the displacement Schur complement until the
    residual drops by ``drop``, preconditioned by ``sweeps`` hybrid Kaczmarz
    sweeps and capped at ``cap`` sweeps in total.
    """

    solver: str = 'lu'
    damping: float = 0.8
    subdomains: int = 1
    sweeps: int = 10
    drop: float = 0.1
    cap: int = 250
    restart: int = 5

    def __post_init__(self):
        if self.solver not in COARSEST_SOLVERS:
            raise ValueError(f"unknown coarsest solver {self.solver!r}")


class _LUSolver:
    exact = True

    def __init__(self, spec):
        A = assemble_sparse(spec, max_dofs=None).astype(np.complex128).tocsc()
        try:
            self.lu = splu(A)
        except RuntimeError as err:
            raise np.linalg.LinAlgError(
                f"coarsest matrix on {spec.grid.dims} is singular; increase the shift") from err
        self.dtype = spec.dtype

    def __call__(self, b):
        return self.lu.solve(np.asarray(b, dtype=np.complex128)).astype(self.dtype)


class _SchurLUSolver:
    exact = True

    def __init__(self, spec):
        self.solver = SchurDirectSolver(spec)
        self.dtype = spec.dtype

    def __call__(self, b):
        return self.solver(b).astype(self.dtype)


class _KaczmarzSolver:
    exact = False

    def __init__(self, spec, cfg):
        self.cfg = cfg
        self.grid = spec.grid
        self.op = MixedOperator(spec)
        self.S = assemble_schur_sparse(spec, max_dofs=None)
        self.relax = KaczmarzRelaxation(self.S, cfg.damping, cfg.subdomains)
        self.lam_mu = (spec.media.lam + spec.media.mu).ravel()
        self.dtype = spec.dtype
        self.sweeps_used = 0

    def __call__(self, b):
        n_u = self.grid.n_u
        b = np.asarray(b, dtype=self.S.dtype)
        f, g = b[:n_u], b[n_u:]
        op = self.op
        u_parts = [np.zeros(self.grid.u_shape(k), dtype=b.dtype) for k in range(self.grid.ndim)]
        # eliminate p = (λ+μ)(g − C u)
        lg = (self.lam_mu*g).reshape(self.grid.p_shape)
        rhs = f - np.concatenate([op.grad_term(k, lg).ravel() for k in range(self.grid.ndim)])
        cfg = self.cfg
        u, nsw = gmres_inner(self.S, lambda v: self.relax(v, cfg.sweeps), rhs,
                             restart=cfg.restart, drop=cfg.drop, cap=cfg.cap, sweeps=cfg.sweeps)
        self.sweeps_used += nsw
        off = self.grid.offsets
        for k in range(self.grid.ndim):
            u_parts[k] = u[off[k]:off[k+1]].reshape(self.grid.u_shape(k))
        p = self.lam_mu*(g - op.div_term(u_parts).ravel())
        return np.concatenate([u, p]).astype(self.dtype)


@dataclass
class Level:
    spec: OperatorSpec
    op: MixedOperator
    smoother: VankaSmoother | None
    transfer: TransferPair | None

    @property
    def grid(self):
        return self.spec.grid


@dataclass
class MGHierarchy:
    """Levels from fine (index 0) to coarsest, plus the coarsest solver."""

    levels: list
    coarsest: object
    smoother_config: VankaConfig
    coarsest_config: CoarsestConfig
    nu1: int = 1
    nu2: int = 1
    stats: dict = field(default_factory=lambda: {'cycles': 0, 'coarse_solves': 0})

    @property
    def nlevels(self):
        return len(self.levels)

    @property
    def fine(self):
        return self.levels[0]

    def _solve_coarsest(self, b):
        self.stats['coarse_solves'] += 1
        return self.coarsest(b)

    def _cycle(self, l, b, x, kind):
        lev = self.levels[l]
        if l == self.nlevels - 1:
            return self._solve_coarsest(b)
        sm = lev.smoother
        for _ in range(self.nu1):
            sm.sweep(x, b)
        rc = lev.transfer.restrict(b - lev.op.matvec(x)).astype(x.dtype)
        ec = self._coarse_correction(l + 1, rc, kind)
        x += lev.transfer.prolong(ec).astype(x.dtype)
        for _ in range(self.nu2):
            sm.sweep(x, b)
        return x

    def _coarse_correction(self, l, rc, kind):
        if l == self.nlevels - 1:
            return self._solve_coarsest(rc)
        zero = lambda: np.zeros_like(rc)
        if kind == 'V':
            return self._cycle(l, rc, zero(), kind)
        if kind == 'W':
            ec = self._cycle(l, rc, zero(), kind)
            return self._cycle(l, rc, ec, kind)
        if kind == 'K':
            lev = self.levels[l]
            res = fgmres(lev.op.matvec, lambda v: self._cycle(l, v, np.zeros_like(v), kind), rc,
                         restart=2, rel_tol=1e-14, max_iters=2)
            return res.x.astype(rc.dtype)
        raise ValueError(f"unknown cycle type {kind!r}")

    def cycle(self, b, x0=None, kind='W'):
        """One multigrid cycle for the fine shifted system; returns the new iterate (flat)."""
        if kind not in CYCLES:
            raise ValueError(f"cycle type must be one of {CYCLES}, got {kind!r}")
        if kind == 'two-grid':
            if self.nlevels != 2:
                raise ValueError("a two-grid cycle needs a 2-level hierarchy")
            kind = 'V'
        dtype = self.fine.spec.dtype
        b = np.asarray(b, dtype=dtype)
        x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=dtype)
        self.stats['cycles'] += 1
        if self.nlevels == 1:
            return self._solve_coarsest(b)
        return self._cycle(0, b, x, kind)

    def residual(self, b, x):
        return b - self.fine.op.matvec(x)

    def with_damping(self, damping):
        """Same hierarchy with a different smoother damping (cell systems reused)."""
        levels = [Level(l.spec, l.op, l.smoother.with_damping(damping) if l.smoother else None,
                        l.transfer) for l in self.levels]
        cfg = VankaConfig(self.smoother_config.variant, self.smoother_config.ordering, damping)
        return MGHierarchy(levels, self.coarsest, cfg, self.coarsest_config, self.nu1, self.nu2)


def build_hierarchy(spec, nlevels=2, smoother=None, coarsest='lu', nu1=1, nu2=1,
                    transfer_boundary='zero'):
    """Build a re-discretized hierarchy for the (shifted) operator ``spec``.

    Parameters
    ----------
    spec : OperatorSpec
        Fine-level operator, normally already carrying the shift ``α``.
    nlevels : int
        Number of grids including the finest.
    smoother : VankaConfig, optional
    coarsest : {'lu', 'schur-lu', 'kaczmarz'} or CoarsestConfig
    nu1, nu2 : int
        Pre- and post-smoothing sweeps.
    transfer_boundary : {'zero', 'renormalize'}
        Treatment of transfer rows cut by the boundary.
    """
    if nlevels < 1:
        raise ValueError("nlevels must be at least 1")
    smoother = smoother or VankaConfig()
    ccfg = coarsest if isinstance(coarsest, CoarsestConfig) else CoarsestConfig(coarsest)
    f = 2**(nlevels - 1)
    if any(n % f for n in spec.grid.dims):
        raise ValueError(f"grid {spec.grid.dims} is not divisible by 2^{nlevels - 1}")
    levels = []
    s = spec
    for l in range(nlevels):
        op = MixedOperator(s)
        last = l == nlevels - 1
        levels.append(Level(s, op, None if last else VankaSmoother(op, smoother),
                            None if last else TransferPair(s.grid, transfer_boundary)))
        if not last:
            cg = s.grid.coarsen()
            s = s.replace(grid=cg, media=coarsen_media(s.media, s.grid))
    coarse_spec = levels[-1].spec
    if ccfg.solver == 'lu':
        solver = _LUSolver(coarse_spec)
    elif ccfg.solver == 'schur-lu':
        solver = _SchurLUSolver(coarse_spec)
    else:
        solver = _KaczmarzSolver(coarse_spec, ccfg)
    log.debug("hierarchy: %s, coarsest %s", [lv.grid.dims for lv in levels], ccfg.solver)
    return MGHierarchy(levels, solver, smoother, ccfg, nu1, nu2)


def cycle(hierarchy, kind, b, x0=None):
    """Apply one cycle of type ``kind`` to :class:`FieldVector` arguments."""
    x = hierarchy.cycle(b.data, None if x0 is None else x0.data, kind)
    return FieldVector(b.grid, x.astype(complex))


@dataclass
class ConvergenceMeasurement:
    factor: float
    cycles: int
    diverged: bool
    history: list


def measure_convergence_factor(hierarchy, kind='two-grid', warmup=5, tol=1e-9, max_cycles=300,
                               rng=None, x0=None, diverge_window=20):
    """Asymptotic factor ``(‖r_k‖/‖r_0‖)^(1/k)`` of the cycle on ``A e = 0``.

    ``r_0`` is the residual after ``warmup`` cycles from a random start and
    ``k`` the first count with ``‖r_k‖/‖r_0‖ < tol`` (or ``max_cycles``).
    Growth over ``diverge_window`` consecutive cycles stops the run and flags
    divergence.
    """
    fine = hierarchy.fine
    dtype = fine.spec.dtype
    if x0 is None:
        rng = np.random.default_rng(rng)
        n = fine.grid.ndof
        x0 = rng.standard_normal(n) + 1j*rng.standard_normal(n)
    x = np.asarray(x0, dtype=dtype).copy()
    b = np.zeros_like(x)
    for _ in range(warmup):
        x = hierarchy.cycle(b, x, kind)
    r0 = np.linalg.norm(hierarchy.residual(b, x))
    if r0 == 0:
        return ConvergenceMeasurement(0.0, 0, False, [0.0])
    hist = [1.0]
    grow = 0
    for k in range(1, max_cycles + 1):
        x = hierarchy.cycle(b, x, kind)
        rel = np.linalg.norm(hierarchy.residual(b, x))/r0
        hist.append(rel)
        grow = grow + 1 if rel > hist[-2] else 0
        if rel < tol or grow >= diverge_window or not np.isfinite(rel):
            break
    diverged = grow >= diverge_window or not np.isfinite(hist[-1])
    factor = hist[-1]**(1/k) if np.isfinite(hist[-1]) else np.inf
    return ConvergenceMeasurement(float(factor), k, bool(diverged or factor >= 1), hist)


class CyclePreconditioner:
    """One cycle with zero initial guess, as a callable on flat vectors.

    ``linear`` is False for K-cycles, which require a flexible outer method.
    Inputs are cast to the hierarchy's precision and results back to the input
    dtype.
    """

    def __init__(self, hierarchy, kind='W'):
        if kind not in CYCLES:
            raise ValueError(f"cycle type must be one of {CYCLES}, got {kind!r}")
        self.hierarchy = hierarchy
        self.kind = kind
        self.linear = kind != 'K' and hierarchy.coarsest.exact
        self.applications = 0

    def __call__(self, r):
        self.applications += 1
        r = np.asarray(r)
        return self.hierarchy.cycle(r, None, self.kind).astype(np.result_type(r.dtype, np.complex64))

    matvec = __call__


def as_preconditioner(hierarchy, kind='W'):
    return CyclePreconditioner(hierarchy, kind)
