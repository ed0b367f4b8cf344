"""
Problem builders and experiment drivers used by the command line.

All drivers take an :class:`ExperimentConfig` (serializable to JSON) and
return plain dict rows, so results can be written as CSV and reproduced from
the stored configuration.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import lfa
from .direct import SchurDirectSolver
from .discretization import MixedOperator, OperatorSpec
from .grid import (MediaModel, StaggeredGrid, build_attenuation_profile, make_point_source,
                   top_center_index)
from .krylov import fgmres
from .multigrid import CoarsestConfig, as_preconditioner, build_hierarchy, measure_convergence_factor
from .periodic import PeriodicTwoGrid
from .smoothers import VankaConfig

__all__ = ['ExperimentConfig', 'build_media', 'omega_from_ppw', 'build_problem', 'run_solve',
           'run_measure_cf', 'DispersionConfig', 'run_dispersion', 'dispersion_sections',
           'mismatch', 'phase_drift', 'solve_point_source', 'LFASuiteConfig', 'run_lfa_suite',
           'CFSuiteConfig', 'run_cf_suite', 'BenchConfig', 'run_bench', 'LFA_SUITES',
           'SETTINGS_LFA_COLUMNS', 'BENCH_COLUMNS', 'CF_SETTINGS',
           'SOLVE_COLUMNS', 'CF_COLUMNS', 'DISPERSION_COLUMNS']

log = logging.getLogger(__name__)

PROBLEMS = ('homogeneous', 'linear-media', 'layered-synthetic')
SOLVE_COLUMNS = ('problem', 'grid', 'beta', 'G_s', 'levels', 'cycle', 'alpha', 'w', 'iterations',
                 'final_relres', 'converged', 'wall_time')
CF_COLUMNS = ('beta', 'omega', 'alpha', 'w', 'rho_loc', 'c_f', 'c_f_bounded', 'mu_loc2')
DISPERSION_COLUMNS = ('beta', 'angle', 'grid', 'mismatch', 'phase_drift')
# (ω·h, α) of the three frequency/shift settings compared against measurement
CF_SETTINGS = ((np.pi/5, 0.15), (np.pi/4, 0.2), (np.pi/3.3, 0.3))


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``dims`` counts cells; ``h`` defaults to ``1/dims[-1]`` (unit depth).
    Elastic constants apply to the homogeneous problem; ``ppw`` is the number
    of grid points per shear wavelength and fixes ``ω``.
    """

    problem: str = 'homogeneous'
    dims: tuple = (512, 128)
    h: float = None
    lam: float = 20.0
    mu: float = 1.0
    rho: float = 1.0
    ppw: float = 10.0
    beta: float = 2/3
    alpha: float = 0.1
    gamma: float = 0.01
    layer_width: int = 20
    gamma_max: float = 1.0
    absorb_top: bool = False
    levels: int = 2
    cycle: str = 'W'
    variant: str = 'full'
    ordering: str = 'red-black'
    w: float = 0.55
    coarsest: str = 'lu'
    transfer_boundary: str = 'zero'
    restart: int = 5
    rel_tol: float = 1e-6
    max_iters: int = 600
    precision: str = 'double'
    seed: int = 0
    layers: int = None

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if self.h is None:
            self.h = 1.0/self.dims[-1]
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if not self.ppw > 2:
            raise ValueError("ppw must exceed 2 (Nyquist)")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d['dims'] = list(self.dims)
        return d

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _depth_fraction(grid):
    n = grid.dims[-1]
    z = (np.arange(n) + 0.5)/n
    shape = [1]*(grid.ndim - 1) + [n]
    return np.broadcast_to(z.reshape(shape), grid.dims)


def layered_media(grid, rng, layers=None, max_contrast=4.0):
    """Horizontal layers with shear velocity growing with depth up to ``max_contrast``."""
    nz = grid.dims[-1]
    nl = int(layers or rng.integers(5, 11))
    cuts = np.sort(rng.choice(np.arange(1, nz), size=nl - 1, replace=False))
    vs_layers = np.sort(rng.uniform(1.0, max_contrast, size=nl))
    vs_layers[0] = 1.0
    vs_layers[-1] = max(vs_layers[-1], max_contrast*0.9)
    idx = np.searchsorted(cuts, np.arange(nz), side='right')
    vs = vs_layers[idx]
    ratio = rng.uniform(1.8, 2.2, size=nl)[idx]
    rho = 1.5 + 0.25*vs
    mu = rho*vs**2
    lam = rho*(ratio*vs)**2 - 2*mu
    shape = [1]*(grid.ndim - 1) + [nz]
    full = lambda a: np.broadcast_to(a.reshape(shape), grid.dims).copy()
    return full(lam), full(mu), full(rho)


def build_media(cfg, grid):
    """Elastic parameters and total attenuation for the configured problem."""
    if cfg.problem == 'homogeneous':
        lam, mu, rho = (np.full(grid.dims, v) for v in (cfg.lam, cfg.mu, cfg.rho))
    elif cfg.problem == 'linear-media':
        z = _depth_fraction(grid)
        rho, lam, mu = 2 + z, 4 + 16*z, 1 + 14*z
    else:
        lam, mu, rho = layered_media(grid, np.random.default_rng(cfg.seed), cfg.layers)
    gamma = build_attenuation_profile(cfg.gamma, cfg.layer_width, grid, cfg.gamma_max,
                                      cfg.absorb_top)
    return MediaModel(np.array(lam, dtype=float), np.array(mu, dtype=float),
                      np.array(rho, dtype=float), gamma)


def omega_from_ppw(media, h, ppw, layer_width=0, absorb_top=False):
    """``ω = 2π min(V_s)/(ppw·h)`` with ``V_s`` taken over the interior (outside the sponge)."""
    vs = media.vs
    L = int(layer_width)
    if L:
        sl = []
        for axis, n in enumerate(vs.shape):
            top = axis == vs.ndim - 1 and not absorb_top
            sl.append(slice(0 if top else L, n - L))
        vs = vs[tuple(sl)]
    return 2*np.pi*float(vs.min())/(ppw*h)


def build_problem(cfg):
    """Grid, unshifted spec and point-source right-hand side of a configuration."""
    grid = StaggeredGrid(cfg.dims, cfg.h)
    media = build_media(cfg, grid)
    omega = omega_from_ppw(media, cfg.h, cfg.ppw, cfg.layer_width, cfg.absorb_top)
    spec = OperatorSpec(cfg.beta, omega, grid, media)
    rhs = make_point_source(grid, top_center_index(grid))
    return grid, spec, rhs


def run_solve(cfg, return_solution=False):
    """FGMRES with a shifted multigrid preconditioner; returns a result row."""
    t0 = time.perf_counter()
    grid, spec, rhs = build_problem(cfg)
    shifted = spec.replace(shift_alpha=cfg.alpha, precision=cfg.precision)
    smoother = VankaConfig(cfg.variant, cfg.ordering, cfg.w)
    coarsest = CoarsestConfig(cfg.coarsest)
    hier = build_hierarchy(shifted, cfg.levels, smoother, coarsest,
                           transfer_boundary=cfg.transfer_boundary)
    M = as_preconditioner(hier, cfg.cycle)
    A = MixedOperator(spec)
    res = fgmres(A.matvec, M, rhs.data, restart=cfg.restart, rel_tol=cfg.rel_tol,
                 max_iters=cfg.max_iters)
    row = {
        'problem': cfg.problem, 'grid': 'x'.join(map(str, cfg.dims)), 'beta': cfg.beta,
        'G_s': cfg.ppw, 'levels': cfg.levels, 'cycle': cfg.cycle, 'alpha': cfg.alpha, 'w': cfg.w,
        'iterations': res.iterations, 'final_relres': float(res.rel_residual),
        'converged': bool(res.converged), 'wall_time': time.perf_counter() - t0,
    }
    log.info("solve %s: %d iterations, rel res %.2e", row['grid'], res.iterations, row['final_relres'])
    if return_solution:
        return row, res.x
    return row


def run_measure_cf(beta, omega_h, alpha, w, n=512, lam=500.0, mu=1.0, rho=1.0,
                   sampling_step=0.02, bounded=False, seed=0):
    """Pair the two-grid prediction with the measured factor for one setting.

    The measurement runs the two-grid cycle (lexicographic economic Vanka,
    exact coarse solve) on an ``n x n`` periodic grid; with ``bounded`` it is
    repeated on the bounded grid with zero exterior.
    """
    h = 1/n
    p = lfa.LFAParams(beta=beta, h=h, omega=omega_h/h, lam=lam, mu=mu, rho=rho, alpha=alpha)
    cfg = VankaConfig('economic', 'lexicographic', w)
    rho_loc = lfa.two_grid_factor(p, 'economic', w, sampling_step=sampling_step, refine=3)
    mu_loc = lfa.smoothing_factor(p, 'economic', w, sampling_step)
    cf = PeriodicTwoGrid(p, n, cfg).convergence_factor(rng=seed)
    cf_b = np.nan
    if bounded:
        grid = StaggeredGrid((n, n), h)
        spec = OperatorSpec(beta, omega_h/h, grid, MediaModel.homogeneous(grid, lam, mu, rho),
                            shift_alpha=alpha)
        cf_b = measure_convergence_factor(build_hierarchy(spec, 2, cfg), 'two-grid', rng=seed).factor
    return {'beta': beta, 'omega': omega_h/h, 'alpha': alpha, 'w': w, 'rho_loc': rho_loc,
            'c_f': cf, 'c_f_bounded': cf_b, 'mu_loc2': mu_loc**2}


# -- dispersion -------------------------------------------------------------

@dataclass
class DispersionConfig:
    """Homogeneous point-source problem solved directly at three resolutions.

    ``dims_real`` is the reference grid; the "fine" and "coarse" grids are
    coarser by 2 and 4. The domain is ``extent`` with unit depth, the source
    is the vertical force at the middle of the top row, and the absorbing layer
    keeps ``layer_width`` cells at every resolution. ``reference_precision``
    selects single-precision factors (refined to double accuracy) for the
    reference grid, which halves their memory.
    """

    betas: tuple = (0.5, 2/3, 0.8, 1.0)
    dims_real: tuple = (1024, 512)
    lam: float = 16.0
    mu: float = 1.0
    rho: float = 16.0
    omega: float = 50*np.pi
    gamma: float = 0.01
    layer_width: int = 20
    angles: tuple = (0, 26, 45)
    npts: int = 400
    near_field: float = 0.1
    reference_precision: str = 'single'

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.dims_real = tuple(int(n) for n in self.dims_real)
        self.angles = tuple(float(a) for a in self.angles)
        if any(n % 4 for n in self.dims_real):
            raise ValueError("dims_real must be divisible by 4")

    @property
    def extent(self):
        return (self.dims_real[0]/self.dims_real[1], 1.0)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k in ('betas', 'dims_real', 'angles'):
            d[k] = list(d[k])
        return d


def dispersion_sections(p, h, extent, angles, npts):
    """Sample the cell-centered field ``p`` along rays from the top-center source.

    Rays start at the source and go down at ``angle`` degrees from vertical;
    values are bilinearly interpolated at ``npts`` physical points, so
    sections from different grids are directly comparable.
    """
    nx, nz = p.shape
    xs, zs = (np.arange(nx) + 0.5)*h, (np.arange(nz) + 0.5)*h
    f = RegularGridInterpolator((xs, zs), p, bounds_error=False, fill_value=None)
    x0 = extent[0]/2
    out = {}
    for ang in angles:
        t = np.deg2rad(ang)
        s = np.linspace(0.0, 1.0, npts)
        length = extent[1]*0.8/max(np.cos(t), 1e-12)
        length = min(length, 0.8*x0/max(np.sin(t), 1e-12))
        pts = np.stack([x0 + s*length*np.sin(t), h/2 + s*length*np.cos(t)], axis=-1)
        out[ang] = f(pts)
    return out


def mismatch(section, reference):
    """Relative l2 distance of two sections."""
    return float(np.linalg.norm(section - reference)/np.linalg.norm(reference))


def phase_drift(section, reference, skip=0.1):
    """Accumulated phase lag (rad) of ``section`` behind ``reference``.

    The phase difference of the complex sections is fitted by a line over the
    part beyond the fraction ``skip``; the fitted slope times the fitted
    length isolates dispersion from a constant offset.
    """
    n = len(reference)
    s = np.linspace(0.0, 1.0, n)
    keep = s >= skip
    d = np.unwrap(np.angle(section[keep]*np.conj(reference[keep])))
    slope = np.polyfit(s[keep], d, 1)[0]
    return float(slope*(1.0 - skip))


def solve_point_source(dims, beta, cfg, precision='double'):
    """Pressure of the direct solution on a grid with ``dims`` cells."""
    grid = StaggeredGrid(dims, cfg.extent[1]/dims[1])
    g = build_attenuation_profile(cfg.gamma, cfg.layer_width, grid)
    media = MediaModel.homogeneous(grid, cfg.lam, cfg.mu, cfg.rho, gamma=g)
    spec = OperatorSpec(beta, cfg.omega, grid, media)
    rhs = make_point_source(grid, top_center_index(grid))
    x = SchurDirectSolver(spec, precision)(rhs.data)
    return grid.split(x)[-1]


def run_dispersion(cfg=None):
    """Compare fine and coarse solutions with the reference, per β.

    Each β uses its own discretization on all three grids. Returns rows
    ``(beta, angle, grid, mismatch, phase_drift)`` and the complex sections
    keyed by ``(beta, grid)``.
    """
    cfg = cfg or DispersionConfig()
    grids = {'real': cfg.dims_real,
             'fine': tuple(n//2 for n in cfg.dims_real),
             'coarse': tuple(n//4 for n in cfg.dims_real)}
    rows, sections = [], {}
    for beta in cfg.betas:
        for name, dims in grids.items():
            t0 = time.perf_counter()
            prec = cfg.reference_precision if name == 'real' else 'double'
            p = solve_point_source(dims, beta, cfg, prec)
            sections[beta, name] = dispersion_sections(p, cfg.extent[1]/dims[1], cfg.extent,
                                                       cfg.angles, cfg.npts)
            del p
            log.info("dispersion beta=%.3f %s %s: %.1fs", beta, name, dims,
                     time.perf_counter() - t0)
        real = sections[beta, 'real']
        for name in ('fine', 'coarse'):
            for ang in cfg.angles:
                sec = sections[beta, name][ang]
                rows.append({'beta': beta, 'angle': ang, 'grid': name,
                             'mismatch': mismatch(sec.real, real[ang].real),
                             'phase_drift': phase_drift(sec, real[ang], cfg.near_field)})
    return rows, sections


# -- LFA and convergence-factor suites ---------------------------------------

LFA_SUITES = ('beta', 'alpha', 'ppw', 'settings')
SETTINGS_LFA_COLUMNS = ('beta', 'omega', 'alpha', 'w', 'mu_loc2', 'rho_loc')
BENCH_COLUMNS = ('kernel', 'grid', 'beta', 'seconds')


@dataclass
class LFASuiteConfig:
    """Parameter sweeps of the two-grid analysis.

    ``beta`` sweeps β at fixed damping ``beta_sweep_w``; ``alpha`` and ``ppw``
    sweep the shift and the resolution for each ``(β, w)`` in ``dampings``;
    ``settings`` evaluates the six frequency/shift settings of
    :data:`CF_SETTINGS`.
    """

    suites: tuple = LFA_SUITES
    h: float = 1/1024
    lam: float = 500.0
    mu: float = 1.0
    rho: float = 1.0
    alpha: float = 0.1
    variant: str = 'economic'
    sampling_step: float = 0.02
    refine: int = 3
    beta_values: tuple = tuple(np.round(np.arange(0.5, 1.0001, 0.025), 4))
    beta_sweep_w: float = 0.7
    alpha_values: tuple = tuple(np.round(np.arange(0.0, 0.2001, 0.01), 4))
    ppw_values: tuple = (5, 6, 6.5, 7, 8, 9, 10, 11, 12)
    dampings: tuple = ((2/3, 0.65), (1.0, 0.75))

    def __post_init__(self):
        self.suites = tuple(self.suites)
        bad = set(self.suites) - set(LFA_SUITES)
        if bad:
            raise ValueError(f"unknown LFA suites {sorted(bad)}")
        for k in ('beta_values', 'alpha_values', 'ppw_values'):
            setattr(self, k, tuple(float(v) for v in getattr(self, k)))
        self.dampings = tuple((float(b), float(w)) for b, w in self.dampings)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v
                for k, v in d.items()}

    def params(self, **kw):
        base = dict(h=self.h, lam=self.lam, mu=self.mu, rho=self.rho, alpha=self.alpha)
        base.update(kw)
        return lfa.LFAParams(**base)


def run_lfa_suite(cfg=None):
    """Run the configured sweeps; returns ``{name: (columns, rows)}``."""
    cfg = cfg or LFASuiteConfig()
    out = {}
    step, refine = cfg.sampling_step, cfg.refine
    if 'beta' in cfg.suites:
        rows = lfa.sweep('beta', cfg.beta_values, cfg.params(), cfg.variant, cfg.beta_sweep_w,
                         sampling_step=step, refine=refine)
        out['lfa_beta'] = (lfa.SWEEP_COLUMNS, rows)
    for beta, w in cfg.dampings:
        tag = f"b{beta:.3f}"
        if 'alpha' in cfg.suites:
            rows = lfa.sweep('alpha', cfg.alpha_values, cfg.params(beta=beta), cfg.variant, w,
                             sampling_step=step, refine=refine)
            out[f'lfa_alpha_{tag}'] = (lfa.SWEEP_COLUMNS, rows)
        if 'ppw' in cfg.suites:
            rows = lfa.sweep('ppw', cfg.ppw_values, cfg.params(beta=beta), cfg.variant, w,
                             sampling_step=step, refine=refine)
            out[f'lfa_ppw_{tag}'] = (lfa.SWEEP_COLUMNS, rows)
    if 'settings' in cfg.suites:
        rows = []
        for omega_h, alpha in CF_SETTINGS:
            for beta, w in cfg.dampings:
                p = cfg.params(beta=beta, omega=omega_h/cfg.h, alpha=alpha)
                mu = lfa.smoothing_factor(p, cfg.variant, w, step)
                rho = lfa.two_grid_factor(p, cfg.variant, w, sampling_step=step, refine=refine)
                rows.append((beta, p.omega, alpha, w, mu**2, rho))
        out['lfa_settings'] = (SETTINGS_LFA_COLUMNS, rows)
    return out


@dataclass
class CFSuiteConfig:
    """Predicted and measured two-grid factors at the settings of :data:`CF_SETTINGS`."""

    n: int = 512
    lam: float = 500.0
    mu: float = 1.0
    rho: float = 1.0
    sampling_step: float = 0.02
    bounded: bool = False
    dampings: tuple = ((2/3, 0.65), (1.0, 0.75))
    settings: tuple = CF_SETTINGS
    seed: int = 0

    def __post_init__(self):
        self.dampings = tuple((float(b), float(w)) for b, w in self.dampings)
        self.settings = tuple((float(o), float(a)) for o, a in self.settings)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d['dampings'] = [list(x) for x in self.dampings]
        d['settings'] = [list(x) for x in self.settings]
        return d


def run_cf_suite(cfg=None):
    cfg = cfg or CFSuiteConfig()
    rows = []
    for omega_h, alpha in cfg.settings:
        for beta, w in cfg.dampings:
            rows.append(run_measure_cf(beta, omega_h, alpha, w, cfg.n, cfg.lam, cfg.mu, cfg.rho,
                                       cfg.sampling_step, cfg.bounded, cfg.seed))
            log.info("measure-cf %s", rows[-1])
    return rows


@dataclass
class BenchConfig:
    """Timing of the main kernels on a homogeneous square grid."""

    dims: tuple = (256, 256)
    beta: float = 2/3
    ppw: float = 10.0
    alpha: float = 0.1
    repeats: int = 5

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d['dims'] = list(self.dims)
        return d


def run_bench(cfg=None, seed=0):
    """Best-of-``repeats`` wall time of the operator, smoother, cycle and LFA kernels."""
    cfg = cfg or BenchConfig()
    ecfg = ExperimentConfig(dims=cfg.dims, beta=cfg.beta, ppw=cfg.ppw, alpha=cfg.alpha,
                            lam=2.0, layer_width=0)
    grid, spec, rhs = build_problem(ecfg)
    hier = build_hierarchy(spec.replace(shift_alpha=cfg.alpha), 2,
                           VankaConfig('full', 'red-black', 0.55))
    op = MixedOperator(spec)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(grid.ndof) + 1j*rng.standard_normal(grid.ndof)
    smoother = hier.levels[0].smoother
    theta = lfa.sample_high(0.05)
    p = lfa.LFAParams(beta=cfg.beta, alpha=cfg.alpha)
    kernels = {
        'matvec': lambda: op.matvec(x),
        'vanka_sweep': lambda: smoother.sweep(x.copy(), rhs.data),
        'w_cycle': lambda: hier.cycle(rhs.data, None, 'W'),
        'lfa_two_grid_symbols': lambda: lfa.two_grid_symbol(p, theta, 'economic', 0.65),
    }
    rows = []
    for name, fn in kernels.items():
        fn()  # compile and warm caches
        best = np.inf
        for _ in range(cfg.repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        rows.append({'kernel': name, 'grid': 'x'.join(map(str, cfg.dims)), 'beta': cfg.beta,
                     'seconds': best})
    return rows
