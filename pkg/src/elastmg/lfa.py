"""
Two-grid local Fourier analysis of the β-spread mixed discretization (2D).

Fourier modes are written as ``a_c·exp(iθ·x/h)`` with ``x`` the absolute
position of each DOF (faces at integer, cell centers at half-integer
coordinates in units of ``h``). Symbol matrices over the harmonic space are
ordered component-major: row/column ``4*c + k`` is component ``c``
(``u_1, u_2, p``) at harmonic ``k`` (``θ, θ+(π,π), θ+(π,0), θ+(0,π)``).

The smoother symbol is that of the multiplicative (lexicographic) Vanka
sweep. Writing the correction of cell ``c`` as ``δ̂·exp(iθ·c)``, translation
invariance gives::

    (I + w K⁻¹ Σ_{d<0} C_d e^{iθ·d}) δ̂ = −w K⁻¹ Â(θ) ê

where ``K`` is the (possibly diagonal-approximated) cell matrix, ``C_d`` the
coupling of the DOFs of cell ``c + d`` into the equations of cell ``c`` and
``Â(θ)`` the operator rows of the cell applied to the mode. The new error
amplitudes collect the corrections of every cell touching a DOF.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from itertools import product

import numpy as np

from .discretization import Stencil, stencil_d_spread, stencil_d_std, stencil_laplacian, stencil_mass

__all__ = ['LFAParams', 'stencil_symbol', 'harmonics', 'in_low', 'homogeneous_stencils',
           'operator_symbol', 'operator_symbol_matrix', 'coarse_operator_symbol',
           'transfer_symbols', 'vanka_symbol', 'vanka_symbol_matrix', 'smoothing_factor',
           'two_grid_factor', 'sweep', 'write_sweep_csv', 'SWEEP_COLUMNS']

log = logging.getLogger(__name__)

SHIFTS = np.array([[0, 0], [np.pi, np.pi], [np.pi, 0], [0, np.pi]])
SWEEP_COLUMNS = ('param', 'mu_loc', 'rho_loc', 'skipped_thetas')


@dataclass(frozen=True)
class LFAParams:
    """Homogeneous 2D problem analysed by LFA.

    ``omega`` defaults to ``π/(5h)`` (ten points per shear wavelength for
    ``V_s = 1``).
    """

    beta: float = 2/3
    h: float = 1/1024
    omega: float = None
    lam: float = 500.0
    mu: float = 1.0
    rho: float = 1.0
    alpha: float = 0.1
    gamma: float = 0.0

    def __post_init__(self):
        if self.omega is None:
            object.__setattr__(self, 'omega', np.pi/(5*self.h))

    @classmethod
    def from_ppw(cls, ppw, h=1/1024, mu=1.0, rho=1.0, **kw):
        """Frequency with ``ppw`` grid points per shear wavelength."""
        return cls(h=h, omega=2*np.pi*np.sqrt(mu/rho)/(ppw*h), mu=mu, rho=rho, **kw)

    @property
    def points_per_wavelength(self):
        return 2*np.pi*np.sqrt(self.mu/self.rho)/(self.omega*self.h)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def stencil_symbol(stencil, theta, offsets=None):
    """``Σ c_k exp(iθ·o_k)``; ``theta`` may be a batch of shape (N, d).

    Either a :class:`Stencil` or raw coefficients with ``offsets``.
    """
    if offsets is None:
        offsets, coeffs = stencil.offsets, stencil.coeffs
    else:
        coeffs = np.asarray(stencil, dtype=complex)
        offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if coeffs.size == 0:
        return np.zeros(theta.shape[:-1], dtype=complex)
    return np.exp(1j*theta @ offsets.T) @ coeffs


def harmonics(theta):
    """The four harmonics of ``theta``: shape (..., 4, 2)."""
    theta = np.asarray(theta, dtype=float)
    return theta[..., None, :] + SHIFTS


def in_low(theta, tol=1e-12):
    theta = np.asarray(theta)
    return np.all((theta >= -np.pi/2 - tol) & (theta <= np.pi/2 + tol), axis=-1)


def homogeneous_stencils(params, h=None, omega=None):
    """Stencils ``{(row comp, col comp): Stencil}`` of the constant-coefficient operator.

    Offsets are column DOF position minus row DOF position, in units of ``h``.
    """
    h = params.h if h is None else h
    omega = params.omega if omega is None else omega
    b = params.beta
    uu = (params.mu*stencil_laplacian(b, 2, h)
          + (-params.rho)*stencil_mass(b, 2, omega, params.gamma + params.alpha))
    st = {}
    for k in range(2):
        st[(k, k)] = uu
        st[(k, 2)] = stencil_d_std(2, k, h)
        st[(2, k)] = stencil_d_spread(b, 2, k, h)
    st[(2, 2)] = Stencil(np.zeros((1, 2)), [1/(params.lam + params.mu)])
    return st


def operator_symbol(params, theta, h=None, omega=None):
    """3x3 symbol of the operator for a batch of frequencies: shape (N, 3, 3)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    st = homogeneous_stencils(params, h, omega)
    out = np.zeros(theta.shape[:-1] + (3, 3), dtype=complex)
    for (a, b), s in st.items():
        out[..., a, b] = stencil_symbol(s, theta)
    return out


def coarse_operator_symbol(params, theta):
    """Re-discretized operator on spacing ``2h`` at the coarse frequency ``2θ``."""
    return operator_symbol(params, 2*np.atleast_2d(theta), h=2*params.h)


def _blockdiag_harmonics(sym4):
    """(N, 4, 3, 3) per-harmonic symbols -> (N, 12, 12) component-major."""
    N = sym4.shape[0]
    out = np.zeros((N, 3, 4, 3, 4), dtype=complex)
    for k in range(4):
        out[:, :, k, :, k] = sym4[:, k]
    return out.reshape(N, 12, 12)


def operator_symbol_matrix(params, theta):
    """Fine (N, 12, 12) and coarse (N, 3, 3) symbol matrices at ``theta``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    hs = harmonics(theta)
    fine = operator_symbol(params, hs.reshape(-1, 2)).reshape(-1, 4, 3, 3)
    return _blockdiag_harmonics(fine), coarse_operator_symbol(params, theta)


# -- transfers ----------------------------------------------------------------

_R1D = {True: {-1.0: 0.25, 0.0: 0.5, 1.0: 0.25}, False: {-0.5: 0.5, 0.5: 0.5}}
_P1D = {True: {-1.0: 0.5, 0.0: 1.0, 1.0: 0.5}, False: {-1.5: 0.25, -0.5: 0.75, 0.5: 0.75, 1.5: 0.25}}


def _tensor_weights(table, comp, ndim=2):
    entries = {}
    axes = [table[j == comp] for j in range(ndim)]
    for combo in product(*[list(a.items()) for a in axes]):
        off = tuple(o for o, _ in combo)
        entries[off] = float(np.prod([w for _, w in combo]))
    return Stencil.from_dict(entries, ndim)


def transfer_stencils(comp, ndim=2):
    """(restriction, prolongation) stencils of one component.

    Restriction weights sum to 1 and prolongation weights to ``2**ndim``.
    """
    return _tensor_weights(_R1D, comp, ndim), _tensor_weights(_P1D, comp, ndim)


def transfer_symbols(theta):
    """Restriction (N, 3, 12) and prolongation (N, 12, 3) symbol matrices."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    hs = harmonics(theta)
    R = np.zeros((N, 3, 12), dtype=complex)
    P = np.zeros((N, 12, 3), dtype=complex)
    for c in range(3):
        rst, pst = transfer_stencils(c)
        x0 = np.array([0.0 if j == c else 1.0 for j in range(2)])
        for k in range(4):
            tk = hs[:, k]
            phase = np.exp(1j*(tk - theta) @ x0)
            R[:, c, 4*c + k] = phase*stencil_symbol(rst, tk)
            P[:, 4*c + k, c] = np.conj(phase)*stencil_symbol(pst, -tk)/4
    return R, P


# -- Vanka smoother -----------------------------------------------------------

def _cell_layout():
    """Local DOFs of a cell: (component, position relative to the center)."""
    comps = [0, 0, 1, 1, 2]
    pos = np.array([[-0.5, 0], [0.5, 0], [0, -0.5], [0, 0.5], [0, 0]])
    return comps, pos


def _coupling_tables(st):
    comps, pos = _cell_layout()
    dicts = {key: s.as_dict() for key, s in st.items()}

    def coeff(a, b, d):
        key = tuple(float(v) for v in np.asarray(d) + pos[b] - pos[a])
        return dicts.get((comps[a], comps[b]), {}).get(key, 0)

    K = np.array([[coeff(a, b, (0, 0)) for b in range(5)] for a in range(5)], dtype=complex)
    earlier = {}
    for d in product(range(-3, 4), repeat=2):
        if d[0] < 0 or (d[0] == 0 and d[1] < 0):
            Cd = np.array([[coeff(a, b, d) for b in range(5)] for a in range(5)], dtype=complex)
            if np.any(Cd != 0):
                earlier[d] = Cd
    return K, earlier


def vanka_symbol(params, theta, variant='economic', damping=0.65):
    """3x3 error-propagation symbol of one lexicographic Vanka sweep, shape (N, 3, 3)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    st = homogeneous_stencils(params)
    comps, pos = _cell_layout()
    K, earlier = _coupling_tables(st)
    if variant == 'economic':
        K = K.copy()
        K[:4, :4] = np.diag(np.diag(K[:4, :4]))
    elif variant != 'full':
        raise ValueError(f"unknown Vanka variant {variant!r}")
    Kinv = np.linalg.inv(K)
    if np.linalg.cond(K) > 1e12:
        log.warning("near-singular Vanka cell matrix (cond %.2e)", np.linalg.cond(K))
    w = damping
    # operator rows of the cell DOFs applied to a unit mode of each component
    Ahat = np.zeros((N, 5, 3), dtype=complex)
    for a in range(5):
        for cb in range(3):
            s = st.get((comps[a], cb))
            if s is not None:
                Ahat[:, a, cb] = stencil_symbol(s, theta)*np.exp(1j*theta @ pos[a])
    L = np.zeros((N, 5, 5), dtype=complex)
    for d, Cd in earlier.items():
        L += np.exp(1j*theta @ np.array(d, dtype=float))[:, None, None]*Cd
    lhs = np.eye(5) + w*np.einsum('ab,nbc->nac', Kinv, L)
    rhs = -w*np.einsum('ab,nbc->nac', Kinv, Ahat)
    delta = np.linalg.solve(lhs, rhs)
    scat = np.zeros((N, 3, 5), dtype=complex)
    for a in range(5):
        scat[:, comps[a], a] = np.exp(-1j*theta @ pos[a])
    return np.eye(3) + scat @ delta


def vanka_symbol_matrix(params, theta, variant='economic', damping=0.65):
    """(N, 12, 12) smoother symbol over the harmonics of ``theta``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    hs = harmonics(theta).reshape(-1, 2)
    s = vanka_symbol(params, hs, variant, damping).reshape(-1, 4, 3, 3)
    return _blockdiag_harmonics(s)


# -- factors ------------------------------------------------------------------

def _spectral_radius(M):
    return np.abs(np.linalg.eigvals(M)).max(axis=-1)


def _grid_1d(lo, hi, step):
    n = int(np.floor((hi - lo)/step + 1e-9))
    return lo + step*np.arange(n + 1)


def sample_high(step):
    t = _grid_1d(-np.pi/2, 3*np.pi/2 - 1e-12, step)
    th = np.stack(np.meshgrid(t, t, indexing='ij'), axis=-1).reshape(-1, 2)
    return th[~in_low(th)]


def sample_low(step):
    t = _grid_1d(-np.pi/2, np.pi/2, step)
    return np.stack(np.meshgrid(t, t, indexing='ij'), axis=-1).reshape(-1, 2)


def smoothing_factor(params, variant='economic', damping=0.65, sampling_step=0.01, chunk=50000):
    """``μ_loc``: max spectral radius of the smoother symbol over sampled ``T_high``."""
    th = sample_high(sampling_step)
    mu = 0.0
    for i in range(0, len(th), chunk):
        mu = max(mu, float(_spectral_radius(vanka_symbol(params, th[i:i+chunk], variant, damping)).max()))
    return mu


def two_grid_symbol(params, theta, variant='economic', damping=0.65, nu1=1, nu2=1,
                    coarse='rediscretized'):
    """(N, 12, 12) two-grid error propagation symbol, plus a mask of valid θ.

    ``coarse='ideal'`` replaces the coarse-grid correction by the projection
    onto the three high harmonics.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    S = vanka_symbol_matrix(params, theta, variant, damping)
    if coarse == 'ideal':
        q = np.ones(12)
        q[0::4] = 0
        CGC = np.broadcast_to(np.diag(q).astype(complex), (N, 12, 12))
        valid = np.ones(N, dtype=bool)
    else:
        Ah, AH = operator_symbol_matrix(params, theta)
        R, P = transfer_symbols(theta)
        sv = np.linalg.svd(AH, compute_uv=False)
        valid = sv[:, -1] > 1e-10*sv[:, 0]
        AH_safe = np.where(valid[:, None, None], AH, np.eye(3))
        CGC = np.eye(12) - P @ np.linalg.solve(AH_safe, R @ Ah)
    TG = CGC
    for _ in range(nu1):
        TG = TG @ S
    for _ in range(nu2):
        TG = S @ TG
    return TG, valid


def _polish(fun, starts, lo, hi, step):
    """Locally maximize ``fun`` from each start inside the box ``[lo, hi]²``."""
    from scipy.optimize import minimize
    best = -np.inf
    for t0 in starts:
        res = minimize(lambda t: -fun(np.clip(t, lo, hi)), t0, method='Nelder-Mead',
                       options={'initial_simplex': t0 + step*np.array([[0, 0], [1, 0], [0, 1]]),
                                'xatol': 1e-6, 'fatol': 1e-10})
        best = max(best, -res.fun)
    return best


def two_grid_factor(params, variant='economic', damping=0.65, nu1=1, nu2=1,
                    sampling_step=0.01, coarse='rediscretized', chunk=8000, return_skipped=False,
                    refine=0):
    """``ρ_loc``: max spectral radius of the two-grid symbol over sampled ``T_low``.

    Frequencies where the coarse symbol is singular are skipped and logged.
    With ``refine > 0`` the largest sampled values are polished by a local
    search, which makes the result nearly independent of ``sampling_step``.
    """
    th = sample_low(sampling_step)
    radii = np.full(len(th), -np.inf)
    skipped = []
    for i in range(0, len(th), chunk):
        part = th[i:i+chunk]
        TG, valid = two_grid_symbol(params, part, variant, damping, nu1, nu2, coarse)
        if np.any(valid):
            radii[i:i+chunk][valid] = _spectral_radius(TG[valid])
        skipped.extend(map(tuple, part[~valid]))
    if skipped:
        log.info("skipped %d frequencies with singular coarse symbol", len(skipped))
    rho = max(float(radii.max()), 0.0)
    if refine and np.isfinite(rho):
        def fun(t):
            TG, valid = two_grid_symbol(params, t[None], variant, damping, nu1, nu2, coarse)
            return float(_spectral_radius(TG)[0]) if valid[0] else -np.inf
        starts = th[np.argsort(radii)[::-1][:refine]]
        rho = max(rho, _polish(fun, starts, -np.pi/2, np.pi/2, sampling_step/2))
    return (rho, skipped) if return_skipped else rho


def sweep(parameter, values, params, variant='economic', damping=0.65, nu1=1, nu2=1,
          sampling_step=0.01, refine=3):
    """Evaluate ``(value, μ_loc, ρ_loc, #skipped)`` along one parameter axis.

    ``parameter`` is one of ``beta``, ``w`` (damping), ``alpha``, ``omega`` or
    ``ppw``.
    """
    rows = []
    for v in values:
        p, w = params, damping
        if parameter == 'w':
            w = float(v)
        elif parameter == 'ppw':
            p = params.replace(omega=2*np.pi*np.sqrt(params.mu/params.rho)/(float(v)*params.h))
        elif parameter in ('beta', 'alpha', 'omega'):
            p = params.replace(**{parameter: float(v)})
        else:
            raise ValueError(f"cannot sweep over {parameter!r}")
        mu = smoothing_factor(p, variant, w, sampling_step)
        rho, skipped = two_grid_factor(p, variant, w, nu1, nu2, sampling_step, return_skipped=True,
                                       refine=refine)
        rows.append((float(v), mu, rho, len(skipped)))
    return rows


def write_sweep_csv(path, rows):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(r)
