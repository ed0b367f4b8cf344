import csv

import numpy as np
import pytest

from elastmg.discretization import stencil_laplacian, stencil_mass
from elastmg.lfa import (SWEEP_COLUMNS, LFAParams, coarse_operator_symbol, harmonics, operator_symbol, smoothing_factor,
                         stencil_symbol, sweep, transfer_symbols, two_grid_factor, two_grid_symbol,
                         vanka_symbol, write_sweep_csv)
from elastmg.periodic import PeriodicTwoGrid, periodic_operator, periodic_transfers, plane_wave
from elastmg.smoothers import VankaConfig

N = 32


def _modes(n, theta):
    return [plane_wave(n, theta, c) for c in range(3)]


@pytest.mark.parametrize('beta', [0.5, 2/3, 1.0])
@pytest.mark.parametrize('k', [(1, 3), (5, 11), (16, 7), (-9, 4)])
def test_operator_symbol_matches_periodic_probe(beta, k):
    p = LFAParams(beta=beta, h=1/N, alpha=0.2, gamma=0.05)
    theta = 2*np.pi*np.array(k)/N
    A = periodic_operator(p, N)
    sym = operator_symbol(p, theta[None])[0]
    modes = _modes(N, theta)
    for c in range(3):
        ref = sum(sym[r, c]*modes[r] for r in range(3))
        assert np.abs(A @ modes[c] - ref).max() <= 1e-10*np.abs(ref).max()


@pytest.mark.parametrize('variant', ['economic', 'full'])
@pytest.mark.parametrize('k', [(16, 32), (10, 22), (-40, 6)])
def test_vanka_symbol_matches_periodic_sweep(variant, k):
    # away from the wrap-around seam the lexicographic sweep acts on a plane wave by its symbol
    n = 128
    p = LFAParams(beta=2/3, h=1/n, alpha=0.1)
    tg = PeriodicTwoGrid(p, n, VankaConfig(variant, 'lexicographic', 0.65))
    theta = 2*np.pi*np.array(k)/n
    S = vanka_symbol(p, theta[None], variant, 0.65)[0]
    modes = _modes(n, theta)
    for c in range(3):
        x = modes[c].copy()
        tg.sweep(x, np.zeros_like(x))
        X = x.reshape(3, n, n)
        for r in range(3):
            ratio = X[r]/modes[r].reshape(3, n, n)[r]
            centre = ratio[n//2 - 4:n//2 + 4, n//2 - 4:n//2 + 4]
            np.testing.assert_allclose(centre, S[r, c], atol=1e-10)


def test_transfer_symbols_match_periodic_transfers():
    n = 16
    R, P = periodic_transfers(n)
    theta = 2*np.pi*np.array([2, 3])/n
    Rs, Ps = transfer_symbols(theta[None])
    Rs, Ps = Rs[0], Ps[0]
    fine = [[plane_wave(n, t, c) for c in range(3)] for t in harmonics(theta)]
    coarse = [plane_wave(n//2, 2*theta, c) for c in range(3)]
    for a, ph in enumerate(fine):
        for c in range(3):
            # symbol columns are ordered component-major over the four harmonics
            col = 4*c + a
            ref = sum(Rs[r, col]*coarse[r] for r in range(3))
            assert np.abs(R @ ph[c] - ref).max() < 1e-12
    for c in range(3):
        ref = sum(Ps[4*r + a, c]*fine[a][r] for a in range(4) for r in range(3))
        assert np.abs(P @ coarse[c] - ref).max() < 1e-12


@pytest.mark.parametrize('beta, order, tol', [(2/3, 4.0, 0.3), (1.0, 2.0, 0.2), (0.5, 2.0, 0.2)])
@pytest.mark.parametrize('phi', [0.0, 0.4, np.pi/4])
def test_truncation_order(beta, order, tol, phi):
    # residual of the exact plane wave exp(ik·x) with |k| = omega in the scalar block
    k = 2.0
    direction = np.array([np.cos(phi), np.sin(phi)])
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    tau = []
    for h in hs:
        th = (k*h*direction)[None]
        L = stencil_symbol(stencil_laplacian(beta, 2, h), th)[0]
        M = stencil_symbol(stencil_mass(beta, 2, k, 0.0), th)[0]
        tau.append(abs(L - M))
    slopes = np.diff(np.log(tau))/np.diff(np.log(hs))
    assert np.all(np.abs(slopes - order) < tol)


def test_periodic_two_grid_agrees_with_lfa():
    n = 64
    p = LFAParams(beta=2/3, h=1/n, alpha=0.1)
    rho = two_grid_factor(p, 'economic', 0.65, sampling_step=0.05, refine=3)
    cf = PeriodicTwoGrid(p, n, VankaConfig('economic', 'lexicographic', 0.65)).convergence_factor()
    assert cf <= rho + 0.02
    assert cf >= rho - 0.1


@pytest.mark.parametrize('beta, w', [(2/3, 0.65), (1.0, 0.75)])
def test_ideal_coarse_correction_reproduces_smoothing_factor(beta, w):
    p = LFAParams(beta=beta, alpha=0.1)
    mu = smoothing_factor(p, 'economic', w, sampling_step=0.02)
    rho_ideal = two_grid_factor(p, 'economic', w, sampling_step=0.02, coarse='ideal')
    assert 0 < mu < 1
    assert rho_ideal == pytest.approx(mu**2, abs=0.01)


def test_operator_symbol_random_frequencies():
    rng = np.random.default_rng(7)
    p = LFAParams(beta=2/3, h=1/N, alpha=0.1, gamma=0.02)
    A = periodic_operator(p, N)
    for k in rng.integers(-N//2, N//2, size=(20, 2)):
        theta = 2*np.pi*k/N
        sym = operator_symbol(p, theta[None])[0]
        modes = _modes(N, theta)
        for c in range(3):
            ref = sum(sym[r, c]*modes[r] for r in range(3))
            assert np.abs(A @ modes[c] - ref).max() <= 1e-10*np.abs(ref).max()


def test_coarse_symbol_aliases():
    # the four harmonics of theta share one coarse frequency: equal spectra, equal magnitudes
    p = LFAParams(beta=2/3, alpha=0.1)
    theta = np.array([0.4, -1.1])
    base = coarse_operator_symbol(p, theta[None])[0]
    for t in harmonics(theta)[1:]:
        other = coarse_operator_symbol(p, t[None])[0]
        np.testing.assert_allclose(np.abs(other), np.abs(base), rtol=1e-12)
        np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(other)),
                                   np.sort_complex(np.linalg.eigvals(base)), rtol=1e-10)


def test_smoothing_factor_sampling_converged():
    p = LFAParams(beta=2/3, alpha=0.1)
    mu1 = smoothing_factor(p, 'economic', 0.65, sampling_step=0.02)
    mu2 = smoothing_factor(p, 'economic', 0.65, sampling_step=0.01)
    assert abs(mu1 - mu2) < 0.01


def test_ideal_coarse_correction_kills_low_harmonic():
    p = LFAParams()
    TG, valid = two_grid_symbol(p, np.array([[0.3, -0.2]]), coarse='ideal', nu1=0, nu2=0)
    assert valid.all()
    assert np.allclose(TG[0][0::4], 0)


def test_two_grid_factor_refine_only_increases():
    p = LFAParams(beta=1.0)
    r0 = two_grid_factor(p, damping=0.75, sampling_step=0.1)
    r1 = two_grid_factor(p, damping=0.75, sampling_step=0.1, refine=2)
    assert r1 >= r0


def test_from_ppw_roundtrip():
    p = LFAParams.from_ppw(7.5, h=1/256, mu=2.0, rho=0.5)
    assert p.points_per_wavelength == pytest.approx(7.5)
    assert LFAParams(h=1/100).points_per_wavelength == pytest.approx(10.0)


def test_unknown_variant():
    with pytest.raises(ValueError):
        vanka_symbol(LFAParams(), np.zeros((1, 2)), variant='diagonal')


def test_sweep_csv(tmp_path):
    rows = sweep('beta', [2/3, 1.0], LFAParams(), sampling_step=0.2, refine=0)
    path = tmp_path/'s.csv'
    write_sweep_csv(path, rows)
    with open(path, newline='') as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == SWEEP_COLUMNS == ('param', 'mu_loc', 'rho_loc', 'skipped_thetas')
    assert len(data) == 3
    assert float(data[1][0]) == pytest.approx(2/3)
    with pytest.raises(ValueError):
        sweep('lam', [1.0], LFAParams())
