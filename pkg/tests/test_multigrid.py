import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from elastmg.discretization import MixedOperator, assemble_sparse
from elastmg.direct import SchurDirectSolver, dof_coordinates, nested_dissection
from elastmg.discretization import assemble_schur_sparse
from elastmg.grid import FieldVector
from elastmg.krylov import fgmres
from elastmg.multigrid import (CoarsestConfig, as_preconditioner, build_hierarchy, cycle,
                               measure_convergence_factor)
from elastmg.smoothers import VankaConfig, VankaSmoother
from elastmg.transfer import coarsen_media, prolongation_matrix, restriction_matrix

from conftest import make_spec, random_vector


def _problem(dims=(16, 16), beta=2/3, alpha=0.5, seed=5, omega=None, ppw=10):
    # ``ppw`` points per shear wavelength for unit shear speed, with mild attenuation
    omega = omega if omega is not None else 2*np.pi*dims[-1]/ppw
    return make_spec(dims, beta, omega, alpha, gamma=0.05, seed=seed, lam=4.0)


def test_two_grid_cycle_matches_dense_composition(rng):
    spec = _problem((8, 8))
    cfg = VankaConfig('economic', 'lexicographic', 0.65)
    hier = build_hierarchy(spec, 2, cfg, 'lu')
    g = spec.grid
    A = assemble_sparse(spec)
    cs = spec.replace(grid=g.coarsen(), media=coarsen_media(spec.media, g))
    Ac = assemble_sparse(cs)
    R, P = restriction_matrix(g), prolongation_matrix(g)
    sm = VankaSmoother(MixedOperator(spec), cfg)
    x0, b = random_vector(g.ndof, rng), random_vector(g.ndof, rng)
    x = x0.copy()
    sm.sweep(x, b)
    x = x + P @ spsolve(Ac.tocsc(), R @ (b - A @ x))
    sm.sweep(x, b)
    np.testing.assert_allclose(hier.cycle(b, x0, 'two-grid'), x, rtol=1e-10, atol=1e-10)


def test_one_level_is_direct_solve(rng):
    spec = _problem((8, 8))
    b = random_vector(spec.grid.ndof, rng)
    for solver in ('lu', 'schur-lu'):
        x = build_hierarchy(spec, 1, coarsest=solver).cycle(b)
        assert np.linalg.norm(b - MixedOperator(spec).matvec(x)) < 1e-10*np.linalg.norm(b)


def test_schur_lu_coarsest_matches_lu(rng):
    spec = _problem((16, 8))
    b = random_vector(spec.grid.ndof, rng)
    x1 = build_hierarchy(spec, 2, coarsest='lu').cycle(b, kind='two-grid')
    x2 = build_hierarchy(spec, 2, coarsest='schur-lu').cycle(b, kind='two-grid')
    np.testing.assert_allclose(x1, x2, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize('kind', ['V', 'W', 'K'])
def test_cycles_reduce_residual(kind, rng):
    spec = _problem((32, 32), alpha=0.5, ppw=20)
    hier = build_hierarchy(spec, 3, VankaConfig('economic', 'lexicographic', 0.65))
    b = random_vector(spec.grid.ndof, rng)
    x = None
    for _ in range(12):
        x = hier.cycle(b, x, kind)
    assert np.linalg.norm(hier.residual(b, x)) < 1e-3*np.linalg.norm(b)


def test_w_cycle_red_black_full():
    spec = _problem((32, 16), alpha=0.5, ppw=20)
    hier = build_hierarchy(spec, 3, VankaConfig('full', 'red-black', 0.55))
    m = measure_convergence_factor(hier, 'W', rng=0, max_cycles=60)
    assert not m.diverged and m.factor < 0.6


def test_kaczmarz_coarsest_k_cycle(rng):
    spec = _problem((32, 32), alpha=0.5, ppw=20)
    ccfg = CoarsestConfig('kaczmarz', sweeps=10, cap=250, subdomains=2)
    hier = build_hierarchy(spec, 3, coarsest=ccfg)
    assert not hier.coarsest.exact
    b = random_vector(spec.grid.ndof, rng)
    res = fgmres(hier.fine.op.matvec, as_preconditioner(hier, 'K'), b, restart=5,
                 rel_tol=1e-8, max_iters=100)
    assert res.converged
    assert hier.coarsest.sweeps_used > 0


def test_preconditioned_fgmres_solves_unshifted_problem(rng):
    spec = _problem((32, 32), alpha=0.0, ppw=20)
    hier = build_hierarchy(spec.replace(shift_alpha=0.5), 2)
    b = random_vector(spec.grid.ndof, rng)
    M = as_preconditioner(hier, 'W')
    assert M.linear
    res = fgmres(MixedOperator(spec).matvec, M, b, restart=20, rel_tol=1e-8, max_iters=200)
    assert res.converged
    r = b - assemble_sparse(spec) @ res.x
    assert np.linalg.norm(r) <= 1.01e-8*np.linalg.norm(b)
    assert M.applications == res.iterations


def test_measure_convergence_factor_matches_history():
    spec = _problem((16, 16), alpha=0.5)
    hier = build_hierarchy(spec, 2)
    m = measure_convergence_factor(hier, 'two-grid', rng=1, tol=1e-8)
    assert 0 < m.factor < 1 and not m.diverged
    assert m.factor == pytest.approx(m.history[-1]**(1/m.cycles))
    assert m.history[-1] < 1e-8 or m.cycles == 300
    again = measure_convergence_factor(hier, 'two-grid', rng=1, tol=1e-8)
    assert again.factor == m.factor


def test_divergence_flagged():
    # unshifted, badly resolved Helmholtz: the two-grid method cannot converge
    spec = _problem((16, 16), alpha=0.0, omega=2*np.pi*16/4)
    m = measure_convergence_factor(build_hierarchy(spec, 2), 'two-grid', rng=0, max_cycles=80)
    assert m.diverged


def test_with_damping_reuses_cells():
    spec = _problem((16, 16))
    hier = build_hierarchy(spec, 2, VankaConfig('economic', 'lexicographic', 0.65))
    h2 = hier.with_damping(0.8)
    assert h2.smoother_config.damping == 0.8
    assert h2.levels[0].smoother.cells is hier.levels[0].smoother.cells
    assert h2.coarsest is hier.coarsest


def test_fieldvector_cycle_wrapper(rng):
    spec = _problem((8, 8))
    hier = build_hierarchy(spec, 2)
    b = FieldVector.random(spec.grid, rng)
    np.testing.assert_allclose(cycle(hier, 'W', b).data, hier.cycle(b.data, kind='W'))


def test_three_dimensional_hierarchy(rng):
    spec = make_spec((8, 8, 8), 2/3, 2*np.pi*8/10, 0.5, lam=4.0)
    hier = build_hierarchy(spec, 2, VankaConfig('economic', 'lexicographic', 0.65))
    b = random_vector(spec.grid.ndof, rng)
    x = None
    for _ in range(8):
        x = hier.cycle(b, x, 'V')
    assert np.linalg.norm(hier.residual(b, x)) < 1e-3*np.linalg.norm(b)


def test_hierarchy_validation():
    spec = _problem((12, 8))
    with pytest.raises(ValueError):
        build_hierarchy(spec, 4)
    with pytest.raises(ValueError):
        build_hierarchy(spec, 0)
    with pytest.raises(ValueError):
        CoarsestConfig('cholesky')
    hier = build_hierarchy(spec, 3)
    with pytest.raises(ValueError):
        hier.cycle(np.zeros(spec.grid.ndof), kind='two-grid')
    with pytest.raises(ValueError):
        hier.cycle(np.zeros(spec.grid.ndof), kind='F')


def test_single_precision_hierarchy(rng):
    spec = _problem((16, 16), alpha=0.5).replace(precision='single')
    hier = build_hierarchy(spec, 2)
    b = random_vector(spec.grid.ndof, rng)
    x = hier.cycle(b, kind='W')
    assert x.dtype == np.complex64
    M = as_preconditioner(hier)
    assert M(b).dtype == np.complex128


@pytest.mark.parametrize('precision', ['double', 'single'])
def test_schur_direct_solver(precision, rng):
    spec = _problem((16, 12), alpha=0.0)
    solver = SchurDirectSolver(spec, precision)
    b = random_vector(spec.grid.ndof, rng)
    x = solver(b)
    r = b - assemble_sparse(spec) @ x
    assert np.linalg.norm(r) < 1e-10*np.linalg.norm(b)
    if precision == 'single':
        assert solver.refinement_iterations >= 1
    with pytest.raises(ValueError):
        SchurDirectSolver(spec, 'half')


def test_nested_dissection_is_permutation():
    spec = _problem((20, 12))
    S = assemble_schur_sparse(spec)
    g = spec.grid
    coords = dof_coordinates(g, range(g.ndim))
    assert coords.shape == (g.n_u, 2)
    perm = nested_dissection(S, coords, leaf=16)
    assert np.array_equal(np.sort(perm), np.arange(g.n_u))


def test_zero_in_zero_out():
    spec = _problem((16, 16))
    hier = build_hierarchy(spec, 2)
    z = np.zeros(spec.grid.ndof, dtype=complex)
    assert not np.any(hier.cycle(z, z, 'W'))
    assert not np.any(as_preconditioner(hier, 'V')(z))


def test_v_preconditioner_linear_k_not(rng):
    spec = _problem((32, 32), ppw=20)
    b, c = random_vector(spec.grid.ndof, rng), random_vector(spec.grid.ndof, rng)
    a = 0.7 - 1.3j
    V = as_preconditioner(build_hierarchy(spec, 3), 'V')
    np.testing.assert_allclose(V(a*b + c), a*V(b) + V(c), rtol=1e-9, atol=1e-9)
    hk = build_hierarchy(spec, 3, coarsest=CoarsestConfig('kaczmarz'))
    K = as_preconditioner(hk, 'K')
    assert not K.linear
    assert np.linalg.norm(K(a*b + c) - a*K(b) - K(c)) > 1e-6*np.linalg.norm(K(c))


def test_w_needs_no_more_iterations_than_v(rng):
    spec = _problem((32, 32), alpha=0.0, ppw=20)
    b = random_vector(spec.grid.ndof, rng)
    its = {}
    for kind in ('V', 'W'):
        hier = build_hierarchy(spec.replace(shift_alpha=0.5), 3)
        res = fgmres(MixedOperator(spec).matvec, as_preconditioner(hier, kind), b, restart=20,
                     rel_tol=1e-6, max_iters=300)
        assert res.converged
        its[kind] = res.iterations
    assert its['W'] <= its['V']


def test_deterministic_iterates(rng):
    spec = _problem((16, 16))
    b = random_vector(spec.grid.ndof, rng)
    runs = [fgmres(MixedOperator(spec).matvec, as_preconditioner(build_hierarchy(spec, 2)), b,
                   rel_tol=1e-8).x for _ in range(2)]
    assert np.array_equal(runs[0], runs[1])


def test_exact_single_level_factor_is_zero():
    m = measure_convergence_factor(build_hierarchy(_problem((8, 8)), 1), 'W', rng=0)
    assert m.factor == pytest.approx(0.0, abs=1e-12)
