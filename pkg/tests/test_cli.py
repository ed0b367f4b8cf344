import csv
import json

import numpy as np
import pytest

from elastmg import cli
from elastmg import experiments as ex
from elastmg.grid import read_field

GOLDEN_HEADERS = {
    'solve': ['problem', 'grid', 'beta', 'G_s', 'levels', 'cycle', 'alpha', 'w', 'iterations',
              'final_relres', 'converged', 'wall_time'],
    'lfa_sweep': ['param', 'mu_loc', 'rho_loc', 'skipped_thetas'],
    'lfa_settings': ['beta', 'omega', 'alpha', 'w', 'mu_loc2', 'rho_loc'],
    'measure_cf': ['beta', 'omega', 'alpha', 'w', 'rho_loc', 'c_f', 'c_f_bounded', 'mu_loc2'],
    'dispersion': ['beta', 'angle', 'grid', 'mismatch', 'phase_drift'],
    'bench': ['kernel', 'grid', 'beta', 'seconds'],
}


def _read(path):
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.reader(fh))


def _run(tmp_path, command, config, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg_path = tmp_path/f'{command}.json'
    cfg_path.write_text(json.dumps(config))
    out = tmp_path/command
    assert cli.main([command, '--config', str(cfg_path), '--out', str(out), *extra]) == 0
    return out


def test_schema_constants_are_stable():
    assert list(ex.SOLVE_COLUMNS) == GOLDEN_HEADERS['solve']
    assert list(ex.CF_COLUMNS) == GOLDEN_HEADERS['measure_cf']
    assert list(ex.DISPERSION_COLUMNS) == GOLDEN_HEADERS['dispersion']
    assert list(ex.SETTINGS_LFA_COLUMNS) == GOLDEN_HEADERS['lfa_settings']
    assert list(ex.BENCH_COLUMNS) == GOLDEN_HEADERS['bench']


@pytest.mark.parametrize('cls', [ex.ExperimentConfig, ex.LFASuiteConfig, ex.DispersionConfig,
                                 ex.CFSuiteConfig, ex.BenchConfig])
def test_config_json_roundtrip(cls):
    cfg = cls()
    again = cls.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ex.ExperimentConfig(ppw=2.0)
    with pytest.raises(ValueError):
        ex.ExperimentConfig(problem='marmousi')
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({'grid': [4, 4]})
    with pytest.raises(ValueError):
        ex.DispersionConfig(dims_real=(30, 16))
    with pytest.raises(ValueError):
        ex.LFASuiteConfig(suites=('gamma',))


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path/'bad.json'
    bad.write_text('{"ppw": 1.5}')
    assert cli.main(['solve', '--config', str(bad), '--out', str(tmp_path)]) == 2
    assert 'invalid configuration' in capsys.readouterr().err


SMALL_SOLVE = {'dims': [32, 16], 'ppw': 10, 'layer_width': 4, 'levels': 2, 'rel_tol': 1e-6}


def test_solve_command(tmp_path):
    out = _run(tmp_path, 'solve', SMALL_SOLVE, '--dump-fields', '--seed', '3')
    rows = _read(out/'solve.csv')
    assert rows[0] == GOLDEN_HEADERS['solve']
    row = dict(zip(rows[0], rows[1]))
    assert row['converged'] == 'True' and row['grid'] == '32x16'
    assert float(row['final_relres']) <= 1e-6
    saved = json.loads((out/'solve_config.json').read_text())
    assert saved['command'] == 'solve' and saved['config']['seed'] == 3
    u1, header = read_field(out/'field_u1')
    assert u1.shape == (33, 16) and header['field'] == 'u1'
    # the stored configuration alone reproduces the run
    cfg2 = tmp_path/'again.json'
    cfg2.write_text(json.dumps(saved['config']))
    out2 = tmp_path/'again'
    assert cli.main(['solve', '--config', str(cfg2), '--out', str(out2)]) == 0
    row2 = dict(zip(*_read(out2/'solve.csv')))
    for k in GOLDEN_HEADERS['solve'][:-1]:
        assert row2[k] == row[k]


def test_layered_problem_deterministic_with_seed():
    cfg = ex.ExperimentConfig(problem='layered-synthetic', dims=(32, 16), layer_width=4, seed=7)
    _, s1, b1 = ex.build_problem(cfg)
    _, s2, b2 = ex.build_problem(cfg)
    _, s3, _ = ex.build_problem(cfg.replace(seed=8))
    assert np.array_equal(s1.media.mu, s2.media.mu) and s1.omega == s2.omega
    assert not np.array_equal(s1.media.mu, s3.media.mu)
    assert np.array_equal(b1.data, b2.data)


def test_linear_media_ranges():
    cfg = ex.ExperimentConfig(problem='linear-media', dims=(64, 16), layer_width=4)
    _, spec, _ = ex.build_problem(cfg)
    m = spec.media
    assert 2 <= m.rho.min() and m.rho.max() <= 3
    assert 4 <= m.lam.min() and m.lam.max() <= 20
    assert 1 <= m.mu.min() and m.mu.max() <= 15
    # constant along x, monotone in depth
    assert np.allclose(m.mu, m.mu[:1])
    assert np.all(np.diff(m.mu[0]) >= 0)


def test_huge_shift_converges():
    row = ex.run_solve(ex.ExperimentConfig(dims=(16, 16), ppw=10, alpha=10.0, layer_width=2))
    assert row['converged']


def test_solve_reports_non_convergence():
    row = ex.run_solve(ex.ExperimentConfig(dims=(16, 16), ppw=10, layer_width=2, max_iters=2,
                                           rel_tol=1e-12))
    assert not row['converged'] and row['iterations'] == 2


def test_lfa_command(tmp_path):
    cfg = {'suites': ['beta', 'settings'], 'beta_values': [2/3, 1.0], 'sampling_step': 0.1,
           'refine': 0}
    out = _run(tmp_path, 'lfa', cfg)
    beta_rows = _read(out/'lfa_beta.csv')
    assert beta_rows[0] == GOLDEN_HEADERS['lfa_sweep'] and len(beta_rows) == 3
    settings = _read(out/'lfa_settings.csv')
    assert settings[0] == GOLDEN_HEADERS['lfa_settings']
    rho = [float(r[-1]) for r in settings[1:]]
    assert len(rho) == 6 and all(0 < r for r in rho)


def test_measure_cf_command_deterministic(tmp_path):
    cfg = {'n': 32, 'sampling_step': 0.1, 'settings': [[np.pi/5, 0.15]], 'bounded': True}
    out1 = _run(tmp_path/'a', 'measure-cf', cfg, '--seed', '5')
    out2 = _run(tmp_path/'b', 'measure-cf', cfg, '--seed', '5')
    r1, r2 = _read(out1/'measure_cf.csv'), _read(out2/'measure_cf.csv')
    assert r1[0] == GOLDEN_HEADERS['measure_cf']
    assert r1 == r2 and len(r1) == 3
    for r in r1[1:]:
        row = dict(zip(r1[0], map(float, r)))
        assert 0 < row['c_f'] < 1 and 0 < row['c_f_bounded'] < 1


def test_bench_command(tmp_path):
    out = _run(tmp_path, 'bench', {'dims': [16, 16], 'repeats': 1})
    rows = _read(out/'bench.csv')
    assert rows[0] == GOLDEN_HEADERS['bench']
    assert [r[0] for r in rows[1:]] == ['matvec', 'vanka_sweep', 'w_cycle', 'lfa_two_grid_symbols']
    assert all(float(r[-1]) > 0 for r in rows[1:])


SMALL_DISPERSION = {'betas': [2/3, 1.0], 'dims_real': [64, 32], 'omega': 8*np.pi,
                    'layer_width': 3, 'angles': [0, 45], 'npts': 50}


def test_dispersion_command(tmp_path):
    out = _run(tmp_path, 'dispersion', SMALL_DISPERSION)
    rows = _read(out/'dispersion.csv')
    assert rows[0] == GOLDEN_HEADERS['dispersion']
    assert len(rows) == 1 + 2*2*2
    sec = _read(out/'section_b0.667_a45.csv')
    assert sec[0] == ['s', 'real', 'fine', 'coarse'] and len(sec) == 51


def test_mismatch_and_drift_definitions():
    s = np.linspace(0, 1, 200)
    ref = np.exp(1j*(20*s + 0.3))
    assert ex.mismatch(ref.real, ref.real) == 0.0
    assert ex.mismatch(2*ref.real, ref.real) == pytest.approx(1.0)
    lagging = np.exp(1j*(18*s + 1.0))
    assert ex.phase_drift(lagging, ref, skip=0.0) == pytest.approx(-2.0)
    assert ex.phase_drift(ref*np.exp(0.5j), ref) == pytest.approx(0.0, abs=1e-12)


def test_identical_grids_give_zero_mismatch():
    cfg = ex.DispersionConfig(**{**SMALL_DISPERSION, 'betas': [2/3]})
    p = ex.solve_point_source((32, 16), 2/3, cfg)
    a = ex.dispersion_sections(p, 1/16, cfg.extent, cfg.angles, cfg.npts)
    b = ex.dispersion_sections(ex.solve_point_source((32, 16), 2/3, cfg), 1/16, cfg.extent,
                               cfg.angles, cfg.npts)
    for ang in cfg.angles:
        assert ex.mismatch(a[ang].real, b[ang].real) < 1e-12


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])
    args = cli.build_parser().parse_args(['bench', '--threads', '1'])
    assert args.threads == 1 and str(args.out) == '.'
