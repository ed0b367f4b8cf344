"""
Command-line driver: ``elastmg {solve,lfa,dispersion,measure-cf,bench}``.

Every command reads an optional JSON configuration (missing keys take their
defaults), writes CSV results to ``--out`` and stores the resolved
configuration next to them as ``<command>_config.json`` so any run can be
repeated from its output directory alone.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .grid import write_field, write_section_csv

__all__ = ['main', 'build_parser', 'write_rows']

log = logging.getLogger('elastmg')

CONFIG_TYPES = {
    'solve': ex.ExperimentConfig,
    'lfa': ex.LFASuiteConfig,
    'dispersion': ex.DispersionConfig,
    'measure-cf': ex.CFSuiteConfig,
    'bench': ex.BenchConfig,
}


def write_rows(path, columns, rows):
    """Write dict or tuple rows under a fixed header."""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns] if isinstance(r, dict) else list(r))
    return Path(path)


def _load_config(command, path, seed):
    data = json.loads(Path(path).read_text()) if path else {}
    cls = CONFIG_TYPES[command]
    if seed is not None and 'seed' in {f for f in cls.__dataclass_fields__}:
        data['seed'] = seed
    return cls.from_dict(data)


def _save_config(out, command, cfg, args):
    payload = {'command': command, 'seed': args.seed, 'config': cfg.to_dict()}
    path = out/f"{command.replace('-', '_')}_config.json"
    path.write_text(json.dumps(payload, indent=2, default=float))
    return path


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be positive")
    for var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
        os.environ[var] = str(n)
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def cmd_solve(cfg, out, args):
    row, x = ex.run_solve(cfg, return_solution=True)
    write_rows(out/'solve.csv', ex.SOLVE_COLUMNS, [row])
    if args.dump_fields:
        from .grid import StaggeredGrid
        grid = StaggeredGrid(cfg.dims, cfg.h)
        names = [f'u{k + 1}' for k in range(grid.ndim)] + ['p']
        for name, f in zip(names, grid.split(x)):
            write_field(out/f'field_{name}', f, grid.h, name)
    status = 'converged' if row['converged'] else 'NOT converged'
    print(f"{row['grid']} beta={row['beta']:.4g}: {row['iterations']} iterations, {status}")
    return 0


def cmd_lfa(cfg, out, args):
    for name, (cols, rows) in ex.run_lfa_suite(cfg).items():
        write_rows(out/f'{name}.csv', cols, rows)
        print(f"wrote {name}.csv ({len(rows)} rows)")
    return 0


def cmd_dispersion(cfg, out, args):
    rows, sections = ex.run_dispersion(cfg)
    write_rows(out/'dispersion.csv', ex.DISPERSION_COLUMNS, rows)
    for beta in cfg.betas:
        for ang in cfg.angles:
            cols = {'s': np.linspace(0.0, 1.0, cfg.npts)}
            for name in ('real', 'fine', 'coarse'):
                cols[name] = sections[beta, name][ang].real
            write_section_csv(out/f'section_b{beta:.3f}_a{ang:g}.csv', cols)
    for r in rows:
        if r['grid'] == 'coarse' and r['angle'] == cfg.angles[0]:
            print(f"beta={r['beta']:.3f}: m={r['mismatch']:.3f}")
    return 0


def cmd_measure_cf(cfg, out, args):
    rows = ex.run_cf_suite(cfg)
    write_rows(out/'measure_cf.csv', ex.CF_COLUMNS, rows)
    for r in rows:
        print(f"beta={r['beta']:.3f} alpha={r['alpha']:.2f}: rho_loc={r['rho_loc']:.3f} "
              f"c_f={r['c_f']:.3f}")
    return 0


def cmd_bench(cfg, out, args):
    rows = ex.run_bench(cfg, seed=args.seed or 0)
    write_rows(out/'bench.csv', ex.BENCH_COLUMNS, rows)
    for r in rows:
        print(f"{r['kernel']:>22s} {r['seconds']*1e3:10.2f} ms")
    return 0


COMMANDS = {
    'solve': cmd_solve,
    'lfa': cmd_lfa,
    'dispersion': cmd_dispersion,
    'measure-cf': cmd_measure_cf,
    'bench': cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog='elastmg', description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=CONFIG_TYPES[name].__doc__.strip().splitlines()[0])
        p.add_argument('--config', type=Path, help="JSON configuration file")
        p.add_argument('--out', type=Path, default=Path('.'), help="output directory")
        p.add_argument('--threads', type=int, help="cap on worker threads")
        p.add_argument('--seed', type=int, help="random seed (overrides the config)")
        p.add_argument('-v', '--verbose', action='count', default=0)
        if name == 'solve':
            p.add_argument('--dump-fields', action='store_true',
                           help="write the solution as raw binary fields with JSON headers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10*min(args.verbose, 2),
                        format='%(levelname)s %(name)s: %(message)s')
    _set_threads(args.threads)
    try:
        cfg = _load_config(args.command, args.config, args.seed)
    except (ValueError, TypeError, json.JSONDecodeError) as err:
        print(f"elastmg: invalid configuration: {err}", file=sys.stderr)
        return 2
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _save_config(out, args.command, cfg, args)
    return COMMANDS[args.command](cfg, out, args)


if __name__ == '__main__':
    sys.exit(main())
