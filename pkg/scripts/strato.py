#!/usr/bin/env python3
"""
strato - Command-line entry for stratified Boussinesq experiments

Usage:
  python3 strato.py simulate   --config config/run.cfg [--out DIR] [--set key=value ...]
  python3 strato.py converge   --config config/desk_scenario.cfg [--compare-well] [--workers N]
  python3 strato.py dispersion --study {proptech|kernel|strichartz} [--out DIR] [--quick]
  python3 strato.py eigen      --xi 1,0.5,2 [--nu 1 --nuprime 1.2 --eps 0.01 --truncation 0.1,0.2]
  python3 strato.py verify     [--mutate lambda2_sign] [--out DIR]

Exit code 0 when the command ran to completion (verdicts live in meta.json),
1 when it could not run (bad config, domain error, I/O failure).
"""

import argparse
import csv
import json
import os
import sys

# Ensure we can import from scripts directory
sys.path.insert(0, os.path.dirname(__file__))

import numpy as np

from config_loader import OUT_DIR
from run_log import log, set_level, set_log_file
from spectral_core import ConfigError, StratoError, TruncationSpec
from experiment_config import ExperimentConfig
from linear_stratified import (
    PhysParams, assemble_symbol, check_remainder_bounds, mode_eigen_system, numeric_eigendecomposition,
    remainder_bounds,
)
from dispersion_lab import (
    dispersive_grid, kernel_decay_study, localized_packet, lower_bound_witness, measure_strichartz_scaling,
    phase_integral_upper_constant, sigma_decay_study,
)
from convergence_harness import (
    environment, print_study_report, run_convergence_study, run_simulation, write_meta,
)
from verify_suite import MUTATIONS, print_report, run_verify

STUDIES = ('proptech', 'kernel', 'strichartz')
# Band of the localized Strichartz data.
STRICHARTZ_BAND = TruncationSpec(1.0, 3.0)


def _log(level, message):
    log(level, 'strato', message)


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = pair.split('=', 1)
        out[key.strip()] = value
    return out


def _load(args) -> ExperimentConfig:
    overrides = _overrides(args.set)
    if args.out:
        overrides['out.dir'] = args.out
    return ExperimentConfig.load(args.config, overrides)


# =========================================================
# COMMANDS
# =========================================================
def cmd_simulate(args) -> int:
    config = _load(args)
    meta = run_simulation(config)
    check = meta['checks']['energy_inequality']
    print(f"✅ simulation finished: energy {check['initial']:.4e} -> max {check['max']:.4e}")
    print(f"   files: {', '.join(meta['files'].values())}")
    return 0


def cmd_converge(args) -> int:
    config = _load(args)
    result = run_convergence_study(config, compare_well=args.compare_well, workers=args.workers)
    print_study_report(result)
    return 0


def _write_rows(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['study', 'x', 'value'])
        for study, x, value in rows:
            writer.writerow([study, repr(float(x)), repr(float(value))])


def _proptech(quick: bool) -> tuple:
    sigmas = np.logspace(2, 6, 5) if quick else np.logspace(2, 6, 9)
    decay = sigma_decay_study(1.0, 10.0, sigmas)
    witness = lower_bound_witness((0.5, 1.0, 2.0), np.logspace(4, 5, 3) if quick else None)
    upper = phase_integral_upper_constant([0.5, 1.0], [0.0, 0.3, 0.7], [2.0, 4.0], [0.0, 1e2, 1e4])
    rows = [('sup_beta_I', s, v) for s, v in zip(decay['sigmas'], decay['values'])]
    rows += [('lower_bound_c0', a, c) for a, c in zip(witness['alphas'], witness['c0'])]
    meta = {'sigma_decay': decay, 'lower_bound': witness, 'upper_constant': upper,
            'passed': decay['passed'] and witness['passed'] and upper['stable']}
    return rows, meta


def _kernel(quick: bool) -> tuple:
    sigmas = np.logspace(1, 3, 5) if quick else None
    study = kernel_decay_study(1.0, sigmas)
    rows = [('sup_x3_kernel', s, v) for s, v in zip(study['sigmas'], study['values'])]
    return rows, {'kernel_decay': study, 'passed': study['passed']}


def _strichartz(config: ExperimentConfig, quick: bool) -> tuple:
    params = config.physics()
    eps_list = [0.1, 0.05, 0.02, 0.01] if quick else [1e-1, 1e-2, 1e-3, 1e-4]
    t_end = config['run.t_end']
    grid = dispersive_grid(STRICHARTZ_BAND, t_end, eps_list[-1], float(config['grid.L']))
    f0 = localized_packet(grid, STRICHARTZ_BAND, int(config['data.seed']), width=0.5)
    _log('INFO', f"Strichartz data on {grid.n}, vertical period {grid.L[2]:.1f}")
    cases = [('isotropic', 6.0, 4.0), ('anisotropic', float('inf'), 8.0)]
    rows, meta = [], {'cases': [], 'passed': True}
    for mode, index, p in cases:
        report = measure_strichartz_scaling(f0, params, eps_list, mode, index, p, t_end=t_end)
        rows += [(f"{mode}_p{p:g}_{index:g}", e, v) for e, v in zip(report['eps'], report['values'])]
        meta['cases'].append(report)
        meta['passed'] = meta['passed'] and report['passed']
    return rows, meta


def cmd_dispersion(args) -> int:
    out_dir = args.out or os.path.join(OUT_DIR, f"dispersion_{args.study}")
    os.makedirs(out_dir, exist_ok=True)
    set_log_file(os.path.join(out_dir, 'run.log'))
    try:
        if args.study == 'proptech':
            rows, meta = _proptech(args.quick)
        elif args.study == 'kernel':
            rows, meta = _kernel(args.quick)
        else:
            rows, meta = _strichartz(ExperimentConfig.load(args.config, _overrides(args.set)), args.quick)
        _write_rows(rows, os.path.join(out_dir, 'series.csv'))
        meta.update({'study': args.study, 'quick': args.quick, 'environment': environment()})
        write_meta(meta, out_dir)
    finally:
        set_log_file(None)
    print(f"{'✅' if meta['passed'] else '❌'} dispersion study '{args.study}' -> {out_dir}")
    return 0


def cmd_eigen(args) -> int:
    params = PhysParams(args.nu, args.nuprime, args.eps)
    if args.truncation is not None:
        spec = TruncationSpec.from_exponents(args.truncation[0], args.truncation[1], args.eps)
    elif args.r is not None and args.R is not None:
        spec = TruncationSpec(args.r, args.R)
    else:
        spec = None
    xi = np.array(args.xi, dtype=float)
    system = mode_eigen_system(xi, params, spec)
    oracle = numeric_eigendecomposition(assemble_symbol(xi, params))
    check = check_remainder_bounds(xi, params, spec)
    bounds = remainder_bounds(xi, params)
    out = {
        'xi': xi.tolist(),
        'params': params.describe(),
        'truncation': spec.describe() if spec is not None else None,
        'analytic': [[complex(z).real, complex(z).imag] for z in system.eigenvalues],
        'numeric': [[complex(z).real, complex(z).imag] for z in oracle.eigenvalues],
        'remainder_D': system.remainder,
        'condition': oracle.condition,
        'bounds': {name: {'bound': float(bound), 'value': float(bound) * check['max_ratio'][name],
                          'slack': float(bound) * (1.0 - check['max_ratio'][name])}
                   for name, bound in bounds.items()},
        'violations': len(check['violations']),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_verify(args) -> int:
    report = run_verify(args.mutate)
    print_report(report)
    if args.out:
        write_meta(report, args.out)
    return 0


# =========================================================
# PARSER
# =========================================================
def _floats(count: int):
    """argparse type for a comma-separated list of exactly `count` numbers."""
    def parse(text: str) -> tuple:
        try:
            values = tuple(float(x) for x in text.split(','))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got '{text}'")
        if len(values) != count:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got '{text}'")
        return values
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='strato', description='Stratified Boussinesq experiments')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARN or ERROR')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('--config', default=None, help='key=value run file (default config/run.cfg)')
        p.add_argument('--out', default=None, help='output directory (overrides out.dir)')
        p.add_argument('--set', action='append', metavar='KEY=VALUE', help='override one config key')
        return p

    with_config(sub.add_parser('simulate', help='one full run at params.eps')).set_defaults(fn=cmd_simulate)

    conv = with_config(sub.add_parser('converge', help='epsilon sweep with rate fits'))
    conv.add_argument('--compare-well', action='store_true', help='also run well-prepared data')
    conv.add_argument('--workers', type=int, default=None, help='process pool size')
    conv.set_defaults(fn=cmd_converge)

    disp = with_config(sub.add_parser('dispersion', help='stationary-phase and Strichartz studies'))
    disp.add_argument('--study', choices=STUDIES, required=True)
    disp.add_argument('--quick', action='store_true', help='reduced sweep ranges')
    disp.set_defaults(fn=cmd_dispersion)

    eig = sub.add_parser('eigen', help='eigenstructure at one wavevector')
    eig.add_argument('--xi', type=_floats(3), required=True, metavar='A,B,C')
    eig.add_argument('--nu', type=float, default=1.0)
    eig.add_argument('--nuprime', type=float, default=1.0)
    eig.add_argument('--eps', type=float, default=0.1)
    box = eig.add_mutually_exclusive_group()
    box.add_argument('--truncation', type=_floats(2), default=None, metavar='m,M',
                     help='C_{eps^m, eps^-M}')
    box.add_argument('--r', type=float, default=None, help='explicit radii, with --R')
    eig.add_argument('--R', type=float, default=None)
    eig.set_defaults(fn=cmd_eigen)

    ver = sub.add_parser('verify', help='run the invariant suite')
    ver.add_argument('--mutate', choices=MUTATIONS, default=None)
    ver.add_argument('--out', default=None)
    ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        return args.fn(args)
    except (StratoError, OSError) as e:
        _log('ERROR', f"{args.command} failed: {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
