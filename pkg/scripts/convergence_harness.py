#!/usr/bin/env python3
"""
Convergence Harness - Initial data, theoretical rates and the epsilon sweep
Runs the full stratified system against its limit for every eps of the sweep,
measures D_eps and delta_eps, fits log-log rates and persists series.csv + meta.json
"""

import csv
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime

import numpy as np
import scipy

from config_loader import WORKERS
from run_log import log, set_log_file
from spectral_core import (
    ConfigError, Field1, Field4, GridSpec, ResolutionError, StratoError,
    horizontal_leray, oscillating_part, random_field, save_snapshot, stratified_part, to_spectral,
)
from spectral_norms import hs_norm, profile_hs_norm, space_time_norm
from experiment_config import ExperimentConfig
from pde_solvers import (
    InitialData, SourceSeries, Trajectory, compute_D_eps, compute_delta_eps, heat_trajectory,
    leray_energy_monitor, solve_full_stratif, solve_limit_ns, solve_wave,
)
from dispersion_lab import fit_rate
from linear_stratified import epsilon_one

QUANTITIES = ('D', 'D_S', 'delta', 'W')
# Norms every study records on top of the configured list.
REQUIRED_NORMS = {'D': ('L2T:Linf',), 'D_S': ('L2T:L2',), 'delta': ('E0',)}
GATED = ('D', 'D_S', 'delta')
SERIES_HEADER = ['eps', 'quantity', 'norm', 'value']


def _log(level, message):
    log(level, 'convergence_harness', message)


# =========================================================
# INITIAL DATA
# =========================================================
def _band(grid: GridSpec) -> tuple:
    return 1.0, grid.xi_abs[grid.dealias_mask].max()


def _stream_velocity(grid: GridSpec, seed: int) -> np.ndarray:
    """Horizontal velocity grad_h^perp psi of a band-limited random stream function, unit L2."""
    rng = np.random.default_rng(seed)
    lo, hi = _band(grid)
    psi = to_spectral(rng.standard_normal(grid.shape), grid)
    psi = psi * grid.dealias_mask * (grid.xi_abs >= lo) * (grid.xi_abs <= hi) / np.maximum(grid.xi2, 1.0)
    v = np.stack([-1j * grid.xi[1] * psi, 1j * grid.xi[0] * psi])
    size = hs_norm(v, grid, 0.0)
    if size == 0:
        raise ResolutionError(f"no horizontal modes available at n={grid.n}")
    return v / size


def _random_profile(grid: GridSpec, seed: int, delta: float) -> Field1:
    """Band-limited vertical profile with |xi3|^{-(1/4 + delta)} decay, unit L2."""
    rng = np.random.default_rng(seed)
    f = Field1.from_samples(rng.standard_normal(grid.shape[2]), grid)
    a = np.abs(f.xi3)
    cutoff = a.max() * 2.0 / 3.0
    weight = np.where((a >= 1.0) & (a <= cutoff), np.maximum(a, 1.0) ** (-(0.25 + delta)), 0.0)
    out = Field1(grid, f.coeffs * weight)
    size = profile_hs_norm(out, 0.0)
    if size == 0:
        raise ResolutionError(f"no vertical modes available at n={grid.shape[2]}")
    return out * (1.0 / size)


def generate_initial_data(config: ExperimentConfig, grid: GridSpec, eps: float, recipe: str = None) -> InitialData:
    """Well- or ill-prepared data; every random piece is drawn from data.seed alone,
    so all members of a sweep share the same base fields."""
    recipe = recipe or config['data.recipe']
    seed = int(config['data.seed'])
    amp = float(config['data.amplitude'])
    delta = float(config['data.delta'])
    small = amp * eps ** float(config['data.alpha0'])

    v_s = amp * _stream_velocity(grid, seed)
    theta0 = _random_profile(grid, seed + 1, delta) * amp
    u0_s = np.zeros((4,) + grid.shape, dtype=complex)
    u0_s[:2] = v_s
    U0_S = Field4(grid, u0_s)
    if recipe == 'well':
        data = InitialData(U0_S, Field4.zeros(grid), Field1(grid, theta0.coeffs.copy()),
                           v_s.copy(), theta0, recipe='well')
        _log('DEBUG', f"well-prepared data at eps={eps:g}")
        return data

    v0_h = horizontal_leray(v_s - small * _stream_velocity(grid, seed + 2), grid)
    theta0_eps = theta0 + _random_profile(grid, seed + 3, delta) * small

    osc = oscillating_part(random_field(grid, seed + 4, _band(grid)))
    c0 = float(config['data.c0'])
    s = 0.5 + delta
    size = hs_norm(osc.coeffs, grid, s)
    if c0 > 0:
        if size == 0 or not np.isfinite(size):
            raise ResolutionError(f"no oscillating modes to carry the H^{s:g} target at n={grid.n}")
        osc = osc * (c0 * eps ** (-config.gamma) / size)
    else:
        osc = Field4.zeros(grid)
    data = InitialData(U0_S, osc, theta0_eps, v0_h, theta0, recipe='ill')
    _log('DEBUG', f"ill-prepared data at eps={eps:g}: |U0_osc|_H{s:g} = {hs_norm(osc.coeffs, grid, s):.4e}")
    return data


# =========================================================
# THEORETICAL REFERENCE RATES
# =========================================================
def K_of_q(q: float) -> float:
    """K(q) = min(6/q - 1, 1 - 2/q)^2 / (6/q - 1), for 2 < q < 6."""
    if not 2 < q < 6:
        raise ValueError(f"K(q) needs 2 < q < 6, got {q}")
    a, b = 6.0 / q - 1.0, 1.0 - 2.0 / q
    return min(a, b) ** 2 / a


def theoretical_exponents(delta: float, eta: float, alpha0: float, gamma: float = None,
                          equal_diffusion: bool = True, q: float = None, k: float = 0.99,
                          m: float = 1.0 / 259.0, M: float = 1.0 / 1554.0, nu_gap: float = None) -> dict:
    """Reference exponents of the convergence theorems; never used as gates."""
    notes = []
    # growth rate constant of ill-prepared data in the general convergence estimate
    gamma_th1 = delta * (1 - eta) / 2784.0
    gamma = gamma_th1 if gamma is None else gamma
    # K(q) peaks at q = 4
    q = 4.0 if q is None else q
    th1_ok = 0 < eta <= 0.5 and eta * delta <= 1.0 / 3.0 and 0 < delta <= 1
    if not th1_ok:
        notes.append('general-case rate: no theoretical guarantee outside eta in (0,1/2], eta delta <= 1/3')
    out = {
        'gamma_th1': gamma_th1,
        'gamma': gamma,
        'q': q,
        'q_data': 2.0 / (1.0 + delta),
        'strong_general': min(alpha0, delta * (1 - eta) / 3108.0, 1.0 / 9324.0) if th1_ok else None,
        'global_rate_equal_diffusion': 3.0 / 16.0,
        'm': m,
        'M': M,
    }
    try:
        kq = K_of_q(q)
        out['K_q'] = kq
        out['weak'] = kq / (544.0 if equal_diffusion else 640.0)
    except ValueError:
        out['K_q'] = out['weak'] = None
        notes.append(f"weak-solution rate: K(q) undefined at q={q:g}")
    if equal_diffusion:
        th2_ok = 0 < delta <= 0.125 and 0 < gamma < delta / 2 and 0 < k < 1
        if th2_ok:
            out['strong_equal_D'] = min(alpha0, k * (delta / 2 - gamma))
            out['strong_equal_delta'] = min(alpha0, delta / 2 - gamma)
        else:
            out['strong_equal_D'] = out['strong_equal_delta'] = None
            notes.append('equal-diffusion rate: no theoretical guarantee outside delta <= 1/8, 0 < gamma < delta/2')
    if nu_gap is not None and nu_gap > 0:
        out['eps_one'] = float((np.sqrt(2.0) / nu_gap) ** (1.0 / (1.0 - (3 * M + m))))
    else:
        out['eps_one'] = float('inf')
    out['notes'] = notes
    out['guaranteed'] = not notes
    return out


def exponents_for(config: ExperimentConfig) -> dict:
    params = config.physics()
    return theoretical_exponents(
        config['data.delta'], config['data.eta'], config['data.alpha0'], config.gamma,
        params.equal_diffusion, m=config['trunc.m'], M=config['trunc.M'],
        nu_gap=abs(params.nu - params.nuprime) or None)


# =========================================================
# ONE SWEEP MEMBER
# =========================================================
def _aligned(traj: Trajectory, times) -> Trajectory:
    """Snapshots of a finer trajectory at the given times."""
    out = Trajectory(traj.label)
    lookup = np.asarray(traj.times)
    for t in times:
        i = int(np.argmin(np.abs(lookup - t)))
        if abs(lookup[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise StratoError(f"{traj.label}: no snapshot at t={t}")
        out.append(t, traj.snapshots[i])
    return out


def _norm_rows(eps: float, quantity: str, traj: Trajectory, tokens, nu0: float) -> list:
    rows = []
    for token in tokens:
        value = space_time_norm(traj.snapshots, traj.times, token, nu0)
        rows.append([eps, quantity, token, float(value)])
    return rows


def _tokens_for(config: ExperimentConfig, quantity: str) -> list:
    tokens = list(config['norms'])
    for extra in REQUIRED_NORMS.get(quantity, ()):
        if extra not in tokens:
            tokens.append(extra)
    return tokens


def run_member(values: dict, eps: float, recipe: str = None) -> dict:
    """Full, limit, heat and wave runs at one eps; returns norm rows and checks."""
    config = ExperimentConfig(values, source='member')
    grid = config.grid()
    params = config.physics(eps)
    recipe = recipe or config['data.recipe']
    tag = 'D_well' if recipe == 'well' and config['data.recipe'] != 'well' else None
    started = time.time()
    data = generate_initial_data(config, grid, eps, recipe)
    solver = config.solver()

    full = solve_full_stratif(data, params, solver)
    limit_fine = solve_limit_ns(data.v0_h, params.nu, solver.every_step(), grid)
    limit = _aligned(limit_fine, full.times)
    theta = heat_trajectory(data.theta0_eps, params.nuprime, full.times)
    D = compute_D_eps(full, limit, theta)
    rows = []
    if tag:
        rows += _norm_rows(eps, tag, D, _tokens_for(config, 'D'), params.nu0)
        return {'eps': eps, 'recipe': recipe, 'rows': rows, 'status': 'completed',
                'runtime_s': time.time() - started, 'checks': {}}

    truncated = not params.equal_diffusion
    spec = config.truncation(eps) if truncated else None
    wave = solve_wave(data.U0_osc, SourceSeries.from_limit(limit_fine), params, solver,
                      truncated=truncated, spec=spec)
    delta = compute_delta_eps(D, wave)
    D_S = D.map(stratified_part, 'D_S')

    rows += _norm_rows(eps, 'D', D, _tokens_for(config, 'D'), params.nu0)
    rows += _norm_rows(eps, 'D_S', D_S, _tokens_for(config, 'D_S'), params.nu0)
    rows += _norm_rows(eps, 'delta', delta, _tokens_for(config, 'delta'), params.nu0)
    rows += _norm_rows(eps, 'W', wave, list(config['norms']), params.nu0)
    checks = {
        'energy_inequality': full.checks['energy_inequality']['passed'],
        'blowup_monitor_finite': full.checks['blowup_monitor_finite'],
        'limit_energy_defect': limit_fine.checks['energy_balance']['max_relative_defect'],
        'leray_monitor': leray_energy_monitor(D, data, params.nu0)['implied_constant'],
        'D0_L2': hs_norm(D.snapshots[0].coeffs, grid, 0.0),
    }
    out = {'eps': eps, 'recipe': recipe, 'rows': rows, 'status': 'completed',
           'runtime_s': time.time() - started, 'checks': checks}
    if config['out.snapshots']:
        out['snapshots'] = {'D': D.final, 'delta': delta.final}
    return out


def _safe_member(values: dict, eps: float, recipe: str = None) -> dict:
    try:
        return run_member(values, eps, recipe)
    except StratoError as e:
        return {'eps': eps, 'recipe': recipe, 'rows': [], 'status': 'failed',
                'error': f"{type(e).__name__}: {e}", 'checks': {}}


# =========================================================
# VERDICTS
# =========================================================
def read_series(path) -> list:
    rows = []
    with open(path, 'r', newline='') as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SERIES_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        for eps, quantity, token, value in reader:
            rows.append([float(eps), quantity, token, float(value)])
    return rows


def write_series(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SERIES_HEADER)
        for eps, quantity, token, value in rows:
            writer.writerow([repr(float(eps)), quantity, token, repr(float(value))])


def recompute_verdicts(rows_or_path) -> dict:
    """Verdicts from recorded numbers only: strict decrease along decreasing eps and positive slope."""
    rows = read_series(rows_or_path) if isinstance(rows_or_path, (str, os.PathLike)) else rows_or_path
    table = {}
    for eps, quantity, token, value in rows:
        table.setdefault((quantity, token), {})[float(eps)] = float(value)
    verdicts = {}
    for (quantity, token), by_eps in sorted(table.items()):
        eps = sorted(by_eps, reverse=True)
        values = [by_eps[e] for e in eps]
        entry = {'quantity': quantity, 'norm': token, 'eps': eps, 'values': values,
                 'gated': quantity in GATED}
        entry['decreasing'] = bool(all(b < a for a, b in zip(values, values[1:])))
        try:
            fit = fit_rate(eps, values)
            entry['fit'] = fit.describe()
            entry['positive_slope'] = fit.slope > 0
        except StratoError as e:
            entry['fit'] = None
            entry['positive_slope'] = False
            entry['fit_error'] = str(e)
        entry['passed'] = bool(entry['decreasing'] and entry['positive_slope'])
        verdicts[f"{quantity}:{token}"] = entry
    ill = {k[1]: v for k, v in table.items() if k[0] == 'D'}
    well = {k[1]: v for k, v in table.items() if k[0] == 'D_well'}
    comparison = {}
    for token, by_eps in well.items():
        if token in ill:
            shared = sorted(set(by_eps) & set(ill[token]), reverse=True)
            comparison[token] = bool(shared) and all(by_eps[e] <= ill[token][e] for e in shared)
    gated = [v['passed'] for v in verdicts.values() if v['gated']]
    return {
        'verdicts': verdicts,
        'well_beats_ill': comparison,
        'passed': bool(gated) and all(gated) and all(comparison.values()),
    }


# =========================================================
# STUDY
# =========================================================
def environment() -> dict:
    return {
        'python': sys.version.split()[0],
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'platform': platform.platform(),
        'timestamp': datetime.now().isoformat(timespec='seconds'),
    }


def write_meta(meta: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, 'meta.json')
    with open(path, 'w') as f:
        json.dump(meta, f, indent=2, default=str)
    return path


def run_convergence_study(config: ExperimentConfig, out_dir: str = None, compare_well: bool = False,
                          workers: int = None) -> dict:
    """Sweep eps, persist series.csv and meta.json, return the study result."""
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    set_log_file(os.path.join(out_dir, 'run.log'))
    workers = WORKERS if workers is None else max(1, int(workers))
    jobs = [(e, None) for e in config.eps_list]
    if compare_well and config['data.recipe'] == 'ill':
        jobs += [(e, 'well') for e in config.eps_list]
    _log('INFO', f"convergence study: {len(jobs)} runs on {config['grid.n']}^3, workers={workers}")
    started = time.time()
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                members = list(pool.map(_safe_member, [config.values] * len(jobs),
                                        [e for e, _ in jobs], [r for _, r in jobs]))
        else:
            members = [_safe_member(config.values, e, r) for e, r in jobs]

        rows = []
        for member in members:
            if member['status'] != 'completed':
                _log('ERROR', f"run at eps={member['eps']:g} aborted: {member['error']}")
                continue
            rows += member['rows']
            for name, snap in member.pop('snapshots', {}).items():
                save_snapshot(snap, os.path.join(out_dir, 'snapshots', f"{name}_eps{member['eps']:g}.field"))
        series_path = os.path.join(out_dir, 'series.csv')
        write_series(rows, series_path)
        verdict = recompute_verdicts(rows)
        complete = all(m['status'] == 'completed' for m in members)
        result = {
            'complete': complete,
            'passed': verdict['passed'] and complete,
            'verdicts': verdict['verdicts'],
            'well_beats_ill': verdict['well_beats_ill'],
            'theory': exponents_for(config),
            'members': [{k: v for k, v in m.items() if k != 'rows'} for m in members],
            'config': config.describe(),
            'environment': environment(),
            'runtime_s': time.time() - started,
            'series': series_path,
        }
        write_meta(result, out_dir)
        _log('INFO', f"study {'complete' if complete else 'INCOMPLETE'}, "
                     f"verdict {'PASS' if result['passed'] else 'FAIL'} ({result['runtime_s']:.1f}s)")
        return result
    finally:
        set_log_file(None)


def run_simulation(config: ExperimentConfig, out_dir: str = None) -> dict:
    """One eps = params.eps: full and limit trajectories plus D_eps series."""
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    set_log_file(os.path.join(out_dir, 'run.log'))
    try:
        grid = config.grid()
        params = config.physics()
        data = generate_initial_data(config, grid, params.eps)
        solver = config.solver()
        full = solve_full_stratif(data, params, solver)
        limit = _aligned(solve_limit_ns(data.v0_h, params.nu, solver.every_step(), grid), full.times)
        theta = heat_trajectory(data.theta0_eps, params.nuprime, full.times)
        D = compute_D_eps(full, limit, theta)
        paths = {
            'full': str(full.to_csv(os.path.join(out_dir, 'full.csv'))),
            'D': str(D.to_csv(os.path.join(out_dir, 'D.csv'))),
        }
        if config['out.snapshots']:
            paths['final'] = str(save_snapshot(full.final, os.path.join(out_dir, 'final.field')))
        meta = {
            'params': params.describe(),
            'grid': grid.describe(),
            'solver': solver.describe(),
            'checks': {'energy_inequality': full.checks['energy_inequality'],
                       'blowup_monitor_finite': full.checks['blowup_monitor_finite'],
                       'eps_one': epsilon_one(params, config['trunc.m'], config['trunc.M'])},
            'files': paths,
            'config': config.describe(),
            'environment': environment(),
        }
        write_meta(meta, out_dir)
        return meta
    finally:
        set_log_file(None)


def print_study_report(result: dict):
    print()
    print("=" * 60)
    print("STRATO - CONVERGENCE STUDY")
    print("=" * 60)
    status = "complete" if result['complete'] else "INCOMPLETE"
    print(f"\n  Runs: {len(result['members'])} ({status}), {result['runtime_s']:.1f}s")
    print("\n  📈 RATES (log-log slope in eps)")
    print("-" * 40)
    for key, v in result['verdicts'].items():
        mark = "✅" if v['passed'] else "❌"
        slope = f"{v['fit']['slope']:+.4f}" if v['fit'] else "n/a"
        gate = "" if v['gated'] else " (reported)"
        print(f"  {mark} {key}: slope {slope}, decreasing={v['decreasing']}{gate}")
    for token, ok in result['well_beats_ill'].items():
        print(f"  {'✅' if ok else '❌'} well-prepared <= ill-prepared in {token}")
    theory = result['theory']
    print("\n  📋 THEORY (reference only)")
    print("-" * 40)
    for key in ('strong_general', 'strong_equal_D', 'strong_equal_delta', 'weak', 'global_rate_equal_diffusion'):
        if theory.get(key) is not None:
            print(f"     {key}: {theory[key]:.6g}")
    for note in theory['notes']:
        print(f"     ⚠ {note}")
    print(f"\n  Verdict: {'PASS' if result['passed'] else 'FAIL'}")
    print(f"\n{'=' * 60}")


if __name__ == "__main__":
    cfg = ExperimentConfig.load(sys.argv[1] if len(sys.argv) > 1 else None)
    print_study_report(run_convergence_study(cfg))
