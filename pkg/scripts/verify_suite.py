#!/usr/bin/env python3
"""
Verify Suite - Named invariants of every strato component, run on small grids
Each check returns its measured slack; a failing or crashing check is recorded, never raised.
"""

import sys
import time
from unittest import mock

import numpy as np

import linear_stratified
from run_log import log
from spectral_core import (
    ConfigError, Field1, Field4, GridSpec, TruncationSpec,
    decompose_stratified_oscillating, divergence_residual, dyadic_blocks, dyadic_range, leray_project,
    low_frequency_cutoff, random_field, scalar_product, stratified_part, to_physical, to_spectral,
    vorticity,
)
from spectral_norms import hs_norm, lebesgue_norm
from linear_stratified import (
    PhysParams, analytic_eigenvalues_batch, apply_coupling, check_remainder_bounds, divergence_free_basis,
    eig_sorted, get_propagator, oscillation_frequency, projector_norm_bounds, projector_p2,
    propagate_semigroup, remainder_closed_form, symbol_batch,
)
from pde_solvers import (
    InitialData, SolverConfig, SourceSeries, check_heat_energy, compute_G_tilde, richardson_order,
    solve_full_stratif, solve_heat_1d, solve_limit_ns, solve_stokes_type,
)
from boussinesq_bridge import boussinesq_to_stratif, stationary_residual, stratif_to_boussinesq
from dispersion_lab import (
    PhaseIntegralSpec, check_heat_annulus, dispersive_grid, eval_I, eval_I_alpha_beta, kernel_linf_bound,
    localized_packet, measure_strichartz_scaling, strichartz_exponent,
)
from convergence_harness import K_of_q
from experiment_config import parse_lines

MUTATIONS = ('lambda2_sign',)
GRID = GridSpec.cube(8)
EIGEN_PARAMS = PhysParams(1.0, 1.2, 0.01)
EIGEN_SPEC = TruncationSpec(0.5, 4.0)

_CHECKS = []


def _log(level, message):
    log(level, 'verify_suite', message)


def invariant(suite: str, name: str):
    def register(fn):
        _CHECKS.append((suite, name, fn))
        return fn
    return register


def _rel(a, b) -> float:
    scale = np.linalg.norm(b)
    gap = np.linalg.norm(np.asarray(a) - np.asarray(b))
    return float(gap / scale) if scale > 0 else float(gap)


def _result(value: float, limit: float, **detail) -> dict:
    """Pass when value <= limit; slack = limit - value."""
    return {'passed': bool(value <= limit), 'value': float(value), 'slack': float(limit - value), **detail}


def _field(seed: int = 0, grid: GridSpec = GRID) -> Field4:
    return random_field(grid, seed)


def _eigen_samples(count: int = 200, seed: int = 11) -> np.ndarray:
    """Wavevectors with 0.5 < |xi_h| and |xi| < 4."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        xi = rng.uniform(-4, 4, 3)
        if np.hypot(xi[0], xi[1]) > 0.5 and np.linalg.norm(xi) < 4:
            out.append(xi)
    return np.array(out)


# =========================================================
# SPECTRAL CORE
# =========================================================
@invariant('core', 'transform_roundtrip')
def _transform_roundtrip():
    u = np.random.default_rng(1).standard_normal((4,) + GRID.shape)
    return _result(_rel(to_physical(to_spectral(u, GRID), GRID), u), 1e-13)


@invariant('core', 'parseval_l2')
def _parseval():
    f = _field(2)
    return _result(abs(hs_norm(f.coeffs, GRID, 0.0) - lebesgue_norm(f.coeffs, GRID, 2.0))
                   / hs_norm(f.coeffs, GRID, 0.0), 1e-12)


@invariant('core', 'leray_divergence_free')
def _leray_div():
    u = Field4(GRID, to_spectral(np.random.default_rng(3).standard_normal((4,) + GRID.shape), GRID))
    return _result(divergence_residual(leray_project(u)), 1e-12)


@invariant('core', 'leray_idempotent')
def _leray_idem():
    f = _field(4)
    return _result(_rel(leray_project(f).coeffs, f.coeffs), 1e-13)


@invariant('core', 'decomposition_sums_to_field')
def _decomposition_sum():
    f = _field(5)
    fs, fo = decompose_stratified_oscillating(f)
    return _result(_rel((fs + fo).coeffs, f.coeffs), 1e-14)


@invariant('core', 'oscillating_part_vorticity_free')
def _osc_vorticity():
    f = _field(6)
    _, fo = decompose_stratified_oscillating(f)
    return _result(np.linalg.norm(vorticity(fo)) / np.linalg.norm(vorticity(f)), 1e-12)


@invariant('core', 'stratified_part_carries_vorticity')
def _strat_vorticity():
    f = _field(7)
    return _result(_rel(vorticity(stratified_part(f)), vorticity(f)), 1e-12)


def _orthogonality(s: float) -> dict:
    f = _field(8)
    fs, fo = decompose_stratified_oscillating(f)
    cross = abs(scalar_product(fs.coeffs, fo.coeffs, GRID, s))
    scale = hs_norm(fs.coeffs, GRID, s) * hs_norm(fo.coeffs, GRID, s)
    return _result(cross / scale, 1e-10)


@invariant('core', 'stratified_oscillating_orthogonal_L2')
def _ortho0():
    return _orthogonality(0.0)


@invariant('core', 'stratified_oscillating_orthogonal_H1/2')
def _ortho_half():
    return _orthogonality(0.5)


@invariant('core', 'dyadic_blocks_sum_to_identity')
def _dyadic_sum():
    f = _field(9)
    total = sum(block.coeffs for _, block in dyadic_blocks(f))
    return _result(_rel(total, f.coeffs), 1e-12)


@invariant('core', 'low_frequency_partition')
def _low_partition():
    f = _field(10)
    j_min, _ = dyadic_range(GRID)
    J = 1
    total = sum(block.coeffs for j, block in dyadic_blocks(f) if j <= J)
    return _result(_rel(total, low_frequency_cutoff(f, J + 1).coeffs), 1e-12, j_min=j_min)


# =========================================================
# EIGENSTRUCTURE (mutation target)
# =========================================================
def _eigen_pair():
    xis = _eigen_samples()
    lam_a, _ = analytic_eigenvalues_batch(xis, EIGEN_PARAMS)
    lam_n, _, _ = eig_sorted(symbol_batch(xis, EIGEN_PARAMS))
    return xis, lam_a, lam_n


@invariant('eigen', 'lambda1_zero')
def _lambda1():
    xis, lam_a, lam_n = _eigen_pair()
    scale = np.sum(xis ** 2, axis=-1)
    return _result(float(np.max(np.abs(lam_n[:, 0] - lam_a[:, 0]) / scale)), 1e-9)


@invariant('eigen', 'lambda2_viscous')
def _lambda2():
    xis, lam_a, lam_n = _eigen_pair()
    return _result(float(np.max(np.abs(lam_n[:, 1] - lam_a[:, 1]) / np.abs(lam_n[:, 1]))), 1e-9)


@invariant('eigen', 'lambda3_lambda4_conjugate')
def _conjugate():
    _, lam_a, lam_n = _eigen_pair()
    gap = np.abs(lam_n[:, 3] - np.conj(lam_n[:, 2])) / np.abs(lam_n[:, 2])
    analytic = np.abs(lam_a[:, 2] - lam_n[:, 2]) / np.abs(lam_n[:, 2])
    return _result(float(max(gap.max(), analytic.max())), 1e-9)


@invariant('eigen', 'pair_real_part')
def _real_part():
    xis, _, lam_n = _eigen_pair()
    expected = -0.5 * (EIGEN_PARAMS.nu + EIGEN_PARAMS.nuprime) * np.sum(xis ** 2, axis=-1)
    return _result(float(np.max(np.abs(lam_n[:, 2].real - expected) / np.abs(expected))), 1e-9)


@invariant('eigen', 'remainder_bounds')
def _remainder():
    report = check_remainder_bounds(_eigen_samples(100), EIGEN_PARAMS, EIGEN_SPEC)
    worst = max(report['max_ratio'].values())
    return {'passed': not report['violations'] and report['oracle_gap'] < 1e-6,
            'value': worst, 'slack': 1.0 - worst, 'oracle_gap': report['oracle_gap']}


@invariant('eigen', 'pair_frequency_closed_form')
def _frequency():
    xis, _, lam_n = _eigen_pair()
    b = oscillation_frequency(xis, EIGEN_PARAMS)
    expected = b - EIGEN_PARAMS.eps * remainder_closed_form(xis, EIGEN_PARAMS)
    return _result(float(np.max(np.abs(lam_n[:, 2].imag - expected) / b)), 1e-9)


# =========================================================
# PROJECTORS AND SEMIGROUP
# =========================================================
EQUAL = PhysParams(1.0, 1.0, 0.1)


@invariant('projectors', 'projectors_sum_to_identity')
def _projector_sum():
    prop = get_propagator(GRID, EQUAL)
    xi = np.moveaxis(GRID.xi, 0, -1).reshape(-1, 3)[prop.live_idx[prop.eigen]]
    Q = divergence_free_basis(xi)
    total = prop.proj[prop.eigen].sum(axis=1)
    return _result(float(np.max(np.abs(total @ Q - Q))), 1e-10)


@invariant('projectors', 'p2_closed_form')
def _p2_closed():
    f = _field(12)
    xi = np.moveaxis(GRID.xi, 0, -1).reshape(-1, 3)
    flat = f.coeffs.reshape(4, -1)
    out = np.zeros_like(flat)
    for n in np.flatnonzero(GRID.xih2.reshape(-1) > 0):
        out[:, n] = projector_p2(xi[n]) @ flat[:, n]
    return _result(_rel(out.reshape(f.coeffs.shape), stratified_part(f).coeffs), 1e-12)


@invariant('projectors', 'p2_idempotent')
def _p2_idem():
    f = stratified_part(_field(13))
    return _result(_rel(stratified_part(f).coeffs, f.coeffs), 1e-12)


@invariant('projectors', 'coupling_annihilates_stratified')
def _coupling():
    f = _field(14)
    return _result(np.linalg.norm(apply_coupling(stratified_part(f)).coeffs) / np.linalg.norm(f.coeffs), 1e-14)


@invariant('projectors', 'projector_norm_bounds')
def _projector_norms():
    report = projector_norm_bounds(GRID, EQUAL)
    worst = max(v['max_norm'] for v in report['projectors'].values())
    return {'passed': report['passed'], 'value': worst, 'slack': report['bound'] - worst}


@invariant('projectors', 'semigroup_group_property')
def _group():
    f = _field(15)
    one = propagate_semigroup(propagate_semigroup(f, 0.1, EQUAL), 0.2, EQUAL)
    two = propagate_semigroup(f, 0.3, EQUAL)
    return _result(_rel(one.coeffs, two.coeffs), 1e-12)


# =========================================================
# SOLVERS
# =========================================================
def _scaled_data(seed: int, rms: float = 1.0) -> InitialData:
    f = _field(seed)
    f = f * (rms * np.sqrt(GRID.volume) / hs_norm(f.coeffs, GRID, 0.0))
    return InitialData.from_state(f)


@invariant('solvers', 'heat_single_mode_exact')
def _heat_mode():
    k, nuprime, t = 3, 0.7, 0.4
    x3 = GRID.x3
    theta0 = Field1.from_samples(np.cos(k * x3), GRID)
    exact = np.exp(-nuprime * k ** 2 * t) * np.cos(k * x3)
    return _result(float(np.max(np.abs(solve_heat_1d(theta0, nuprime, t).physical() - exact))), 1e-12)


@invariant('solvers', 'heat_energy_inequality')
def _heat_energy():
    theta0 = Field1.from_samples(np.random.default_rng(16).standard_normal(GRID.n[2]), GRID)
    report = check_heat_energy(theta0, 0.5, np.linspace(0, 1, 41), s=0.0)
    return {'passed': report['passed'], 'value': report['lhs'], 'slack': report['slack']}


@invariant('solvers', 'linear_run_matches_semigroup')
def _linear_run():
    data = _scaled_data(17)
    cfg = SolverConfig(dt=0.03, t_end=0.3, nonlinear=False)
    traj = solve_full_stratif(data, EQUAL, cfg)
    exact = propagate_semigroup(leray_project(data.combined()), cfg.t_end, EQUAL)
    return _result(_rel(traj.final.coeffs, exact.coeffs), 1e-10)


@invariant('solvers', 'energy_inequality')
def _energy():
    traj = solve_full_stratif(_scaled_data(18), EQUAL, SolverConfig(dt=0.02, t_end=0.2))
    check = traj.checks['energy_inequality']
    return {'passed': check['passed'], 'value': check['max'], 'slack': check['initial'] - check['max']}


@invariant('solvers', 'blowup_monitor_finite')
def _monitor():
    traj = solve_full_stratif(_scaled_data(19), EQUAL, SolverConfig(dt=0.02, t_end=0.2))
    return {'passed': traj.checks['blowup_monitor_finite'], 'value': traj.monitor[-1], 'slack': 0.0}


@invariant('solvers', 'richardson_order')
def _richardson():
    order = richardson_order(_scaled_data(20), EQUAL, SolverConfig(dt=0.05, t_end=0.2, scheme='ifrk4'))
    return {'passed': bool(order >= 2.0), 'value': order, 'slack': order - 2.0}


def _limit_velocity(seed: int) -> np.ndarray:
    f = stratified_part(_field(seed))
    return f.coeffs[:2] * (np.sqrt(GRID.volume) / hs_norm(f.coeffs, GRID, 0.0))


@invariant('solvers', 'G_tilde_structure')
def _g_structure():
    G = compute_G_tilde(_limit_velocity(21), GRID)
    scale = np.linalg.norm(GRID.xi_abs * np.linalg.norm(G.coeffs, axis=0))
    worst = max(np.linalg.norm(vorticity(G)) / scale,
                np.linalg.norm(np.sum(GRID.xi * G.velocity, axis=0)) / scale,
                np.linalg.norm(stratified_part(G).coeffs) / np.linalg.norm(G.coeffs))
    return _result(worst, 1e-10)


def g_tilde_oracle(v_h: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Multiplier form (d1 d3^2 Delta^-1 Delta_h^-1, d2 d3^2 Delta^-1 Delta_h^-1, -d3 Delta^-1, 0)
    of sum_i d_i (v.grad_h v^i), sign-flipped to the P(grad_h pi0) convention."""
    mask = grid.dealias_mask
    v = to_physical(np.asarray(v_h) * mask, grid)
    xi = grid.xi
    source = np.zeros(grid.shape, dtype=complex)
    for i in range(2):
        for j in range(2):
            source -= xi[i] * xi[j] * to_spectral(v[i] * v[j], grid)
    source *= mask
    live = grid.xih2 > 0
    out = np.zeros((4,) + grid.shape, dtype=complex)
    denom = np.where(live, grid.xi2 * grid.xih2, 1.0)
    out[0] = np.where(live, -1j * xi[0] * xi[2] ** 2 / denom, 0.0) * source
    out[1] = np.where(live, -1j * xi[1] * xi[2] ** 2 / denom, 0.0) * source
    out[2] = np.where(live, 1j * xi[2] / np.where(live, grid.xi2, 1.0), 0.0) * source
    return -out


@invariant('solvers', 'G_tilde_multiplier_oracle')
def _g_oracle():
    v_h = _limit_velocity(22)
    return _result(_rel(compute_G_tilde(v_h, GRID).coeffs, g_tilde_oracle(v_h, GRID)), 1e-10)


@invariant('solvers', 'stokes_energy_estimate')
def _stokes():
    E0 = _field(23)
    source = SourceSeries.constant(_field(24) * 0.5)
    traj = solve_stokes_type(E0, source, EQUAL, SolverConfig(dt=0.02, t_end=0.2, nonlinear=False))
    check = traj.checks['stokes_estimate']
    return {'passed': check['passed'], 'value': check['lhs'][-1], 'slack': check['slack']}


@invariant('solvers', 'limit_energy_decay')
def _limit_energy():
    traj = solve_limit_ns(_limit_velocity(25), 1.0, SolverConfig(dt=0.02, t_end=0.2), GRID)
    check = traj.checks['energy_balance']
    return {'passed': check['monotone'], 'value': check['max_relative_defect'],
            'slack': 1.0 - check['max_relative_defect']}


# =========================================================
# BOUSSINESQ BRIDGE
# =========================================================
@invariant('bridge', 'stationary_solution_residual')
def _stationary():
    report = stationary_residual(PhysParams(1.0, 1.3, 0.05, 2.0))
    worst = max(report['momentum'], report['transport'])
    return _result(worst, 1e-12)


@invariant('bridge', 'change_of_variables_roundtrip')
def _roundtrip():
    params = PhysParams(1.0, 1.0, 0.05, 1.5)
    rng = np.random.default_rng(26)
    x3 = GRID.coords[2]
    V = rng.standard_normal((4,) + GRID.shape)
    P = rng.standard_normal(GRID.shape)
    U, Phi = boussinesq_to_stratif(V, P, x3, params)
    V2, P2 = stratif_to_boussinesq(U, Phi, x3, params)
    return _result(max(_rel(V2, V), _rel(P2, P)), 1e-12)


# =========================================================
# DISPERSION
# =========================================================
@invariant('dispersion', 'phase_integral_sigma_zero')
def _sigma_zero():
    spec = PhaseIntegralSpec(1.0, 0.3, 10.0, 0.0)
    return _result(abs(eval_I_alpha_beta(spec) - np.sqrt(99.0)), 0.0)


@invariant('dispersion', 'phase_integral_monotone_in_sigma')
def _monotone():
    values = [eval_I_alpha_beta(PhaseIntegralSpec(1.0, 0.35, 4.0, s)) for s in (0.0, 1.0, 10.0, 100.0, 1e3)]
    worst = max(b - a for a, b in zip(values, values[1:]))
    return _result(worst, 1e-9)


@invariant('dispersion', 'kernel_linf_envelope')
def _kernel_bound():
    params = PhysParams(1.0, 1.0, 0.01)
    spec = TruncationSpec(0.5, 1.5)
    bound = kernel_linf_bound(spec.R, spec.r, 0.3, 0.1, params)
    worst = max(abs(eval_I(xh, x3, 0.3, 0.1, 0.01, params, spec)) for xh in (0.6, 1.0, 2.0) for x3 in (0.0, 1.0, 5.0))
    return _result(worst, bound)


@invariant('dispersion', 'heat_annulus_l2_sharp')
def _annulus():
    report = check_heat_annulus(1.0, 3.0, 2.0, [_field(27), _field(28)], np.linspace(0, 2, 9))
    return _result(report['max_ratio'], 1.0 + 1e-12)


@invariant('dispersion', 'strichartz_no_gain_at_l2')
def _strichartz_l2():
    theory = strichartz_exponent('isotropic', 2.0, 4.0)
    band = TruncationSpec(1.0, 3.0)
    grid = dispersive_grid(band, 0.05, 0.01)
    f0 = localized_packet(grid, band, seed=29, width=0.5)
    report = measure_strichartz_scaling(f0, EQUAL, [0.1, 0.05, 0.02, 0.01], 'isotropic', 2.0, 4.0,
                                        t_end=0.05, n_times=16)
    slope = report['fit']['slope']
    return {'passed': theory['exponent'] == 0 and report['passed'], 'value': slope, 'slack': slope + 0.05}


# =========================================================
# HARNESS
# =========================================================
@invariant('harness', 'K_of_q_at_4')
def _kq():
    return _result(abs(K_of_q(4.0) - 0.5), 1e-15)


@invariant('harness', 'config_rejects_unknown_key')
def _unknown_key():
    try:
        parse_lines(['grid.nn = 8'])
    except ConfigError:
        return {'passed': True, 'value': 0.0, 'slack': 0.0}
    return {'passed': False, 'value': 1.0, 'slack': -1.0}


# =========================================================
# RUNNER
# =========================================================
def _lambda2_sign_flipped(xi2, params):
    return params.nu * xi2


def _run_checks(suites=None) -> list:
    results = []
    for suite, name, fn in _CHECKS:
        if suites and suite not in suites:
            continue
        started = time.time()
        try:
            entry = fn()
        except Exception as e:
            _log('ERROR', f"{suite}.{name} crashed: {type(e).__name__}: {e}")
            entry = {'passed': False, 'value': None, 'slack': None, 'error': f"{type(e).__name__}: {e}"}
        entry.update({'suite': suite, 'name': name, 'runtime_s': time.time() - started})
        entry['passed'] = bool(entry['passed'])
        results.append(entry)
    return results


def run_verify(mutate: str = None, suites=None) -> dict:
    """Run every registered invariant; `mutate` corrupts one formula to prove the suite notices."""
    if mutate is not None and mutate not in MUTATIONS:
        raise ConfigError(f"unknown mutation '{mutate}', expected one of {MUTATIONS}")
    started = time.time()
    if mutate == 'lambda2_sign':
        with mock.patch.object(linear_stratified, 'viscous_eigenvalue', _lambda2_sign_flipped):
            results = _run_checks(suites)
    else:
        results = _run_checks(suites)
    failed = [f"{r['suite']}.{r['name']}" for r in results if not r['passed']]
    report = {
        'mutate': mutate,
        'count': len(results),
        'passed': not failed,
        'failed': failed,
        'invariants': results,
        'runtime_s': time.time() - started,
    }
    _log('INFO', f"verify: {len(results) - len(failed)}/{len(results)} invariants hold"
                 + (f" (mutation {mutate})" if mutate else ""))
    return report


def print_report(report: dict):
    print()
    print("=" * 60)
    print("STRATO - INVARIANT REPORT")
    print("=" * 60)
    if report['mutate']:
        print(f"\n  ⚠ mutation active: {report['mutate']}")
    suite = None
    for r in report['invariants']:
        if r['suite'] != suite:
            suite = r['suite']
            print(f"\n  {suite.upper()}")
            print("-" * 40)
        mark = "✅" if r['passed'] else "❌"
        value = "crashed" if r.get('error') else f"value={r['value']:.3e} slack={r['slack']:+.3e}"
        print(f"  {mark} {r['name']}: {value}")
    held = report['count'] - len(report['failed'])
    print(f"\n  {held}/{report['count']} invariants hold ({report['runtime_s']:.1f}s)")
    print(f"\n{'=' * 60}")


if __name__ == "__main__":
    result = run_verify(sys.argv[1] if len(sys.argv) > 1 else None)
    print_report(result)
