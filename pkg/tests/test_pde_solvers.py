import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import cumulative_trapezoid

from spectral_core import (
    ConfigError, DomainError, Field1, Field4, GridMismatchError, divergence_residual, leray_project,
    oscillating_part, stratified_part,
)
from spectral_norms import hs_norm
from linear_stratified import PhysParams, propagate_semigroup
from pde_solvers import (
    InitialData, SolverConfig, SourceSeries, Trajectory, check_heat_energy, compute_D_eps,
    compute_G_tilde, compute_delta_eps, heat_trajectory, solve_full_stratif, solve_heat_1d,
    solve_limit_ns, solve_stokes_type, solve_wave,
)

EQUAL = PhysParams(1.0, 1.0, 0.1)


def _unit(f: Field4) -> Field4:
    return f * (np.sqrt(f.grid.volume) / hs_norm(f.coeffs, f.grid, 0.0))


def _limit_velocity(field):
    return _unit(stratified_part(field)).coeffs[:2]


def test_solver_config_validation():
    cfg = SolverConfig(dt=0.01, t_end=0.5)
    assert cfg.n_steps == 50
    assert cfg.step == pytest.approx(0.01)
    assert SolverConfig(dt=0.03, t_end=0.1).step == pytest.approx(0.1 / 4)
    with pytest.raises(ConfigError):
        SolverConfig(scheme='euler')
    with pytest.raises(ConfigError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(norms=('L2', 'nope'))


def test_trajectory_times_must_increase(field8):
    traj = Trajectory('x')
    traj.append(0.0, field8)
    with pytest.raises(DomainError):
        traj.append(0.0, field8)


def test_trajectory_csv(tmp_path, field8):
    traj = Trajectory('x')
    traj.append(0.0, field8, {'L2': 1.0}, 0.0)
    traj.append(0.5, field8, {'L2': 0.5}, 0.1)
    path = traj.to_csv(tmp_path / 'x.csv')
    lines = path.read_text().splitlines()
    assert lines[0] == 't,L2,monitor'
    assert lines[2] == '0.5,0.5,0.1'


def test_initial_data_rejects_mixed_pieces(field8, grid8):
    with pytest.raises(DomainError):
        InitialData(field8, Field4.zeros(grid8), Field1.zeros(grid8),
                    stratified_part(field8).coeffs[:2], Field1.zeros(grid8))
    data = InitialData.from_state(field8)
    assert_allclose(data.U0_eps.coeffs, field8.coeffs, atol=1e-14)
    assert_allclose(data.stokes_data().coeffs, oscillating_part(field8).coeffs, atol=1e-14)


def test_heat_single_mode(grid8):
    theta0 = Field1.from_samples(np.cos(3 * grid8.x3), grid8)
    out = solve_heat_1d(theta0, 0.7, 0.4)
    assert_allclose(out.physical(), np.exp(-0.7 * 9 * 0.4) * np.cos(3 * grid8.x3), atol=1e-13)
    with pytest.raises(DomainError):
        solve_heat_1d(theta0, 0.7, -1.0)


def test_heat_energy_inequality(grid8):
    theta0 = Field1.from_samples(np.random.default_rng(9).standard_normal(grid8.n[2]), grid8)
    for s in (0.0, 0.5):
        assert check_heat_energy(theta0, 0.5, np.linspace(0, 1, 41), s)['passed']


def test_limit_linear_decay(grid8, field8):
    v0 = _limit_velocity(field8)
    cfg = SolverConfig(dt=0.02, t_end=0.2, nonlinear=False, norms=('L2',))
    traj = solve_limit_ns(v0, 0.5, cfg, grid8)
    assert_allclose(traj.final.coeffs[:2], v0 * np.exp(-0.5 * grid8.xi2 * 0.2), atol=1e-13)
    assert np.all(traj.final.coeffs[2:] == 0)
    assert traj.checks['energy_balance']['monotone']


def test_limit_nonlinear_energy_decays(grid8, field8):
    traj = solve_limit_ns(_limit_velocity(field8), 1.0, SolverConfig(dt=0.02, t_end=0.2), grid8)
    check = traj.checks['energy_balance']
    assert check['monotone']
    assert check['max_relative_defect'] < 5e-2


def test_limit_needs_grid(field8):
    with pytest.raises(GridMismatchError):
        solve_limit_ns(_limit_velocity(field8), 1.0, SolverConfig())


def test_G_tilde_is_oscillating_and_divergence_free(grid8, field8):
    G = compute_G_tilde(_limit_velocity(field8), grid8)
    assert divergence_residual(G) < 1e-10
    assert np.all(G.theta == 0)
    assert np.linalg.norm(stratified_part(G).coeffs) < 1e-12 * np.linalg.norm(G.coeffs)


def test_source_interpolation(grid8, field8):
    src = SourceSeries(np.array([0.0, 1.0]), [Field4.zeros(grid8), field8])
    assert_allclose(src.at(0.25), 0.25 * field8.coeffs)
    with pytest.raises(DomainError):
        src.at(1.5)
    assert SourceSeries.zero(grid8).is_zero()
    with pytest.raises(DomainError):
        SourceSeries(np.array([0.0, 0.0]), [field8, field8])


def test_full_linear_run_matches_semigroup(field8):
    data = InitialData.from_state(_unit(field8))
    cfg = SolverConfig(dt=0.03, t_end=0.3, nonlinear=False)
    traj = solve_full_stratif(data, EQUAL, cfg)
    exact = propagate_semigroup(leray_project(data.combined()), 0.3, EQUAL)
    assert_allclose(traj.final.coeffs, exact.coeffs, atol=1e-10 * np.abs(exact.coeffs).max())


def test_full_run_energy_and_monitor(field8, grid8):
    theta = Field1.from_samples(0.3 * np.sin(grid8.x3), grid8)
    data = InitialData.from_state(_unit(field8), theta)
    traj = solve_full_stratif(data, EQUAL, SolverConfig(dt=0.02, t_end=0.2, snapshot_every=5))
    assert traj.times == pytest.approx([0.0, 0.1, 0.2])
    assert traj.checks['energy_inequality']['passed']
    assert traj.checks['blowup_monitor_finite']
    assert np.all(np.diff(traj.monitor) >= 0)
    assert 'L2' in traj.series


def test_monitor_integrates_difference_to_limit(field8, grid8):
    theta = Field1.from_samples(0.3 * np.sin(grid8.x3), grid8)
    data = InitialData.from_state(_unit(field8), theta)
    dt = 0.02
    traj = solve_full_stratif(data, EQUAL, SolverConfig(dt=dt, t_end=0.1, snapshot_every=1, nonlinear=False))
    U0 = leray_project(data.combined())
    with_limit, without_limit = [], []
    for n in range(6):
        t = n * dt
        U = propagate_semigroup(U0, t, EQUAL).coeffs
        ref = np.zeros_like(U)
        ref[3] = solve_heat_1d(theta, EQUAL.nuprime, t).embed().coeffs[3]
        without_limit.append(hs_norm(U - ref, grid8, 1.5) ** 2)
        ref[:2] = data.v0_h * np.exp(-EQUAL.nu * grid8.xi2 * t)
        with_limit.append(hs_norm(U - ref, grid8, 1.5) ** 2)
    expected = cumulative_trapezoid(with_limit, dx=dt, initial=0.0)
    assert_allclose(traj.monitor, expected, rtol=1e-8)
    assert traj.monitor[-1] < cumulative_trapezoid(without_limit, dx=dt)[-1]


def test_wave_without_source_is_free_flow(field8):
    osc = oscillating_part(_unit(field8))
    cfg = SolverConfig(dt=0.05, t_end=0.2, nonlinear=False)
    traj = solve_wave(osc, None, EQUAL, cfg)
    assert_allclose(traj.final.coeffs, propagate_semigroup(osc, 0.2, EQUAL).coeffs, atol=1e-12)


def test_stokes_estimate(field8):
    E0 = oscillating_part(_unit(field8))
    src = SourceSeries.constant(E0 * 0.5)
    traj = solve_stokes_type(E0, src, EQUAL, SolverConfig(dt=0.02, t_end=0.2, nonlinear=False))
    assert traj.checks['stokes_estimate']['passed']


def test_difference_chain(field8, grid8):
    data = InitialData.from_state(_unit(field8))
    cfg = SolverConfig(dt=0.02, t_end=0.1, snapshot_every=1)
    full = solve_full_stratif(data, EQUAL, cfg)
    limit = solve_limit_ns(data.v0_h, EQUAL.nu, cfg, grid8)
    theta = heat_trajectory(data.theta0_eps, EQUAL.nuprime, full.times)
    D = compute_D_eps(full, limit, theta)
    expected0 = data.combined().coeffs - data.limit_state().coeffs
    assert_allclose(D.snapshots[0].coeffs, expected0, atol=1e-14)
    assert set(D.series) >= {'L2', 'Linf', 'H0.5', 'stratified_L2'}

    wave = solve_wave(data.U0_osc, SourceSeries.from_limit(limit), EQUAL, cfg)
    delta = compute_delta_eps(D, wave)
    assert hs_norm(delta.snapshots[0].coeffs, grid8) < 1e-12

    short = solve_limit_ns(data.v0_h, EQUAL.nu, SolverConfig(dt=0.02, t_end=0.06, snapshot_every=1), grid8)
    with pytest.raises(GridMismatchError):
        compute_D_eps(full, short, theta)


@pytest.mark.slow
def test_layered_data_converges_to_limit(field8, grid8):
    data = InitialData.from_state(_unit(stratified_part(field8)))
    cfg = SolverConfig(dt=1e-3, t_end=0.2, snapshot_every=20)
    limit = solve_limit_ns(data.v0_h, EQUAL.nu, cfg, grid8)
    sizes = []
    for eps in (1e-1, 1e-3):
        full = solve_full_stratif(data, EQUAL.with_eps(eps), cfg)
        theta = heat_trajectory(data.theta0_eps, EQUAL.nuprime, full.times)
        D = compute_D_eps(full, limit, theta)
        sizes.append(max(D.series['L2']))
    assert sizes[0] > 0
    assert sizes[1] <= 0.1 * sizes[0]
