import numpy as np
import pytest
from numpy.testing import assert_allclose

from spectral_core import (
    ConfigError, DomainError, ResolutionError, TruncationSpec, divergence_residual, stratified_part,
)
from linear_stratified import PhysParams
from dispersion_lab import (
    G_MAX, PhaseIntegralSpec, check_heat_annulus, critical_point, dispersive_grid, eval_I, eval_I_alpha_beta,
    f_alpha, f_alpha_max, f_alpha_prime, fit_rate, kernel_decay_study, kernel_linf_bound, localized_packet,
    lower_bound_witness, measure_strichartz_scaling, phase_integral_upper_constant, sigma_decay_study,
    strichartz_exponent, sup_beta_I, vertical_reach,
)


def test_fit_rate_recovers_power_law():
    x = np.array([0.1, 0.05, 0.025, 0.0125])
    fit = fit_rate(x, 3.0 * x ** 0.5)
    assert fit.slope == pytest.approx(0.5)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.n_points == 4
    with pytest.raises(ConfigError):
        fit_rate([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        fit_rate([1.0, 2.0, 3.0], [1.0, 0.0, 2.0])


@pytest.mark.parametrize('alpha', [0.5, 1.0, 2.0])
def test_phase_profile_critical_point(alpha):
    xs = critical_point(alpha)
    assert f_alpha_prime(xs, alpha) == pytest.approx(0.0, abs=1e-14)
    assert f_alpha(xs, alpha) == pytest.approx(f_alpha_max(alpha))
    grid = np.linspace(0, 10 * alpha, 2001)
    assert f_alpha(grid, alpha).max() <= f_alpha_max(alpha) * (1 + 1e-12)
    assert f_alpha_max(1.0) == pytest.approx(G_MAX)


def test_phase_integral_domain():
    with pytest.raises(DomainError):
        PhaseIntegralSpec(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        PhaseIntegralSpec(1.0, 0.0, 10.0, -1.0)


def test_phase_integral_at_sigma_zero_is_length():
    assert eval_I_alpha_beta(PhaseIntegralSpec(1.0, 0.3, 10.0, 0.0)) == np.sqrt(99.0)


def test_phase_integral_nonincreasing_in_sigma():
    values = [eval_I_alpha_beta(PhaseIntegralSpec(1.0, 0.35, 4.0, s)) for s in (0.0, 1.0, 10.0, 1e2, 1e3, 1e4)]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_phase_integral_large_beta_limit():
    spec = PhaseIntegralSpec(1.0, 500.0, 4.0, 10.0)
    expected = spec.upper / (1 + 10.0 * 500.0 ** 2)
    assert eval_I_alpha_beta(spec) == pytest.approx(expected, rel=1e-2)


def test_sup_beta_consistent():
    best, beta = sup_beta_I(1.0, 10.0, 1e4)
    assert eval_I_alpha_beta(PhaseIntegralSpec(1.0, beta, 10.0, 1e4)) == pytest.approx(best, rel=1e-9)
    assert sup_beta_I(1.0, 10.0, 0.0) == (np.sqrt(99.0), f_alpha_max(1.0))


def test_sup_beta_scans_below_the_degenerate_band():
    full, beta = sup_beta_I(1.0, 10.0, 1e4)
    band, band_beta = sup_beta_I(1.0, 10.0, 1e4, around_critical=True)
    assert full > 3.0 * band
    assert 0.0 <= beta < band_beta
    for b in (0.05, 0.2, f_alpha_max(1.0)):
        assert eval_I_alpha_beta(PhaseIntegralSpec(1.0, b, 10.0, 1e4)) <= full * (1 + 1e-9)


@pytest.mark.slow
def test_sigma_decay_rate_is_one_quarter():
    study = sigma_decay_study(1.0, 10.0)
    assert study['sigmas'][0] == pytest.approx(1e2)
    assert study['sigmas'][-1] == pytest.approx(1e6)
    assert study['fit']['slope'] == pytest.approx(-0.25, abs=0.05)
    assert study['passed']
    assert all(b < a for a, b in zip(study['values'], study['values'][1:]))


@pytest.mark.slow
def test_sigma_decay_rate_on_five_point_window():
    study = sigma_decay_study(1.0, 10.0, np.logspace(2, 6, 5))
    assert study['fit']['slope'] == pytest.approx(-0.25, abs=0.05)


@pytest.mark.slow
def test_lower_bound_witness_scaling():
    report = lower_bound_witness((0.5, 1.0, 2.0), np.logspace(5, 6, 2))
    assert report['fit']['slope'] == pytest.approx(1.5, abs=0.1)
    assert min(report['c0']) > 0


def test_upper_constant_stable_on_small_lattice():
    report = phase_integral_upper_constant([1.0], [0.0, 0.3], [4.0], [0.0, 1e4])
    assert np.isfinite(report['coarse'])
    assert report['refined'] >= report['coarse']
    assert report['stable']


def test_kernel_respects_linf_envelope():
    params = PhysParams(1.0, 1.0, 0.01)
    spec = TruncationSpec(0.5, 1.5)
    bound = kernel_linf_bound(spec.R, spec.r, 0.3, 0.1, params)
    for xh in (0.6, 1.0, 2.0):
        for x3 in (0.0, 1.0, 5.0):
            assert abs(eval_I(xh, x3, 0.3, 0.1, 0.01, params, spec)) <= bound


def test_kernel_vanishes_outside_support():
    params = PhysParams(1.0, 1.0, 0.01)
    spec = TruncationSpec(0.5, 1.5)
    assert eval_I(3.0, 0.0, 0.1, 0.0, 0.01, params, spec) == 0
    assert eval_I(0.2, 0.0, 0.1, 0.0, 0.01, params, spec) == 0


def test_kernel_at_equal_times_is_real_cutoff_integral():
    params = PhysParams(1.0, 1.0, 0.01)
    spec = TruncationSpec(0.5, 1.5)
    value = eval_I(1.0, 0.0, 0.0, 0.0, 0.01, params, spec)
    assert abs(value.imag) < 1e-12
    assert value.real > 0


@pytest.mark.slow
def test_kernel_decays_in_sigma():
    study = kernel_decay_study(1.0, np.logspace(1, 3, 5))
    assert study['linf_bound_holds']
    assert study['fit']['slope'] < 0


def test_strichartz_exponents():
    iso = strichartz_exponent('isotropic', 6.0, 4.0)
    assert iso['exponent'] == pytest.approx(1.0 / 6.0)
    assert iso['p_max'] == pytest.approx(6.0)
    assert iso['admissible']
    aniso = strichartz_exponent('anisotropic', float('inf'), 8.0)
    assert aniso['exponent'] == pytest.approx(1.0 / 8.0)
    assert aniso['p_max'] == pytest.approx(8.0)
    assert strichartz_exponent('isotropic', 2.0, 4.0)['exponent'] == 0
    assert strichartz_exponent('isotropic', 4.0, 2.0, equal_diffusion=False)['exponent'] == pytest.approx(1.0 / 16)
    with pytest.raises(DomainError):
        strichartz_exponent('anisotropic', 2.0, 4.0)
    with pytest.raises(ValueError):
        strichartz_exponent('radial', 4.0, 2.0)


def test_strichartz_refuses_short_vertical_period(field8):
    params = PhysParams(1.0, 1.0, 0.1)
    with pytest.raises(ResolutionError):
        measure_strichartz_scaling(field8, params, [0.1, 0.05, 0.02, 0.01], 'isotropic', 6.0, 4.0,
                                   t_end=0.5, n_times=9)


def test_dispersive_grid_outruns_every_wave():
    band = TruncationSpec(1.0, 3.0)
    grid = dispersive_grid(band, 1.0, 1e-4)
    assert grid.L[2] >= 2 * vertical_reach(1.0, 1e-4, 1.0)
    assert grid.n[0] == grid.n[1] == 10
    kept = grid.xi_abs[grid.dealias_mask]
    assert kept.max() >= band.R
    assert vertical_reach(1.0, 1e-4, 2.0) == pytest.approx(G_MAX * 1e4 / 2.0)


def test_localized_packet_is_oscillating_and_centred():
    band = TruncationSpec(1.0, 3.0)
    grid = dispersive_grid(band, 0.5, 0.01)
    f = localized_packet(grid, band, seed=5, width=0.5)
    assert divergence_residual(f) < 1e-10
    assert np.linalg.norm(stratified_part(f).coeffs) < 1e-12 * np.linalg.norm(f.coeffs)
    u = f.physical()
    energy = np.sum(u ** 2, axis=(0, 1, 2))
    z = np.abs(grid.x3 - 0.5 * grid.L[2])
    assert energy[z < 5.0].sum() > 0.99 * energy.sum()


def test_strichartz_l2_has_no_gain():
    band = TruncationSpec(1.0, 3.0)
    grid = dispersive_grid(band, 0.05, 0.01)
    f0 = localized_packet(grid, band, seed=3, width=0.5)
    params = PhysParams(1.0, 1.0, 0.1)
    report = measure_strichartz_scaling(f0, params, [0.1, 0.05, 0.02, 0.01], 'isotropic', 2.0, 4.0,
                                        t_end=0.05, n_times=16)
    assert report['fit']['slope'] == pytest.approx(0.0, abs=1e-8)
    assert report['passed']
    with pytest.raises(ConfigError):
        measure_strichartz_scaling(f0, params, [0.1, 0.05], 'isotropic', 2.0, 4.0)


@pytest.fixture(scope='module')
def unfolded_packet():
    band = TruncationSpec(1.0, 3.0)
    grid = dispersive_grid(band, 1.0, 1e-4)
    return localized_packet(grid, band, seed=11, width=0.5)


@pytest.mark.slow
@pytest.mark.parametrize('mode, index, p', [('isotropic', 6.0, 4.0), ('anisotropic', float('inf'), 8.0)])
def test_strichartz_decay_in_eps(unfolded_packet, mode, index, p):
    params = PhysParams(0.05, 0.05, 0.1)
    report = measure_strichartz_scaling(unfolded_packet, params, [1e-1, 1e-2, 1e-3, 1e-4], mode, index, p,
                                        t_end=1.0)
    assert report['fit']['slope'] >= 0.7 / p
    assert report['passed']
    assert all(b < a for a, b in zip(report['values'], report['values'][1:]))


def test_heat_annulus_l2_ratio_at_most_one(field8):
    report = check_heat_annulus(1.0, 3.0, 2.0, [field8], np.linspace(0, 2, 9))
    assert report['max_ratio'] <= 1.0 + 1e-12
    assert report['passed']
    assert_allclose(report['constant'], report['max_ratio'] / 27.0)
