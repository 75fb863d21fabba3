import numpy as np
import pytest
from numpy.testing import assert_allclose

from spectral_core import (
    DomainError, GridSpec, TruncationSpec, decompose_stratified_oscillating, random_field, scalar_product,
    stratified_part, truncate,
)
from spectral_norms import hs_norm
from linear_stratified import (
    PhysParams, analytic_eigenvalues, analytic_eigenvalues_batch, apply_coupling, apply_projector, assemble_symbol,
    block_semigroup, check_remainder_bounds, eig_sorted, epsilon_one, in_validity_region, mode_eigen_system,
    numeric_eigendecomposition, oscillation_frequency, projector_norm_bounds, projector_p2, propagate_semigroup,
    remainder_closed_form, spectral_projector, symbol_batch,
)

UNEQUAL = PhysParams(1.0, 1.2, 0.01)
BOX = TruncationSpec(0.5, 4.0)


def _samples(count=40, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        xi = rng.uniform(-4, 4, 3)
        if np.hypot(xi[0], xi[1]) > 0.5 and np.linalg.norm(xi) < 4:
            out.append(xi)
    return np.array(out)


def test_params_validation():
    with pytest.raises(DomainError):
        PhysParams(nu=0.0)
    with pytest.raises(DomainError):
        PhysParams(eps=-1.0)
    p = PhysParams(2.0, 0.5, 0.1)
    assert p.nu0 == 0.5
    assert not p.equal_diffusion
    assert p.with_eps(0.2).eps == 0.2


def test_symbol_undefined_at_mean_mode():
    with pytest.raises(DomainError):
        assemble_symbol([0, 0, 0], PhysParams())


def test_equal_diffusion_spectrum():
    params = PhysParams(1.0, 1.0, 0.1)
    xi = np.array([1.0, 0.5, 2.0])
    lams, D = analytic_eigenvalues(xi, params)
    a2 = np.sum(xi ** 2)
    b = np.hypot(1.0, 0.5) / (0.1 * np.sqrt(a2))
    assert D == 0.0
    assert_allclose(lams, [0, -a2, -a2 + 1j * b, -a2 - 1j * b], atol=1e-12)
    oracle = numeric_eigendecomposition(assemble_symbol(xi, params))
    assert_allclose(oracle.eigenvalues, lams, atol=1e-9)
    assert not oracle.defective


def test_unequal_diffusion_remainder_matches_closed_form():
    xi = np.array([1.0, -0.7, 1.5])
    system = mode_eigen_system(xi, UNEQUAL, BOX)
    assert system.remainder == pytest.approx(float(remainder_closed_form(xi, UNEQUAL)), rel=1e-6)
    a2 = np.sum(xi ** 2)
    assert system.eigenvalues[2].real == pytest.approx(-0.5 * (1.0 + 1.2) * a2, rel=1e-12)
    assert system.eigenvalues[3] == np.conj(system.eigenvalues[2])


def test_validity_region():
    assert not in_validity_region([0, 0, 1], PhysParams())
    assert in_validity_region([1, 0, 1], PhysParams())
    assert not in_validity_region([1, 0, 1], UNEQUAL)
    assert in_validity_region([1, 0, 1], UNEQUAL, BOX)
    assert not in_validity_region([3, 3, 3], UNEQUAL, BOX)
    with pytest.raises(DomainError):
        analytic_eigenvalues([0.1, 0, 1], UNEQUAL, BOX)


def test_epsilon_one():
    assert epsilon_one(PhysParams(), 0.1, 0.1) == float('inf')
    e1 = epsilon_one(PhysParams(1.0, 2.0, 0.1), 0.1, 0.1)
    assert e1 == pytest.approx(np.sqrt(2.0) ** (1 / 0.6))
    with pytest.raises(DomainError):
        epsilon_one(PhysParams(), 0.4, 0.3)


def test_remainder_bounds_hold():
    report = check_remainder_bounds(_samples(), UNEQUAL, BOX)
    assert not report['trivial']
    assert report['violations'] == []
    assert report['oracle_gap'] < 1e-6
    assert check_remainder_bounds(_samples(5), PhysParams())['trivial']


def test_projectors_resolve_identity():
    xi = np.array([0.8, 1.1, -0.4])
    oracle = numeric_eigendecomposition(assemble_symbol(xi, UNEQUAL))
    assert_allclose(oracle.projectors.sum(axis=0), np.eye(4), atol=1e-10)
    P2 = projector_p2(xi)
    assert_allclose(P2 @ P2, P2, atol=1e-15)
    assert_allclose(spectral_projector(2, xi, UNEQUAL, BOX), P2)
    with pytest.raises(DomainError):
        projector_p2([0, 0, 1])


def test_semigroup_group_property(field8):
    params = PhysParams(1.0, 1.0, 0.05)
    one = propagate_semigroup(propagate_semigroup(field8, 0.1, params), 0.15, params)
    two = propagate_semigroup(field8, 0.25, params)
    assert_allclose(one.coeffs, two.coeffs, atol=1e-12 * np.abs(field8.coeffs).max())
    with pytest.raises(DomainError):
        propagate_semigroup(field8, -0.1, params)


def test_stratified_part_decays_like_heat(field8):
    params = PhysParams(0.7, 1.3, 0.05)
    fs = stratified_part(field8)
    out = propagate_semigroup(fs, 0.2, params)
    expected = fs.coeffs * np.exp(-0.7 * field8.grid.xi2 * 0.2)
    assert_allclose(out.coeffs, expected, atol=1e-12 * np.abs(fs.coeffs).max())


@pytest.mark.parametrize('params', [PhysParams(1.0, 1.0, 0.05), PhysParams(0.7, 1.3, 0.05),
                                    PhysParams(1.0, 30.0, 0.5)])
def test_block_semigroup_matches_propagator(field8, params):
    out = block_semigroup(field8, 0.2, params)
    ref = propagate_semigroup(field8, 0.2, params)
    assert_allclose(out.coeffs, ref.coeffs, atol=1e-10 * np.abs(field8.coeffs).max())
    assert_allclose(block_semigroup(field8, 0.0, params).coeffs, field8.coeffs)
    with pytest.raises(DomainError):
        block_semigroup(field8, -0.1, params)


def test_apply_projector_two_is_stratified_part(field8):
    params = PhysParams(1.0, 1.0, 0.1)
    assert_allclose(apply_projector(2, field8, params).coeffs, stratified_part(field8).coeffs)
    with pytest.raises(ValueError):
        apply_projector(5, field8, params)


def test_projector_norms_equal_diffusion(grid8):
    report = projector_norm_bounds(grid8, PhysParams(1.0, 1.0, 0.1))
    assert report['passed']
    assert report['bound'] == 1.0
    assert report['modes'] > 0


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.slow
def test_eigenstructure_on_thousand_wavevectors():
    xis = _samples(1000, seed=41)
    numeric, _, cond = eig_sorted(symbol_batch(xis, UNEQUAL))
    assert np.all(np.isfinite(cond))
    a2 = np.sum(xis ** 2, axis=1)
    pair = (-0.5 * (UNEQUAL.nu + UNEQUAL.nuprime) * a2
            + 1j * (oscillation_frequency(xis, UNEQUAL) - UNEQUAL.eps * remainder_closed_form(xis, UNEQUAL)))
    closed = np.stack([np.zeros_like(pair), -UNEQUAL.nu * a2 + 0j, pair, np.conj(pair)], axis=1)
    scale = np.abs(numeric).max(axis=1, keepdims=True)
    assert np.max(np.abs(closed - numeric) / scale) < 1e-9
    lams, _ = analytic_eigenvalues_batch(xis, UNEQUAL)
    assert np.max(np.abs(lams - numeric) / scale) < 1e-9
    assert_allclose(lams[:, 3], np.conj(lams[:, 2]), rtol=1e-12)
    assert_allclose(numeric[:, 2].real, numeric[:, 3].real, rtol=1e-9)
    assert_allclose(numeric[:, 2].real, -0.5 * (UNEQUAL.nu + UNEQUAL.nuprime) * a2, rtol=1e-9)
    report = check_remainder_bounds(xis, UNEQUAL, BOX)
    assert report['violations'] == []


@pytest.mark.slow
def test_projector_identities_on_hundred_fields():
    grid = GridSpec.cube(32)
    spec = TruncationSpec(1.0, 8.0)
    xi = np.moveaxis(grid.xi, 0, -1).reshape(-1, 3)
    live = np.flatnonzero(grid.xih2.reshape(-1) > 0)
    p2 = np.zeros((xi.shape[0], 4, 4), dtype=complex)
    for n in live:
        p2[n] = projector_p2(xi[n])
    worst = 0.0
    for seed in range(100):
        f = random_field(grid, seed)
        fs, fo = decompose_stratified_oscillating(f)
        closed = np.einsum('nij,nj->ni', p2, f.coeffs.reshape(4, -1).T).T.reshape(f.coeffs.shape)
        worst = max(worst, _rel(closed, fs.coeffs), _rel(stratified_part(fs).coeffs, fs.coeffs),
                    np.linalg.norm(apply_coupling(fs).coeffs) / np.linalg.norm(f.coeffs))
        for s in (0.0, 0.5):
            cross = abs(scalar_product(fs.coeffs, fo.coeffs, grid, s))
            worst = max(worst, cross / (hs_norm(fs.coeffs, grid, s) * hs_norm(fo.coeffs, grid, s)))
        g = truncate(f, spec)
        total = sum(apply_projector(k, g, UNEQUAL, spec).coeffs for k in (1, 2, 3, 4))
        worst = max(worst, _rel(total, g.coeffs))
    assert worst < 1e-10
