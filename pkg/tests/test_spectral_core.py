import numpy as np
import pytest
from numpy.testing import assert_allclose

from spectral_core import (
    DomainError, Field1, Field4, GridMismatchError, GridSpec, TruncationError, TruncationSpec,
    chi, decompose_stratified_oscillating, divergence_residual, dyadic_blocks, leray_project,
    load_snapshot, low_frequency_cutoff, phi, random_field, save_snapshot, scalar_product,
    advect, stratified_part, to_physical, to_spectral, transform_forward, transform_inverse, truncate,
    vorticity,
)


def test_grid_rejects_odd_mode_counts():
    with pytest.raises(GridMismatchError):
        GridSpec((8, 7, 8))


def test_coefficient_normalization(grid8):
    x1 = grid8.coords[0]
    const = to_spectral(np.full(grid8.shape, 2.5), grid8)
    assert const[0, 0, 0] == pytest.approx(2.5)
    assert np.count_nonzero(np.abs(const) > 1e-14) == 1

    c = to_spectral(np.sin(x1), grid8)
    assert c[1, 0, 0] == pytest.approx(1 / 2j)
    assert c[-1, 0, 0] == pytest.approx(-1 / 2j)


def test_transform_roundtrip_physical(grid8):
    u = np.random.default_rng(0).standard_normal((4,) + grid8.shape)
    f = transform_forward(u, grid8)
    assert_allclose(to_physical(f.coeffs, grid8), u, atol=1e-13)


def test_field_shape_checked(grid8):
    with pytest.raises(GridMismatchError):
        Field4(grid8, np.zeros((3,) + grid8.shape))
    with pytest.raises(GridMismatchError):
        Field1(grid8, np.zeros(5))


def test_divergence_free_tag_is_enforced(grid8):
    u = Field4(grid8, to_spectral(np.random.default_rng(1).standard_normal((4,) + grid8.shape), grid8))
    with pytest.raises(DomainError):
        Field4(grid8, u.coeffs, divergence_free=True)
    Field4(grid8, leray_project(u).coeffs, divergence_free=True)


def test_leray_projection_is_idempotent_and_divergence_free(grid8):
    u = Field4(grid8, to_spectral(np.random.default_rng(2).standard_normal((4,) + grid8.shape), grid8))
    p = leray_project(u)
    assert divergence_residual(p) < 1e-12
    assert_allclose(leray_project(p).coeffs, p.coeffs, atol=1e-14)
    assert_allclose(p.theta, u.theta)


def test_profile_embeds_on_horizontal_mean(grid8):
    theta = Field1.from_samples(np.cos(2 * grid8.x3), grid8)
    f = theta.embed()
    assert_allclose(f.coeffs[3, 0, 0, :], theta.coeffs)
    assert np.count_nonzero(f.coeffs[:3]) == 0
    assert_allclose(f.physical()[3], np.broadcast_to(np.cos(2 * grid8.x3), grid8.shape), atol=1e-13)


def test_decomposition_parts(field8):
    fs, fo = decompose_stratified_oscillating(field8)
    assert_allclose((fs + fo).coeffs, field8.coeffs, atol=1e-14)
    assert np.count_nonzero(fs.coeffs[2:]) == 0
    scale = np.linalg.norm(vorticity(field8))
    assert np.linalg.norm(vorticity(fo)) < 1e-13 * scale
    assert_allclose(vorticity(fs), vorticity(field8), atol=1e-13 * scale)


@pytest.mark.parametrize('s', [0.0, 0.5, 1.0])
def test_stratified_and_oscillating_parts_orthogonal(field8, s):
    fs, fo = decompose_stratified_oscillating(field8)
    cross = scalar_product(fs.coeffs, fo.coeffs, field8.grid, s)
    total = scalar_product(field8.coeffs, field8.coeffs, field8.grid, s).real
    assert abs(cross) < 1e-13 * total


def test_stratified_part_idempotent(field8):
    fs = stratified_part(field8)
    assert_allclose(stratified_part(fs).coeffs, fs.coeffs, atol=1e-14)


def test_random_field_reproducible_and_banded(grid8):
    a = random_field(grid8, seed=5, band=(2.0, 3.0))
    b = random_field(grid8, seed=5, band=(2.0, 3.0))
    assert_allclose(a.coeffs, b.coeffs)
    outside = (grid8.xi_abs < 2.0) | (grid8.xi_abs > 3.0)
    assert np.all(a.coeffs[:, outside] == 0)
    assert divergence_residual(a) < 1e-12


def test_cutoff_profiles():
    assert chi(0.0) == pytest.approx(1.0)
    assert chi(0.5) == pytest.approx(1.0)
    assert chi(1.0) == pytest.approx(0.0)
    assert 0 < chi(0.75) < 1
    assert phi(0.75) == pytest.approx(1.0)
    assert phi(4.0 / 3.0) == pytest.approx(0.0)


def test_dyadic_blocks_sum_to_identity(field8):
    total = sum(block.coeffs for _, block in dyadic_blocks(field8))
    assert_allclose(total, field8.coeffs, atol=1e-13)


def test_profile_blocks_sum_to_identity(grid8):
    theta = Field1.from_samples(np.random.default_rng(4).standard_normal(grid8.n[2]), grid8)
    theta = Field1(grid8, theta.coeffs * (np.abs(theta.xi3) > 0))
    total = sum(block.coeffs for _, block in dyadic_blocks(theta))
    assert_allclose(total, theta.coeffs, atol=1e-13)


def test_low_frequency_cutoff_keeps_low_modes(field8):
    low = low_frequency_cutoff(field8, 0)
    keep = field8.grid.xi_abs <= 0.75
    assert_allclose(low.coeffs[:, keep], field8.coeffs[:, keep])
    assert np.all(low.coeffs[:, field8.grid.xi_abs >= 4.0 / 3.0] == 0)


def test_truncation_spec_validation():
    with pytest.raises(TruncationError):
        TruncationSpec(2.0, 1.0)
    with pytest.raises(TruncationError):
        TruncationSpec(0.0, 1.0)
    spec = TruncationSpec.from_exponents(0.5, 0.25, 0.01)
    assert spec.r == pytest.approx(0.1)
    assert spec.R == pytest.approx(np.sqrt(10.0))
    assert spec.has_exponents


def test_truncation_removes_outside_modes(field8):
    spec = TruncationSpec(1.0, 2.0)
    out = truncate(field8, spec)
    g = field8.grid
    assert np.all(out.coeffs[:, g.xi_abs >= 2.0] == 0)
    assert np.all(out.coeffs[:, g.xih_abs <= 1.0] == 0)


def test_snapshot_file_roundtrip(tmp_path, field8, grid8):
    path = save_snapshot(field8, tmp_path / 'U.bin')
    back = load_snapshot(path)
    assert back.grid == grid8
    assert_allclose(back.coeffs, field8.coeffs)

    theta = Field1.from_samples(np.sin(grid8.x3), grid8)
    back1 = load_snapshot(save_snapshot(theta, tmp_path / 'theta.bin'))
    assert isinstance(back1, Field1)
    assert_allclose(back1.coeffs, theta.coeffs)


def test_snapshot_rejects_foreign_file(tmp_path):
    path = tmp_path / 'junk.bin'
    path.write_bytes(b'format=other\nend_header\n')
    with pytest.raises(GridMismatchError):
        load_snapshot(path)


def test_advect_shear_flow(grid8):
    x1, x2, _ = grid8.coords
    samples = np.zeros((4,) + grid8.shape)
    samples[0] = np.sin(x2)
    samples[3] = np.cos(x1)
    f = transform_forward(samples, grid8)
    out = transform_inverse(advect(f, f))
    assert_allclose(out[3], -np.sin(x2) * np.sin(x1), atol=1e-12)
    assert_allclose(out[:3], 0.0, atol=1e-12)
    with pytest.raises(GridMismatchError):
        advect(f, Field4.zeros(GridSpec.cube(4)))


def _vorticity_identity_residuals(f):
    grid = f.grid
    c = f.coeffs

    def d(coeffs, axis):
        return to_physical(1j * grid.xi[axis] * coeffs, grid)

    u = to_physical(c[:3], grid)
    adv = [sum(u[j] * d(c[i], j) for j in range(3)) for i in (0, 1)]
    lhs = d(to_spectral(adv[1], grid), 0) - d(to_spectral(adv[0], grid), 1)
    w = vorticity(f)
    transport = sum(u[j] * d(w, j) for j in range(3))
    rhs = (-d(c[2], 2) * to_physical(w, grid) + d(c[2], 0) * d(c[1], 2) - d(c[2], 1) * d(c[0], 2)
           + transport)
    scale = np.abs(lhs).max()
    return np.abs(lhs - rhs).max() / scale, np.abs(lhs - transport).max() / scale


@pytest.mark.slow
def test_vorticity_of_advection_identities():
    grid = GridSpec.cube(32)
    for seed in range(20):
        # |xi| <= 7 keeps every quadratic product below the Nyquist mode
        f = random_field(grid, seed, band=(0.0, 7.0))
        full, _ = _vorticity_identity_residuals(f)
        assert full < 1e-8
        _, layered = _vorticity_identity_residuals(stratified_part(f))
        assert layered < 1e-8
