import numpy as np
import pytest

from spectral_core import DomainError, Field1, Field4, to_spectral
from spectral_norms import (
    INF, anisotropic_norm, besov_norm, hs_norm, lebesgue_norm, norm, parse_norm,
    space_time_norm, time_lebesgue,
)


def _mode_field(grid, k=2):
    u = np.zeros((4,) + grid.shape)
    u[1] = np.sin(k * grid.coords[0])
    return Field4(grid, to_spectral(u, grid))


@pytest.mark.parametrize('token, kind, attrs', [
    ('L2', 'lebesgue', {'p': 2.0}),
    ('Linf', 'lebesgue', {'p': INF}),
    ('H0.5', 'hs', {'s': 0.5}),
    ('Hi1', 'inhom_hs', {'s': 1.0}),
    ('B0.5_2_1', 'besov', {'s': 0.5, 'p': 2.0, 'q': 1.0}),
    ('Ainf_2', 'aniso', {'m_v': INF, 'q_h': 2.0}),
    ('L2T:Linf', 'lebesgue', {'p': INF, 'time_exponent': 2.0}),
    ('E0', 'energy', {'s': 0.0}),
    ('CL4:0_2_1', 'chemin_lerner', {'time_exponent': 4.0, 's': 0.0, 'p': 2.0, 'q': 1.0}),
])
def test_parse_norm_tokens(token, kind, attrs):
    spec = parse_norm(token)
    assert spec.kind == kind
    for name, value in attrs.items():
        assert getattr(spec, name) == value
    assert spec.label == token


def test_space_time_tokens_flagged():
    assert parse_norm('L2T:Linf').is_space_time
    assert parse_norm('E0').is_space_time
    assert not parse_norm('H0.5').is_space_time


@pytest.mark.parametrize('token', ['X2', 'L2T:E0', 'H', 'B1_2'])
def test_parse_norm_rejects(token):
    with pytest.raises(ValueError):
        parse_norm(token)


def test_parseval(field8):
    g = field8.grid
    assert hs_norm(field8.coeffs, g, 0.0) == pytest.approx(lebesgue_norm(field8.coeffs, g, 2.0), rel=1e-12)


def test_single_mode_values(grid8):
    f = _mode_field(grid8, k=2)
    l2 = np.sqrt(grid8.volume / 2)
    assert norm(f, 'L2') == pytest.approx(l2, rel=1e-12)
    assert norm(f, 'H1') == pytest.approx(2 * l2, rel=1e-12)
    assert norm(f, 'Linf') == pytest.approx(1.0, rel=1e-12)
    # constant in x2, x3: horizontal L2 at each level, then sup over x3
    assert anisotropic_norm(f.coeffs, grid8, INF, 2.0) == pytest.approx(2 * np.pi / np.sqrt(2), rel=1e-12)


def test_besov_l1_sum_dominates_l2(field8):
    g = field8.grid
    assert besov_norm(field8.coeffs, g, 0.0, 2.0, 1.0) >= hs_norm(field8.coeffs, g, 0.0) * (1 - 1e-12)


def test_profile_norms(grid8):
    theta = Field1.from_samples(np.cos(3 * grid8.x3), grid8)
    assert norm(theta, 'L2') == pytest.approx(np.sqrt(grid8.L[2] / 2), rel=1e-12)
    assert norm(theta, 'H1') == pytest.approx(3 * np.sqrt(grid8.L[2] / 2), rel=1e-12)
    with pytest.raises(ValueError):
        norm(theta, 'Ainf_2')


def test_space_time_token_needs_series(field8):
    with pytest.raises(ValueError):
        norm(field8, 'L2T:L2')


def test_time_lebesgue():
    times = np.linspace(0, 2, 21)
    assert time_lebesgue(np.full(21, 3.0), times, 2.0) == pytest.approx(np.sqrt(18.0))
    assert time_lebesgue([1.0, 5.0, 2.0], [0, 1, 2], INF) == 5.0
    with pytest.raises(DomainError):
        time_lebesgue([], [], 2.0)


def test_space_time_norms_of_constant_series(field8):
    times = np.linspace(0, 1, 5)
    snaps = [field8] * 5
    l2 = norm(field8, 'L2')
    assert space_time_norm(snaps, times, 'LinfT:L2') == pytest.approx(l2)
    assert space_time_norm(snaps, times, 'L2T:L2') == pytest.approx(l2)
    h1 = norm(field8, 'H1')
    assert space_time_norm(snaps, times, 'E0', nu0=0.5) == pytest.approx(np.sqrt(l2 ** 2 + 0.5 * h1 ** 2))
    assert space_time_norm(snaps, times, 'H0.5') == pytest.approx(norm(field8, 'H0.5'))
    assert space_time_norm(snaps, times, 'CL2:0_2_1') == pytest.approx(besov_norm(field8.coeffs, field8.grid, 0.0, 2.0, 1.0), rel=1e-10)
