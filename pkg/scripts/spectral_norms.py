#!/usr/bin/env python3
"""
Spectral Norms - Discrete versions of the Sobolev, Besov, Lebesgue,
anisotropic and space-time norms used to measure strato fields.

Homogeneous norms drop the xi = 0 mode. The Parseval factor is the box
volume, so ||u||_{L^2} agrees with physical-space quadrature.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from spectral_core import (
    DomainError, Field1, Field4, GridSpec, dyadic_multiplier, dyadic_range,
    sobolev_weight, to_physical, varphi, anisotropic_lowpass, truncate,
    TruncationSpec,
)

INF = float('inf')

_NUM = r'[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?|inf'


def _num(token: str) -> float:
    return INF if token == 'inf' else float(token)


@dataclass(frozen=True)
class NormSpec:
    """kind: hs | inhom_hs | besov | lebesgue | aniso | energy | chemin_lerner."""
    kind: str
    s: float = 0.0
    p: float = 2.0
    q: float = 2.0
    m_v: float = 2.0
    q_h: float = 2.0
    time_exponent: float = None
    label: str = ''

    @property
    def spatial(self) -> 'NormSpec':
        return NormSpec(self.kind, self.s, self.p, self.q, self.m_v, self.q_h, None, self.label)

    @property
    def is_space_time(self) -> bool:
        return self.time_exponent is not None or self.kind in ('energy', 'chemin_lerner')


_PATTERNS = [
    ('time', re.compile(rf'^L({_NUM})T:(.+)$')),
    ('chemin_lerner', re.compile(rf'^CL({_NUM}):({_NUM})_({_NUM})_({_NUM})$')),
    ('energy', re.compile(rf'^E({_NUM})$')),
    ('inhom_hs', re.compile(rf'^Hi({_NUM})$')),
    ('hs', re.compile(rf'^H({_NUM})$')),
    ('besov', re.compile(rf'^B({_NUM})_({_NUM})_({_NUM})$')),
    ('aniso', re.compile(rf'^A({_NUM})_({_NUM})$')),
    ('lebesgue', re.compile(rf'^L({_NUM})$')),
]


def parse_norm(token: str) -> NormSpec:
    """Parse a norm token such as L2, Linf, H0.5, B0.5_2_1, Ainf_2, L2T:Linf, E0, CL4:0_2_1."""
    token = token.strip()
    for kind, pattern in _PATTERNS:
        match = pattern.match(token)
        if not match:
            continue
        g = match.groups()
        if kind == 'time':
            inner = parse_norm(g[1])
            if inner.is_space_time:
                raise ValueError(f"norm '{token}': nested time compositions are not supported")
            return NormSpec(inner.kind, inner.s, inner.p, inner.q, inner.m_v, inner.q_h,
                            _num(g[0]), token)
        if kind == 'chemin_lerner':
            return NormSpec(kind, s=_num(g[1]), p=_num(g[2]), q=_num(g[3]),
                            time_exponent=_num(g[0]), label=token)
        if kind == 'energy':
            return NormSpec(kind, s=_num(g[0]), label=token)
        if kind in ('hs', 'inhom_hs'):
            return NormSpec(kind, s=_num(g[0]), label=token)
        if kind == 'besov':
            return NormSpec(kind, s=_num(g[0]), p=_num(g[1]), q=_num(g[2]), label=token)
        if kind == 'aniso':
            return NormSpec(kind, m_v=_num(g[0]), q_h=_num(g[1]), label=token)
        return NormSpec('lebesgue', p=_num(g[0]), label=token)
    raise ValueError(f"unrecognised norm token '{token}'")


# =========================================================
# SPATIAL NORMS ON THE 3D GRID
# =========================================================
def _as_components(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    if coeffs.shape == grid.shape:
        coeffs = coeffs[None]
    if coeffs.size == 0:
        raise DomainError("norm of an empty field")
    return coeffs


def hs_norm(coeffs: np.ndarray, grid: GridSpec, s: float = 0.0) -> float:
    c = _as_components(coeffs, grid)
    w = sobolev_weight(grid.xi2, s)
    return float(np.sqrt(grid.volume * np.sum(w * np.abs(c) ** 2)))


def inhomogeneous_hs_norm(coeffs: np.ndarray, grid: GridSpec, s: float = 0.0) -> float:
    c = _as_components(coeffs, grid)
    w = (1.0 + grid.xi2) ** s
    return float(np.sqrt(grid.volume * np.sum(w * np.abs(c) ** 2)))


def _magnitude(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    u = to_physical(_as_components(coeffs, grid), grid)
    return np.sqrt(np.sum(u ** 2, axis=0))


def lebesgue_norm(coeffs: np.ndarray, grid: GridSpec, p: float = 2.0) -> float:
    mag = _magnitude(coeffs, grid)
    if p == INF:
        return float(mag.max())
    return float((grid.volume / grid.size * np.sum(mag ** p)) ** (1.0 / p))


def anisotropic_norm(coeffs: np.ndarray, grid: GridSpec, m_v: float = 2.0, q_h: float = 2.0) -> float:
    """L^{m,q}_{v,h}: horizontal L^q at each x3 first, then L^m in x3."""
    mag = _magnitude(coeffs, grid)
    cell_h = grid.L[0] * grid.L[1] / (grid.n[0] * grid.n[1])
    if q_h == INF:
        slab = mag.max(axis=(0, 1))
    else:
        slab = (cell_h * np.sum(mag ** q_h, axis=(0, 1))) ** (1.0 / q_h)
    if m_v == INF:
        return float(slab.max())
    dz = grid.L[2] / grid.n[2]
    return float((dz * np.sum(slab ** m_v)) ** (1.0 / m_v))


def _lq_sum(values, q: float) -> float:
    values = np.asarray(values, dtype=float)
    if q == INF:
        return float(values.max()) if values.size else 0.0
    return float(np.sum(values ** q) ** (1.0 / q))


def besov_norm(coeffs: np.ndarray, grid: GridSpec, s: float, p: float = 2.0, q: float = 1.0,
               mode: str = 'full') -> float:
    """(sum_j (2^{js} ||Delta_j u||_{L^p})^q)^{1/q} over the representable blocks."""
    c = _as_components(coeffs, grid)
    j_min, j_max = dyadic_range(grid, mode)
    terms = []
    for j in range(j_min, j_max + 1):
        block = c * dyadic_multiplier(grid, j, mode)
        if p == 2:
            size = np.sqrt(grid.volume * np.sum(np.abs(block) ** 2))
        else:
            size = lebesgue_norm(block, grid, p)
        terms.append(2.0 ** (j * s) * size)
    return _lq_sum(terms, q)


# =========================================================
# PROFILE NORMS (functions of x3 only)
# =========================================================
def profile_hs_norm(f: Field1, s: float = 0.0) -> float:
    w = sobolev_weight(f.xi3 ** 2, s)
    return float(np.sqrt(f.length * np.sum(w * np.abs(f.coeffs) ** 2)))


def profile_lebesgue_norm(f: Field1, p: float = 2.0) -> float:
    u = np.abs(f.physical())
    if p == INF:
        return float(u.max())
    return float((f.length / u.size * np.sum(u ** p)) ** (1.0 / p))


def profile_besov_norm(f: Field1, s: float, p: float = 2.0, q: float = 1.0) -> float:
    j_min, j_max = dyadic_range(f.grid, 'vertical')
    terms = []
    for j in range(j_min, j_max + 1):
        block = Field1(f.grid, f.coeffs * varphi(2.0 ** (-j) * np.abs(f.xi3)))
        if p == 2:
            size = np.sqrt(f.length * np.sum(np.abs(block.coeffs) ** 2))
        else:
            size = profile_lebesgue_norm(block, p)
        terms.append(2.0 ** (j * s) * size)
    return _lq_sum(terms, q)


# =========================================================
# DISPATCH
# =========================================================
def norm(f, spec: NormSpec) -> float:
    """Spatial norm of a Field4 or a Field1 profile."""
    if isinstance(spec, str):
        spec = parse_norm(spec)
    if spec.is_space_time:
        raise ValueError(f"norm '{spec.label}' is a space-time norm; use space_time_norm")
    if isinstance(f, Field1):
        if spec.kind == 'hs':
            return profile_hs_norm(f, spec.s)
        if spec.kind == 'besov':
            return profile_besov_norm(f, spec.s, spec.p, spec.q)
        if spec.kind == 'lebesgue':
            return profile_lebesgue_norm(f, spec.p)
        raise ValueError(f"norm kind '{spec.kind}' is not defined for profiles")
    if not isinstance(f, Field4):
        raise TypeError(f"cannot take a norm of {type(f).__name__}")
    c, g = f.coeffs, f.grid
    if spec.kind == 'hs':
        return hs_norm(c, g, spec.s)
    if spec.kind == 'inhom_hs':
        return inhomogeneous_hs_norm(c, g, spec.s)
    if spec.kind == 'lebesgue':
        return lebesgue_norm(c, g, spec.p)
    if spec.kind == 'besov':
        return besov_norm(c, g, spec.s, spec.p, spec.q)
    if spec.kind == 'aniso':
        return anisotropic_norm(c, g, spec.m_v, spec.q_h)
    raise ValueError(f"unknown norm kind '{spec.kind}'")


# =========================================================
# SPACE-TIME NORMS
# =========================================================
def time_lebesgue(values, times, a: float) -> float:
    """L^a in time of a sampled series, trapezoid rule."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if values.size == 0:
        raise DomainError("time norm of an empty series")
    if a == INF:
        return float(values.max())
    if values.size == 1:
        return 0.0
    return float(trapezoid(values ** a, times) ** (1.0 / a))


def energy_space_norm(snapshots, times, s: float, nu0: float) -> float:
    """E_T^s: sqrt(sup ||f||_{H^s}^2 + nu0 int ||f||_{H^{s+1}}^2)."""
    sup = max(norm(f, NormSpec('hs', s=s)) ** 2 for f in snapshots)
    grad = [norm(f, NormSpec('hs', s=s + 1)) ** 2 for f in snapshots]
    integral = trapezoid(grad, times) if len(times) > 1 else 0.0
    return float(np.sqrt(sup + nu0 * integral))


def besov_energy_norm(snapshots, times, s: float, diffusivity: float) -> float:
    """B_T^s: sup ||f||_{B^s_{2,1}} + diffusivity int ||f||_{B^{s+2}_{2,1}}."""
    sup = max(norm(f, NormSpec('besov', s=s, p=2, q=1)) for f in snapshots)
    vals = [norm(f, NormSpec('besov', s=s + 2, p=2, q=1)) for f in snapshots]
    integral = trapezoid(vals, times) if len(times) > 1 else 0.0
    return float(sup + diffusivity * integral)


def chemin_lerner_norm(snapshots, times, s: float, a: float, b: float, c: float) -> float:
    """L~^a_T B^s_{b,c}: time norm taken per dyadic block before the l^c sum."""
    first = snapshots[0]
    if isinstance(first, Field1):
        j_min, j_max = dyadic_range(first.grid, 'vertical')
    else:
        j_min, j_max = dyadic_range(first.grid, 'full')
    terms = []
    for j in range(j_min, j_max + 1):
        per_time = []
        for f in snapshots:
            if isinstance(f, Field1):
                block = Field1(f.grid, f.coeffs * varphi(2.0 ** (-j) * np.abs(f.xi3)))
                per_time.append(profile_lebesgue_norm(block, b))
            else:
                per_time.append(lebesgue_norm(f.coeffs * dyadic_multiplier(f.grid, j), f.grid, b))
        terms.append(2.0 ** (j * s) * time_lebesgue(per_time, times, a))
    return _lq_sum(terms, c)


def space_time_norm(snapshots, times, spec, nu0: float = 1.0) -> float:
    if isinstance(spec, str):
        spec = parse_norm(spec)
    if spec.kind == 'energy':
        return energy_space_norm(snapshots, times, spec.s, nu0)
    if spec.kind == 'chemin_lerner':
        return chemin_lerner_norm(snapshots, times, spec.s, spec.time_exponent, spec.p, spec.q)
    values = [norm(f, spec.spatial) for f in snapshots]
    if spec.time_exponent is None:
        return float(values[-1])
    return time_lebesgue(values, times, spec.time_exponent)


# =========================================================
# DIAGNOSTICS
# =========================================================
def low_frequency_report(f: Field4) -> dict:
    """Mean-mode content and lowest-shell energy, kept apart from homogeneous norms."""
    g = f.grid
    c = f.coeffs
    shell = (g.xi2 > 0) & (g.xi_abs <= min(2 * np.pi / L for L in g.L) + 1e-12)
    total = hs_norm(c, g, 0.0)
    low = float(np.sqrt(g.volume * np.sum(np.abs(c[:, shell]) ** 2)))
    return {
        'mean_mode': float(np.sqrt(g.volume) * np.linalg.norm(c[:, 0, 0, 0])),
        'lowest_shell_l2': low,
        'lowest_shell_fraction': low / total if total > 0 else 0.0,
    }


def besov_interpolation_ratio(f: Field4, s: float, alpha: float, beta: float) -> float:
    """||u||_{B^s_{2,1}} / (||u||_{H^{s-alpha}}^{beta/(alpha+beta)} ||u||_{H^{s+beta}}^{alpha/(alpha+beta)})."""
    top = norm(f, NormSpec('besov', s=s, p=2, q=1))
    lo = norm(f, NormSpec('hs', s=s - alpha))
    hi = norm(f, NormSpec('hs', s=s + beta))
    if lo == 0 or hi == 0:
        return 0.0
    return top / (lo ** (beta / (alpha + beta)) * hi ** (alpha / (alpha + beta)))


def bernstein_ratio(f: Field4, spec: TruncationSpec, alpha: float, p: float = 2.0) -> float:
    """|| |D|^alpha P_{r,R} f ||_p / (R^alpha || P_{r,R} f ||_p)."""
    u = truncate(f, spec)
    base = lebesgue_norm(u.coeffs, f.grid, p)
    if base == 0:
        return 0.0
    lifted = u.coeffs * f.grid.xi_abs ** alpha
    return lebesgue_norm(lifted, f.grid, p) / (spec.R ** alpha * base)


def anisotropic_bernstein_ratio(f: Field4, R: float, r: float, p: float, q: float = 2.0) -> float:
    """||chi(|D|/R) chi(|D_h|/r) f||_p / ((R r^2)^{1/q - 1/p} ||f||_q)."""
    base = lebesgue_norm(f.coeffs, f.grid, q)
    if base == 0:
        return 0.0
    inv_p = 0.0 if p == INF else 1.0 / p
    low = anisotropic_lowpass(f, R, r)
    return lebesgue_norm(low.coeffs, f.grid, p) / ((R * r * r) ** (1.0 / q - inv_p) * base)
