#!/usr/bin/env python3
"""
Spectral Core - Periodic-box Fourier representation of stratified fields
Grids, 4-component states, differential operators, Leray and stratified
projections, frequency truncations and Littlewood-Paley blocks.

Coefficients are normalized as c(xi) = fftn(u) / N so that a constant
field c has a single coefficient c at xi = 0 and sin(x1) has +-1/(2i)
at xi = (+-1, 0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft

from config_loader import FFT_WORKERS


# =========================================================
# ERRORS
# =========================================================
class StratoError(Exception):
    """Base class for every domain error raised by strato."""


class GridMismatchError(StratoError):
    pass


class TruncationError(StratoError):
    pass


class DomainError(StratoError):
    """Input outside the region where an operation is defined."""


class CFLViolationError(StratoError):
    pass


class NumericalBlowUpError(StratoError):
    pass


class ResolutionError(StratoError):
    pass


class ConfigError(StratoError):
    pass


class QuadratureError(StratoError):
    pass


DIVERGENCE_TOL = 1e-10


# =========================================================
# GRID
# =========================================================
@dataclass(frozen=True)
class GridSpec:
    n: tuple = (32, 32, 32)
    L: tuple = (2 * np.pi, 2 * np.pi, 2 * np.pi)
    dealias: float = 2.0 / 3.0

    def __post_init__(self):
        n = tuple(int(x) for x in self.n)
        L = tuple(float(x) for x in self.L)
        if len(n) != 3 or len(L) != 3:
            raise GridMismatchError(f"grid needs 3 axes, got n={self.n} L={self.L}")
        if any(x <= 0 or x % 2 for x in n):
            raise GridMismatchError(f"mode counts must be positive even integers, got {n}")
        if any(x <= 0 for x in L):
            raise GridMismatchError(f"periods must be positive, got {L}")
        if not 0 < self.dealias <= 1:
            raise GridMismatchError(f"dealias fraction must lie in (0, 1], got {self.dealias}")
        object.__setattr__(self, 'n', n)
        object.__setattr__(self, 'L', L)

    @classmethod
    def cube(cls, n: int, L: float = 2 * np.pi, dealias: float = 2.0 / 3.0) -> 'GridSpec':
        return cls((n, n, n), (L, L, L), dealias)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def volume(self) -> float:
        return float(np.prod(self.L))

    @property
    def dx(self) -> float:
        return min(L / n for L, n in zip(self.L, self.n))

    def k_signed(self, axis: int) -> np.ndarray:
        """Signed integer wavenumbers in [-n/2, n/2) in FFT order."""
        n = self.n[axis]
        return np.fft.fftfreq(n, d=1.0 / n)

    def xi_axis(self, axis: int) -> np.ndarray:
        return 2 * np.pi * self.k_signed(axis) / self.L[axis]

    @cached_property
    def xi(self) -> np.ndarray:
        axes = [self.xi_axis(i) for i in range(3)]
        return np.array(np.meshgrid(*axes, indexing='ij'))

    @cached_property
    def xi2(self) -> np.ndarray:
        return np.sum(self.xi ** 2, axis=0)

    @cached_property
    def xih2(self) -> np.ndarray:
        return self.xi[0] ** 2 + self.xi[1] ** 2

    @cached_property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(self.xi2)

    @cached_property
    def xih_abs(self) -> np.ndarray:
        return np.sqrt(self.xih2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = [np.abs(self.k_signed(i)) <= self.dealias * self.n[i] / 2 for i in range(3)]
        m = np.meshgrid(*keep, indexing='ij')
        return m[0] & m[1] & m[2]

    @cached_property
    def coords(self) -> np.ndarray:
        axes = [self.L[i] * np.arange(self.n[i]) / self.n[i] for i in range(3)]
        return np.array(np.meshgrid(*axes, indexing='ij'))

    @property
    def x3(self) -> np.ndarray:
        return self.L[2] * np.arange(self.n[2]) / self.n[2]

    def describe(self) -> dict:
        return {'n': list(self.n), 'L': list(self.L), 'dealias': self.dealias}


def _safe_inverse(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=float)
    nz = a > 0
    out[nz] = 1.0 / a[nz]
    return out


# =========================================================
# TRANSFORMS
# =========================================================
def to_spectral(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Forward transform over the last three axes."""
    samples = np.asarray(samples)
    if samples.shape[-3:] != grid.shape:
        raise GridMismatchError(f"samples shape {samples.shape} does not end with {grid.shape}")
    return scipy.fft.fftn(samples, axes=(-3, -2, -1), workers=FFT_WORKERS) / grid.size


def to_physical(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Inverse transform over the last three axes, real part kept."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-3:] != grid.shape:
        raise GridMismatchError(f"coefficient shape {coeffs.shape} does not end with {grid.shape}")
    return scipy.fft.ifftn(coeffs * grid.size, axes=(-3, -2, -1), workers=FFT_WORKERS).real


# =========================================================
# FIELDS
# =========================================================
@dataclass
class Field4:
    """State U = (v1, v2, v3, theta) as Fourier coefficients, shape (4, n1, n2, n3)."""
    grid: GridSpec
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (4,) + self.grid.shape:
            raise GridMismatchError(
                f"Field4 coefficients must have shape {(4,) + self.grid.shape}, got {self.coeffs.shape}")
        if self.divergence_free:
            residual = divergence_residual(self)
            if residual > DIVERGENCE_TOL:
                raise DomainError(f"field tagged divergence-free has relative divergence {residual:.3e}")

    @classmethod
    def zeros(cls, grid: GridSpec) -> 'Field4':
        return cls(grid, np.zeros((4,) + grid.shape, dtype=complex))

    @property
    def velocity(self) -> np.ndarray:
        return self.coeffs[:3]

    @property
    def theta(self) -> np.ndarray:
        return self.coeffs[3]

    def copy(self) -> 'Field4':
        return Field4(self.grid, self.coeffs.copy())

    def with_coeffs(self, coeffs: np.ndarray) -> 'Field4':
        return Field4(self.grid, coeffs)

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid)

    def _check(self, other: 'Field4'):
        if not isinstance(other, Field4):
            raise TypeError(f"expected Field4, got {type(other).__name__}")
        if other.grid != self.grid:
            raise GridMismatchError(f"grid {other.grid.n} does not match {self.grid.n}")

    def __add__(self, other: 'Field4') -> 'Field4':
        self._check(other)
        return Field4(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: 'Field4') -> 'Field4':
        self._check(other)
        return Field4(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> 'Field4':
        return Field4(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> 'Field4':
        return Field4(self.grid, -self.coeffs)


@dataclass
class Field1:
    """Profile depending on x3 only, coefficients of shape (n3,)."""
    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.grid.n[2],):
            raise GridMismatchError(
                f"Field1 coefficients must have shape {(self.grid.n[2],)}, got {self.coeffs.shape}")

    @classmethod
    def zeros(cls, grid: GridSpec) -> 'Field1':
        return cls(grid, np.zeros(grid.n[2], dtype=complex))

    @classmethod
    def from_samples(cls, samples: np.ndarray, grid: GridSpec) -> 'Field1':
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (grid.n[2],):
            raise GridMismatchError(f"profile samples must have shape {(grid.n[2],)}, got {samples.shape}")
        return cls(grid, scipy.fft.fft(samples, workers=FFT_WORKERS) / grid.n[2])

    @property
    def xi3(self) -> np.ndarray:
        return self.grid.xi_axis(2)

    @property
    def length(self) -> float:
        return self.grid.L[2]

    def physical(self) -> np.ndarray:
        return scipy.fft.ifft(self.coeffs * self.grid.n[2], workers=FFT_WORKERS).real

    def embed(self) -> Field4:
        """(0, 0, 0, theta(x3)) on the 3D grid: lives on the xi_h = 0 modes."""
        out = np.zeros((4,) + self.grid.shape, dtype=complex)
        out[3, 0, 0, :] = self.coeffs
        return Field4(self.grid, out)

    def __add__(self, other: 'Field1') -> 'Field1':
        return Field1(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: 'Field1') -> 'Field1':
        return Field1(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> 'Field1':
        return Field1(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


def transform_forward(samples: np.ndarray, grid: GridSpec) -> Field4:
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (4,) + grid.shape:
        raise GridMismatchError(f"expected physical samples of shape {(4,) + grid.shape}, got {samples.shape}")
    return Field4(grid, to_spectral(samples, grid))


def transform_inverse(f: Field4) -> np.ndarray:
    return to_physical(f.coeffs, f.grid)


# =========================================================
# DIFFERENTIAL OPERATORS
# =========================================================
def gradient(scalar_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return 1j * grid.xi * scalar_hat


def divergence(f: Field4) -> np.ndarray:
    return 1j * np.sum(f.grid.xi * f.velocity, axis=0)


def horizontal_divergence(f: Field4) -> np.ndarray:
    xi = f.grid.xi
    return 1j * (xi[0] * f.coeffs[0] + xi[1] * f.coeffs[1])


def laplacian(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    return -grid.xi2 * coeffs


def inverse_laplacian(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Delta^{-1}, zero on the mean mode."""
    return -_safe_inverse(grid.xi2) * coeffs


def inverse_horizontal_laplacian(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Delta_h^{-1}, zero on the xi_h = 0 modes."""
    return -_safe_inverse(grid.xih2) * coeffs


def divergence_residual(f: Field4) -> float:
    """max |xi . v| / (|xi| |v|) over the modes carrying velocity."""
    grid = f.grid
    vnorm = np.sqrt(np.sum(np.abs(f.velocity) ** 2, axis=0))
    scale = vnorm.max() if vnorm.size else 0.0
    if scale == 0:
        return 0.0
    dot = np.abs(np.sum(grid.xi * f.velocity, axis=0))
    live = (vnorm > 1e-14 * scale) & (grid.xi2 > 0)
    if not live.any():
        return 0.0
    return float(np.max(dot[live] / (grid.xi_abs[live] * vnorm[live])))


def leray_project(f: Field4) -> Field4:
    """Orthogonal projection of the velocity slots onto divergence-free fields; theta rides along."""
    grid = f.grid
    out = f.coeffs.copy()
    proj = np.sum(grid.xi * f.velocity, axis=0) * _safe_inverse(grid.xi2)
    out[:3] -= grid.xi * proj
    return Field4(grid, out)


def horizontal_leray(coeffs_h: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Projection of a 2-component field onto div_h-free fields, zero on xi_h = 0 untouched."""
    xi = grid.xi
    proj = (xi[0] * coeffs_h[0] + xi[1] * coeffs_h[1]) * _safe_inverse(grid.xih2)
    out = np.array(coeffs_h, dtype=complex, copy=True)
    out[0] -= xi[0] * proj
    out[1] -= xi[1] * proj
    return out


def vorticity(f: Field4) -> np.ndarray:
    """omega(f) = d1 f2 - d2 f1 as spectral coefficients."""
    xi = f.grid.xi
    return 1j * (xi[0] * f.coeffs[1] - xi[1] * f.coeffs[0])


def decompose_stratified_oscillating(f: Field4) -> tuple:
    """Split f into (f_S, f_osc) with f_S = (grad_h^perp Delta_h^{-1} omega(f), 0, 0)."""
    grid = f.grid
    xi = grid.xi
    psi = inverse_horizontal_laplacian(vorticity(f), grid)
    fs = np.zeros_like(f.coeffs)
    fs[0] = -1j * xi[1] * psi
    fs[1] = 1j * xi[0] * psi
    f_s = Field4(grid, fs)
    return f_s, Field4(grid, f.coeffs - fs)


def stratified_part(f: Field4) -> Field4:
    return decompose_stratified_oscillating(f)[0]


def oscillating_part(f: Field4) -> Field4:
    return decompose_stratified_oscillating(f)[1]


def random_field(grid: GridSpec, seed: int = 0, band: tuple = (0.0, None)) -> Field4:
    """Real Gaussian field restricted to band[0] <= |xi| <= band[1] and the dealiased modes,
    velocity Leray-projected. Same seed, same coefficients."""
    rng = np.random.default_rng(seed)
    coeffs = to_spectral(rng.standard_normal((4,) + grid.shape), grid)
    lo, hi = band
    keep = grid.dealias_mask & (grid.xi_abs >= lo) & (grid.xi2 > 0)
    if hi is not None:
        keep &= grid.xi_abs <= hi
    return leray_project(Field4(grid, coeffs * keep))


def dealias(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    return coeffs * grid.dealias_mask


def advect_coeffs(velocity: np.ndarray, target: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Dealiased pseudospectral sum_i u^i d_i g for spectral u (3, ...) and g (C, ...)."""
    mask = grid.dealias_mask
    u = to_physical(velocity * mask, grid)
    g = target * mask
    out = np.zeros(g.shape, dtype=float)
    for i in range(3):
        if not np.any(u[i]):
            continue
        out += u[i] * to_physical(1j * grid.xi[i] * g, grid)
    return to_spectral(out, grid) * mask


def advect(f: Field4, g: Field4) -> Field4:
    """f . grad g applied to all four slots of g."""
    if f.grid != g.grid:
        raise GridMismatchError(f"advect: grid {f.grid.n} does not match {g.grid.n}")
    return Field4(f.grid, advect_coeffs(f.velocity, g.coeffs, f.grid))


def sobolev_weight(xi2: np.ndarray, s: float) -> np.ndarray:
    """|xi|^{2s} with the xi = 0 entries set to zero."""
    xi2 = np.asarray(xi2, dtype=float)
    w = np.zeros_like(xi2)
    nz = xi2 > 0
    w[nz] = xi2[nz] ** s
    return w


def scalar_product(a: np.ndarray, b: np.ndarray, grid: GridSpec, s: float = 0.0) -> complex:
    """Homogeneous H^s inner product (a | b), mean mode excluded."""
    return complex(grid.volume * np.sum(sobolev_weight(grid.xi2, s) * a * np.conj(b)))


# =========================================================
# CUTOFFS
# =========================================================
def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def chi(s):
    """Smooth cutoff, 1 on [-1/2, 1/2], supported in [-1, 1]."""
    return 1.0 - _smooth_step(2.0 * np.abs(s) - 1.0)


def phi(r):
    """Littlewood-Paley low-pass profile, 1 on [0, 3/4], supported in [0, 4/3]."""
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - 0.75) / (4.0 / 3.0 - 0.75))


def varphi(r):
    """Dyadic annulus profile phi(r/2) - phi(r), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return phi(r / 2.0) - phi(r)


# =========================================================
# TRUNCATIONS AND BLOCKS
# =========================================================
@dataclass(frozen=True)
class TruncationSpec:
    r: float
    R: float
    m: float = None
    M: float = None
    eps: float = None

    def __post_init__(self):
        if not (self.r > 0 and self.R > 0):
            raise TruncationError(f"truncation radii must be positive, got r={self.r}, R={self.R}")
        if self.r >= self.R:
            raise TruncationError(f"truncation needs r < R, got r={self.r}, R={self.R}")

    @classmethod
    def from_exponents(cls, m: float, M: float, eps: float) -> 'TruncationSpec':
        """r_eps = eps^m, R_eps = eps^-M."""
        return cls(eps ** m, eps ** (-M), m, M, eps)

    @property
    def has_exponents(self) -> bool:
        return self.m is not None and self.M is not None

    def multiplier(self, grid: GridSpec) -> np.ndarray:
        return chi(grid.xi_abs / self.R) * (1.0 - chi(grid.xih_abs / (2.0 * self.r)))

    def contains(self, xi_abs, xih_abs):
        """Membership in C_{r,R}: |xi_h| >= r and |xi| <= R."""
        return (np.asarray(xih_abs) >= self.r) & (np.asarray(xi_abs) <= self.R)

    def widened(self) -> 'TruncationSpec':
        return TruncationSpec(self.r / 2.0, 2.0 * self.R)

    def describe(self) -> dict:
        return {'r': self.r, 'R': self.R, 'm': self.m, 'M': self.M, 'eps': self.eps}


def truncate(f: Field4, spec: TruncationSpec) -> Field4:
    """P_{r,R} f = f_{r,R}(D) f."""
    return Field4(f.grid, f.coeffs * spec.multiplier(f.grid))


def anisotropic_lowpass(f: Field4, R: float, r: float) -> Field4:
    """chi(|D|/R) chi(|D_h|/r) f."""
    g = f.grid
    return Field4(g, f.coeffs * chi(g.xi_abs / R) * chi(g.xih_abs / r))


def _radius(grid: GridSpec, mode: str) -> np.ndarray:
    if mode == 'full':
        return grid.xi_abs
    if mode == 'horizontal':
        return grid.xih_abs
    raise ValueError(f"unknown block mode '{mode}' (expected full or horizontal)")


def dyadic_multiplier(grid: GridSpec, j: int, mode: str = 'full') -> np.ndarray:
    return varphi(2.0 ** (-j) * _radius(grid, mode))


def dyadic_block(f, j: int, mode: str = 'full'):
    """Homogeneous block Delta_j (or its horizontal counterpart) of a Field4 or Field1."""
    if isinstance(f, Field1):
        if mode != 'full':
            raise ValueError("profiles only have full dyadic blocks")
        return Field1(f.grid, f.coeffs * varphi(2.0 ** (-j) * np.abs(f.xi3)))
    return Field4(f.grid, f.coeffs * dyadic_multiplier(f.grid, j, mode))


def low_frequency_cutoff(f: Field4, j: int) -> Field4:
    """S_j f = phi(2^-j |D|) f."""
    return Field4(f.grid, f.coeffs * phi(2.0 ** (-j) * f.grid.xi_abs))


def dyadic_range(grid: GridSpec, mode: str = 'full') -> tuple:
    """Block indices (j_min, j_max) whose blocks sum to the identity on mean-free fields."""
    two_pi = 2 * np.pi
    if mode == 'full':
        lo = min(two_pi / L for L in grid.L)
        hi = np.sqrt(sum((np.pi * n / L) ** 2 for n, L in zip(grid.n, grid.L)))
    elif mode == 'horizontal':
        lo = min(two_pi / grid.L[0], two_pi / grid.L[1])
        hi = np.sqrt(sum((np.pi * grid.n[i] / grid.L[i]) ** 2 for i in range(2)))
    elif mode == 'vertical':
        lo = two_pi / grid.L[2]
        hi = np.pi * grid.n[2] / grid.L[2]
    else:
        raise ValueError(f"unknown block mode '{mode}'")
    j_min = int(np.floor(np.log2(0.75 * lo))) - 1
    j_max = int(np.ceil(np.log2(4.0 * hi / 3.0)))
    return j_min, j_max


def dyadic_blocks(f, mode: str = 'full'):
    """Yield (j, block) over the whole representable range."""
    grid = f.grid
    j_min, j_max = dyadic_range(grid, 'vertical' if isinstance(f, Field1) else mode)
    for j in range(j_min, j_max + 1):
        yield j, dyadic_block(f, j, mode)


# =========================================================
# SNAPSHOTS
# =========================================================
SNAPSHOT_MAGIC = 'strato-field'


def save_snapshot(field, path) -> Path:
    """Text header then little-endian complex128 payload, xi1 slowest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    if isinstance(field, Field1):
        kind, components = 'Field1', 1
        payload = field.coeffs
    else:
        kind, components = 'Field4', 4
        payload = np.moveaxis(field.coeffs, 0, -1)
    header = [
        f"format={SNAPSHOT_MAGIC}",
        f"kind={kind}",
        f"n={','.join(str(x) for x in grid.n)}",
        f"L={','.join(repr(x) for x in grid.L)}",
        f"dealias={grid.dealias!r}",
        f"components={components}",
        "endianness=little",
        "dtype=complex128",
        "order=row-major",
        "end_header",
    ]
    with open(path, 'wb') as f:
        f.write(('\n'.join(header) + '\n').encode('ascii'))
        f.write(np.ascontiguousarray(payload, dtype='<c16').tobytes(order='C'))
    return path


def load_snapshot(path):
    path = Path(path)
    raw = path.read_bytes()
    marker = b'end_header\n'
    cut = raw.find(marker)
    if cut < 0:
        raise GridMismatchError(f"{path}: snapshot header not terminated")
    meta = {}
    for line in raw[:cut].decode('ascii').splitlines():
        if '=' in line:
            key, value = line.split('=', 1)
            meta[key.strip()] = value.strip()
    if meta.get('format') != SNAPSHOT_MAGIC:
        raise GridMismatchError(f"{path}: not a strato snapshot")
    grid = GridSpec(tuple(int(x) for x in meta['n'].split(',')),
                    tuple(float(x) for x in meta['L'].split(',')),
                    float(meta['dealias']))
    data = np.frombuffer(raw[cut + len(marker):], dtype='<c16')
    if meta['kind'] == 'Field1':
        return Field1(grid, data.copy())
    expected = grid.size * 4
    if data.size != expected:
        raise GridMismatchError(f"{path}: payload has {data.size} values, expected {expected}")
    coeffs = np.moveaxis(data.reshape(grid.shape + (4,)), -1, 0)
    return Field4(grid, coeffs.astype(complex))
