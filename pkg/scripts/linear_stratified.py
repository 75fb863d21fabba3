#!/usr/bin/env python3
"""
Linear Stratified - Fourier symbol of the Leray-projected linear operator
L - eps^{-1} P B, its eigenstructure, remainder bounds, spectral projectors
and exact semigroup propagation on a periodic grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg

from run_log import log
from spectral_core import (
    DomainError, Field4, GridSpec, TruncationSpec, stratified_part,
)

COND_MAX = 1e8
SQRT2 = np.sqrt(2.0)


# =========================================================
# PARAMETERS
# =========================================================
@dataclass(frozen=True)
class PhysParams:
    nu: float = 1.0
    nuprime: float = 1.0
    eps: float = 0.1
    kappa: float = 1.0

    def __post_init__(self):
        for name in ('nu', 'nuprime', 'eps'):
            value = getattr(self, name)
            if not value > 0:
                raise DomainError(f"{name} must be positive, got {value}")
        if self.kappa < 0:
            raise DomainError(f"kappa must be nonnegative, got {self.kappa}")

    @property
    def nu0(self) -> float:
        return min(self.nu, self.nuprime)

    @property
    def equal_diffusion(self) -> bool:
        return self.nu == self.nuprime

    def with_eps(self, eps: float) -> 'PhysParams':
        return replace(self, eps=eps)

    def describe(self) -> dict:
        return {'nu': self.nu, 'nuprime': self.nuprime, 'eps': self.eps, 'kappa': self.kappa}


def epsilon_one(params: PhysParams, m: float, M: float) -> float:
    """Threshold below which the eigen expansion on C_{eps^m, eps^-M} is guaranteed."""
    if 3 * M + m >= 1:
        raise DomainError(f"truncation exponents need 3M + m < 1, got m={m}, M={M}")
    if params.equal_diffusion:
        return float('inf')
    return float((SQRT2 / abs(params.nu - params.nuprime)) ** (1.0 / (1.0 - (3 * M + m))))


# =========================================================
# SYMBOL
# =========================================================
def symbol_batch(xi: np.ndarray, params: PhysParams) -> np.ndarray:
    """The 4x4 symbol B(xi, eps) for an array of wavevectors (..., 3); xi must be nonzero."""
    xi = np.asarray(xi, dtype=float)
    x1, x2, x3 = xi[..., 0], xi[..., 1], xi[..., 2]
    a2 = x1 ** 2 + x2 ** 2 + x3 ** 2
    h2 = x1 ** 2 + x2 ** 2
    nu, nup, eps = params.nu, params.nuprime, params.eps
    B = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    B[..., 0, 0] = -nu * (x2 ** 2 + x3 ** 2)
    B[..., 0, 1] = nu * x1 * x2
    B[..., 0, 2] = nu * x1 * x3
    B[..., 0, 3] = x1 * x3 / (eps * a2)
    B[..., 1, 0] = nu * x1 * x2
    B[..., 1, 1] = -nu * (x1 ** 2 + x3 ** 2)
    B[..., 1, 2] = nu * x2 * x3
    B[..., 1, 3] = x2 * x3 / (eps * a2)
    B[..., 2, 0] = nu * x1 * x3
    B[..., 2, 1] = nu * x2 * x3
    B[..., 2, 2] = -nu * h2
    B[..., 2, 3] = -h2 / (eps * a2)
    B[..., 3, 2] = 1.0 / eps
    B[..., 3, 3] = -nup * a2
    return B


def assemble_symbol(xi, params: PhysParams) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise DomainError("symbol is undefined at xi = 0 (mean mode)")
    return symbol_batch(xi[None], params)[0]


# Constant-coefficient skew coupling B acting on (v, theta).
COUPLING = np.array([[0, 0, 0, 0],
                     [0, 0, 0, 0],
                     [0, 0, 0, 1],
                     [0, 0, -1, 0]], dtype=float)


def apply_coupling(f: Field4) -> Field4:
    return Field4(f.grid, np.einsum('ij,j...->i...', COUPLING, f.coeffs))


def viscous_eigenvalue(xi2, params: PhysParams):
    return -params.nu * xi2


def oscillation_frequency(xi, params: PhysParams):
    """|xi_h| / (eps |xi|)."""
    xi = np.asarray(xi, dtype=float)
    h = np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2)
    return h / (params.eps * np.sqrt(np.sum(xi ** 2, axis=-1)))


def damping_gap(xi, params: PhysParams):
    """(nu - nu') |xi|^2 / 2."""
    xi = np.asarray(xi, dtype=float)
    return 0.5 * (params.nu - params.nuprime) * np.sum(xi ** 2, axis=-1)


def remainder_closed_form(xi, params: PhysParams):
    """D from the 2x2 block of the symbol on span{P e3, theta}."""
    b = oscillation_frequency(xi, params)
    d = damping_gap(xi, params)
    if np.any(b <= np.abs(d)):
        raise DomainError("conjugate pair is real here: |xi_h|/(eps|xi|) <= |nu - nu'| |xi|^2 / 2")
    return d ** 2 / (params.eps * (b + np.sqrt(b ** 2 - d ** 2)))


# =========================================================
# NUMERIC EIGENDECOMPOSITION (independent oracle)
# =========================================================
@dataclass
class EigenDecomposition:
    eigenvalues: np.ndarray
    projectors: np.ndarray
    condition: float
    defective: bool


def _label_order(w: np.ndarray) -> np.ndarray:
    """lambda1 nearest 0, lambda2 least imaginary, lambda3 Im > 0, lambda4 the rest."""
    rows = np.arange(w.shape[0])
    i1 = np.abs(w).argmin(axis=-1)
    im_abs = np.abs(w.imag).copy()
    im_abs[rows, i1] = np.inf
    i2 = im_abs.argmin(axis=-1)
    im = w.imag.copy()
    im[rows, i1] = -np.inf
    im[rows, i2] = -np.inf
    i3 = im.argmax(axis=-1)
    i4 = 6 - i1 - i2 - i3
    return np.stack([i1, i2, i3, i4], axis=-1)


def eig_sorted(mats: np.ndarray) -> tuple:
    """Batched eigen systems (lam (B,4), projectors (B,4,4,4), condition (B,))."""
    mats = np.asarray(mats, dtype=complex)
    w, v = np.linalg.eig(mats)
    order = _label_order(w)
    lam = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(v, order[:, None, :], axis=-1)
    with np.errstate(all='ignore'):
        cond = np.linalg.cond(V)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    good = cond < COND_MAX
    W = np.zeros_like(V)
    if good.any():
        W[good] = np.linalg.inv(V[good])
    proj = np.einsum('bik,bkj->bkij', V, W)
    return lam, proj, cond


def numeric_eigendecomposition(matrix) -> EigenDecomposition:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (4, 4):
        raise DomainError(f"expected a 4x4 matrix, got shape {matrix.shape}")
    lam, proj, cond = eig_sorted(matrix[None])
    return EigenDecomposition(lam[0], proj[0], float(cond[0]), bool(cond[0] >= COND_MAX))


# =========================================================
# VALIDITY REGION
# =========================================================
def validity_mask(xi: np.ndarray, params: PhysParams, spec: TruncationSpec = None) -> np.ndarray:
    """Where the eigen expansion applies: xi_h != 0, and for nu != nu' also xi in C_{r,R}."""
    xi = np.asarray(xi, dtype=float)
    a = np.sqrt(np.sum(xi ** 2, axis=-1))
    h = np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2)
    ok = (a > 0) & (h > 0)
    if params.equal_diffusion:
        return ok
    if spec is None:
        return np.zeros_like(ok)
    ok &= spec.contains(a, h)
    with np.errstate(divide='ignore', invalid='ignore'):
        b = np.where(a > 0, h / (params.eps * np.where(a > 0, a, 1.0)), 0.0)
    return ok & (b > np.abs(0.5 * (params.nu - params.nuprime) * a ** 2))


def _check_eps_threshold(params: PhysParams, spec: TruncationSpec):
    if params.equal_diffusion or spec is None or not spec.has_exponents:
        return
    e1 = epsilon_one(params, spec.m, spec.M)
    if params.eps > e1:
        raise DomainError(f"eps={params.eps} exceeds eps1={e1:.4g}: expansion not guaranteed")


def in_validity_region(xi, params: PhysParams, spec: TruncationSpec = None) -> bool:
    xi = np.asarray(xi, dtype=float)
    if not validity_mask(xi[None], params, spec)[0]:
        return False
    try:
        _check_eps_threshold(params, spec)
    except DomainError:
        return False
    return True


def _require_valid(xi, params: PhysParams, spec: TruncationSpec):
    xi = np.asarray(xi, dtype=float)
    if not validity_mask(xi[None], params, spec)[0]:
        where = 'xi_h = 0' if not np.any(xi[:2]) else 'outside C_{r,R}'
        raise DomainError(f"xi={tuple(xi)} is outside the eigen validity region ({where})")
    _check_eps_threshold(params, spec)


# =========================================================
# ANALYTIC EIGENSTRUCTURE
# =========================================================
@dataclass
class ModeEigenSystem:
    xi: np.ndarray
    eigenvalues: np.ndarray
    projectors: np.ndarray
    remainder: float


def analytic_eigenvalues(xi, params: PhysParams, spec: TruncationSpec = None) -> tuple:
    """(lambda1..lambda4, D) with D read off the numeric spectrum when nu != nu'."""
    xi = np.asarray(xi, dtype=float)
    _require_valid(xi, params, spec)
    a2 = float(np.sum(xi ** 2))
    b = float(oscillation_frequency(xi, params))
    if params.equal_diffusion:
        D = 0.0
    else:
        oracle = numeric_eigendecomposition(assemble_symbol(xi, params))
        D = (b - oracle.eigenvalues[2].imag) / params.eps
    lam3 = -0.5 * (params.nu + params.nuprime) * a2 + 1j * (b - params.eps * D)
    lams = np.array([0.0, viscous_eigenvalue(a2, params), lam3, np.conj(lam3)], dtype=complex)
    return lams, D


def analytic_eigenvalues_batch(xi: np.ndarray, params: PhysParams) -> tuple:
    """Vectorised analytic spectrum for valid wavevectors (K, 3) -> ((K, 4), D (K,))."""
    xi = np.asarray(xi, dtype=float)
    a2 = np.sum(xi ** 2, axis=-1)
    b = oscillation_frequency(xi, params)
    if params.equal_diffusion:
        D = np.zeros_like(a2)
    else:
        lam_num, _, _ = eig_sorted(symbol_batch(xi, params))
        D = (b - lam_num[:, 2].imag) / params.eps
    lam3 = -0.5 * (params.nu + params.nuprime) * a2 + 1j * (b - params.eps * D)
    lams = np.stack([np.zeros_like(lam3), viscous_eigenvalue(a2, params) + 0j, lam3, np.conj(lam3)], axis=-1)
    return lams, D


def projector_p2(xi) -> np.ndarray:
    """Closed form of P_2: (xi_h^perp xi_h^perp^T) / |xi_h|^2 on the horizontal slots."""
    xi = np.asarray(xi, dtype=float)
    h2 = xi[0] ** 2 + xi[1] ** 2
    if h2 == 0:
        raise DomainError("P_2 needs xi_h != 0")
    P = np.zeros((4, 4), dtype=complex)
    P[0, 0] = xi[1] ** 2 / h2
    P[0, 1] = -xi[0] * xi[1] / h2
    P[1, 0] = -xi[0] * xi[1] / h2
    P[1, 1] = xi[0] ** 2 / h2
    return P


def spectral_projector(k: int, xi, params: PhysParams, spec: TruncationSpec = None) -> np.ndarray:
    if k not in (1, 2, 3, 4):
        raise ValueError(f"projector index must be 1..4, got {k}")
    xi = np.asarray(xi, dtype=float)
    if k == 2:
        return projector_p2(xi)
    _require_valid(xi, params, spec)
    oracle = numeric_eigendecomposition(assemble_symbol(xi, params))
    if oracle.defective:
        raise DomainError(f"eigenvector matrix at xi={tuple(xi)} is ill-conditioned ({oracle.condition:.2e})")
    return oracle.projectors[k - 1]


def mode_eigen_system(xi, params: PhysParams, spec: TruncationSpec = None) -> ModeEigenSystem:
    lams, D = analytic_eigenvalues(xi, params, spec)
    oracle = numeric_eigendecomposition(assemble_symbol(xi, params))
    projectors = oracle.projectors.copy()
    projectors[1] = projector_p2(xi)
    return ModeEigenSystem(np.asarray(xi, dtype=float), lams, projectors, D)


# =========================================================
# REMAINDER BOUNDS
# =========================================================
def remainder_bounds(xi, params: PhysParams) -> dict:
    xi = np.asarray(xi, dtype=float)
    a = np.sqrt(np.sum(xi ** 2, axis=-1))
    h = np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2)
    dnu2 = (params.nu - params.nuprime) ** 2
    return {
        'D': dnu2 * a ** 5 / (4 * SQRT2 * h),
        'dD_h': dnu2 * 9 / (2 * SQRT2) * a ** 5 / h ** 2,
        'dD_3': dnu2 * 15 / (4 * SQRT2) * a ** 4 / h,
    }


def check_remainder_bounds(xis, params: PhysParams, spec: TruncationSpec = None,
                           step: float = 1e-4, tolerance: float = 1e-6) -> dict:
    """Check |D| and its xi derivatives against the printed bounds on a sample set."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    report = {'samples': len(xis), 'violations': [],
              'max_ratio': {'D': 0.0, 'dD_h': 0.0, 'dD_3': 0.0}, 'oracle_gap': 0.0}
    if params.equal_diffusion:
        report['trivial'] = True
        return report
    _check_eps_threshold(params, spec)
    valid = validity_mask(xis, params, spec)
    if not valid.all():
        bad = xis[~valid][0]
        raise DomainError(f"{int((~valid).sum())} samples outside the validity region, e.g. xi={tuple(bad)}")

    _, D_num = analytic_eigenvalues_batch(xis, params)
    D_closed = remainder_closed_form(xis, params)
    scale = np.maximum(np.abs(D_closed), 1e-300)
    report['oracle_gap'] = float(np.max(np.abs(D_num - D_closed) / scale))

    bounds = remainder_bounds(xis, params)
    hstep = step * np.sqrt(np.sum(xis ** 2, axis=-1))
    derivs = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        plus = remainder_closed_form(xis + hstep[:, None] * e, params)
        minus = remainder_closed_form(xis - hstep[:, None] * e, params)
        derivs.append((plus - minus) / (2 * hstep))
    checks = {
        'D': (np.abs(D_num), bounds['D']),
        'dD_h': (np.maximum(np.abs(derivs[0]), np.abs(derivs[1])), bounds['dD_h']),
        'dD_3': (np.abs(derivs[2]), bounds['dD_3']),
    }
    for name, (value, bound) in checks.items():
        ratio = value / bound
        report['max_ratio'][name] = float(ratio.max())
        for i in np.flatnonzero(ratio > 1 + tolerance):
            report['violations'].append({
                'xi': tuple(float(x) for x in xis[i]), 'quantity': name,
                'value': float(value[i]), 'bound': float(bound[i]),
            })
    report['trivial'] = False
    return report


# =========================================================
# GRID PROPAGATOR
# =========================================================
def _phi_series(z: np.ndarray, order: int) -> np.ndarray:
    """phi_order(z) = sum_k z^k / (k + order)!, exact formula away from 0."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-2
    zs = z[small]
    acc = np.zeros_like(zs)
    fact = float(np.prod(np.arange(1, order + 1)))
    term = np.ones_like(zs) / fact
    for k in range(8):
        acc += term
        term = term * zs / (k + order + 1)
    out[small] = acc
    zl = z[~small]
    if order == 1:
        out[~small] = np.expm1(zl) / zl
    else:
        out[~small] = (np.expm1(zl) - zl) / zl ** 2
    return out


class LinearPropagator:
    """Per-mode exponentials of the symbol on one grid, mean mode held fixed."""

    def __init__(self, grid: GridSpec, params: PhysParams, spec: TruncationSpec = None):
        self.grid = grid
        self.params = params
        self.spec = spec
        xi = np.moveaxis(grid.xi, 0, -1).reshape(-1, 3)
        self.n_modes = xi.shape[0]
        self.live_idx = np.flatnonzero(grid.xi2.reshape(-1) > 0)
        live_xi = xi[self.live_idx]
        self.symbols = symbol_batch(live_xi, params)
        self.lam, self.proj, cond = eig_sorted(self.symbols)
        self.eigen = validity_mask(live_xi, params, spec) & (cond < COND_MAX)
        self._log('DEBUG', f"propagator {grid.n}: {int(self.eigen.sum())} eigen modes, "
                           f"{int((~self.eigen).sum())} matrix-exponential modes")

    def _log(self, level, message):
        log(level, 'linear_stratified', message)

    def _identity(self) -> np.ndarray:
        return np.broadcast_to(np.eye(4, dtype=complex), (self.n_modes, 4, 4)).copy()

    def exponential(self, t: float) -> np.ndarray:
        """e^{t B(xi)} for every mode, shape (N, 4, 4)."""
        out = self._identity()
        eig_idx = self.live_idx[self.eigen]
        out[eig_idx] = np.einsum('nk,nkij->nij', np.exp(t * self.lam[self.eigen]), self.proj[self.eigen])
        fb = ~self.eigen
        if fb.any():
            out[self.live_idx[fb]] = scipy.linalg.expm(t * self.symbols[fb])
        return out

    def phi_functions(self, dt: float) -> tuple:
        """(e^{X}, phi1(X), phi2(X)) with X = dt B(xi), for exact piecewise-linear forcing."""
        E = self._identity()
        P1 = self._identity()
        P2 = self._identity() * 0.5
        eig_idx = self.live_idx[self.eigen]
        z = dt * self.lam[self.eigen]
        proj = self.proj[self.eigen]
        E[eig_idx] = np.einsum('nk,nkij->nij', np.exp(z), proj)
        P1[eig_idx] = np.einsum('nk,nkij->nij', _phi_series(z, 1), proj)
        P2[eig_idx] = np.einsum('nk,nkij->nij', _phi_series(z, 2), proj)
        fb = ~self.eigen
        if fb.any():
            X = dt * self.symbols[fb]
            aug = np.zeros((X.shape[0], 12, 12), dtype=complex)
            eye = np.eye(4)
            aug[:, :4, :4] = X
            aug[:, :4, 4:8] = eye
            aug[:, 4:8, 8:12] = eye
            ex = scipy.linalg.expm(aug)
            idx = self.live_idx[fb]
            E[idx] = ex[:, :4, :4]
            P1[idx] = ex[:, :4, 4:8]
            P2[idx] = ex[:, :4, 8:12]
        return E, P1, P2

    def projector(self, k: int) -> tuple:
        """(P_k per mode (N, 4, 4), mask of modes where it is defined)."""
        out = np.zeros((self.n_modes, 4, 4), dtype=complex)
        mask = np.zeros(self.n_modes, dtype=bool)
        idx = self.live_idx[self.eigen]
        out[idx] = self.proj[self.eigen, k - 1]
        mask[idx] = True
        return out, mask

    @staticmethod
    def apply(mats: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        flat = coeffs.reshape(4, -1).T
        return np.einsum('nij,nj->ni', mats, flat).T.reshape(coeffs.shape)


@lru_cache(maxsize=16)
def get_propagator(grid: GridSpec, params: PhysParams, spec: TruncationSpec = None) -> LinearPropagator:
    return LinearPropagator(grid, params, spec)


def propagate_semigroup(f: Field4, t: float, params: PhysParams, spec: TruncationSpec = None) -> Field4:
    """f(t) = sum_k e^{t lambda_k} P_k f(0) mode-wise, matrix exponential off the eigen region."""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    if t == 0:
        return f.copy()
    prop = get_propagator(f.grid, params, spec)
    return Field4(f.grid, prop.apply(prop.exponential(t), f.coeffs))


@lru_cache(maxsize=4)
def _wave_geometry(grid: GridSpec) -> tuple:
    """(|xi|^2, |xi_h| / |xi|, unit vector P e3 / |P e3|) per mode, zero where xi_h = 0."""
    xi = grid.xi
    live = grid.xih_abs > 0
    a = np.where(live, grid.xi_abs, 1.0)
    h = grid.xih_abs
    denom = np.where(live, a * h, 1.0)
    e_w = np.stack([-xi[0] * xi[2] / denom, -xi[1] * xi[2] / denom, h / a]) * live
    return grid.xi2, np.where(live, h / a, 0.0), e_w


def block_semigroup(f: Field4, t: float, params: PhysParams) -> Field4:
    """e^{tL} on a divergence-free field through the 2x2 block on span{P e3, theta}.

    The P e3 coordinate c and theta obey c' = -nu|xi|^2 c - w theta, theta' = w c - nu'|xi|^2 theta
    with w = |xi_h| / (eps |xi|); the rest of the velocity decays at -nu|xi|^2. Exact at every mode,
    and its memory grows with the grid only, so it reaches grids the 4x4 propagator cannot.
    """
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    a2, ratio, e_w = _wave_geometry(f.grid)
    v = f.coeffs[:3]
    theta = f.coeffs[3]
    c = np.sum(e_w * v, axis=0)
    omega = ratio / params.eps
    gap = 0.5 * (params.nu - params.nuprime) * a2
    freq = np.sqrt(omega ** 2 - gap ** 2 + 0j)
    cos = np.cos(freq * t)
    # sin(freq t) / freq, equal to t at freq = 0
    sinc = t * np.sinc(freq * t / np.pi)
    decay = np.exp(-0.5 * (params.nu + params.nuprime) * a2 * t)
    c_t = decay * (cos * c - sinc * (gap * c + omega * theta))
    out = np.empty_like(f.coeffs)
    out[:3] = np.exp(-params.nu * a2 * t) * (v - e_w * c) + e_w * c_t
    out[3] = decay * (cos * theta + sinc * (omega * c + gap * theta))
    return Field4(f.grid, out)


def apply_projector(k: int, f: Field4, params: PhysParams, spec: TruncationSpec = None,
                    tolerance: float = 1e-12) -> Field4:
    if k not in (1, 2, 3, 4):
        raise ValueError(f"projector index must be 1..4, got {k}")
    if k == 2:
        return stratified_part(f)
    _check_eps_threshold(params, spec)
    prop = get_propagator(f.grid, params, spec)
    mats, mask = prop.projector(k)
    flat = f.coeffs.reshape(4, -1)
    outside = np.linalg.norm(flat[:, ~mask])
    total = np.linalg.norm(flat)
    if total > 0 and outside > tolerance * total:
        raise DomainError(f"field has content outside the eigen validity region "
                          f"(relative {outside / total:.2e}); truncate it first")
    return Field4(f.grid, prop.apply(mats, f.coeffs))


def divergence_free_basis(xi: np.ndarray) -> np.ndarray:
    """Orthonormal basis (K, 4, 3) of {(v, theta): xi . v = 0} for xi_h != 0."""
    xi = np.asarray(xi, dtype=float)
    a = np.sqrt(np.sum(xi ** 2, axis=-1))
    h = np.sqrt(xi[:, 0] ** 2 + xi[:, 1] ** 2)
    Q = np.zeros(xi.shape[:-1] + (4, 3))
    Q[:, 0, 0] = -xi[:, 1] / h
    Q[:, 1, 0] = xi[:, 0] / h
    # P e3 / |P e3| = (-xi1 xi3, -xi2 xi3, |xi_h|^2) / (|xi| |xi_h|)
    Q[:, 0, 1] = -xi[:, 0] * xi[:, 2] / (a * h)
    Q[:, 1, 1] = -xi[:, 1] * xi[:, 2] / (a * h)
    Q[:, 2, 1] = h / a
    Q[:, 3, 2] = 1.0
    return Q


def projector_norm_bounds(grid: GridSpec, params: PhysParams, spec: TruncationSpec = None) -> dict:
    """Operator norms of P_2..P_4 on the divergence-free subspace of each eigen-valid mode."""
    prop = get_propagator(grid, params, spec)
    xi = np.moveaxis(grid.xi, 0, -1).reshape(-1, 3)[prop.live_idx[prop.eigen]]
    Q = divergence_free_basis(xi)
    if params.equal_diffusion or spec is None:
        bound = 1.0
    else:
        bound = SQRT2 * spec.R / spec.r
    report = {'modes': int(len(xi)), 'bound': bound, 'projectors': {}}
    for k in (2, 3, 4):
        P = prop.proj[prop.eigen, k - 1]
        if k == 2:
            P = np.array([projector_p2(x) for x in xi]) if len(xi) else P
        norms = np.linalg.norm(P @ Q, ord=2, axis=(-2, -1)) if len(xi) else np.zeros(0)
        worst = float(norms.max()) if norms.size else 0.0
        if params.equal_diffusion:
            ok = bool(np.all(np.abs(norms - 1.0) < 1e-8))
        else:
            ok = worst <= bound * (1 + 1e-12)
        report['projectors'][k] = {'max_norm': worst, 'passed': ok}
    report['passed'] = all(v['passed'] for v in report['projectors'].values())
    return report
