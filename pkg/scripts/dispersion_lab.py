#!/usr/bin/env python3
"""
Dispersion Lab - Numerical studies of the dispersive mechanisms:
the vertical stationary-phase integral I_{alpha,beta}^R(sigma), the
oscillatory kernel I_{eps,t,t'}(xi_h, x3), Strichartz epsilon-scalings of
the linear semigroup and the heat flow on the truncation annulus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.special import roots_legendre

from run_log import log
from spectral_core import (
    ConfigError, DomainError, Field4, GridSpec, QuadratureError, ResolutionError, TruncationSpec, chi,
    leray_project, oscillating_part, random_field, to_physical, to_spectral, truncate,
)
from spectral_norms import anisotropic_norm, lebesgue_norm, time_lebesgue
from linear_stratified import PhysParams, block_semigroup, remainder_closed_form

SQRT2 = np.sqrt(2.0)
# Largest value of u / (1 + u^2)^{3/2}, attained at u = 1/sqrt(2).
G_MAX = 2.0 / (3.0 * np.sqrt(3.0))
# |g''(1/sqrt(2))| for g(u) = u / (1 + u^2)^{3/2}.
G_CURVATURE = 4.0 / SQRT2 * (1.5 ** -2.5)
KERNEL_C0 = 2.0 / np.pi


def _log(level, message):
    log(level, 'dispersion_lab', message)


# =========================================================
# RATE FITS
# =========================================================
@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float
    x_range: tuple
    n_points: int

    def describe(self) -> dict:
        return {'slope': self.slope, 'intercept': self.intercept, 'r2': self.r2,
                'x_range': list(self.x_range), 'n_points': self.n_points}


def fit_rate(x, y, min_points: int = 3) -> RateFit:
    """Least-squares line through (log10 x, log10 y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < min_points:
        raise ConfigError(f"rate fit needs at least {min_points} points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DomainError("rate fit needs positive finite samples")
    lx, ly = np.log10(x), np.log10(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    spread = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / spread if spread > 0 else 1.0
    return RateFit(float(slope), float(intercept), float(r2), (float(x.min()), float(x.max())), int(x.size))


# =========================================================
# VERTICAL STATIONARY-PHASE INTEGRAL
# =========================================================
def f_alpha(x, alpha: float):
    x = np.asarray(x, dtype=float)
    return alpha * x / (alpha ** 2 + x ** 2) ** 1.5


def f_alpha_prime(x, alpha: float):
    x = np.asarray(x, dtype=float)
    return alpha * (alpha ** 2 - 2 * x ** 2) / (alpha ** 2 + x ** 2) ** 2.5


def critical_point(alpha: float) -> float:
    return alpha / SQRT2


def f_alpha_max(alpha: float) -> float:
    return G_MAX / alpha


@dataclass(frozen=True)
class PhaseIntegralSpec:
    alpha: float
    beta: float
    R: float
    sigma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.R > 2 * self.alpha / np.sqrt(3.0):
            raise DomainError(f"need R > 2 alpha / sqrt(3), got R={self.R}, alpha={self.alpha}")

    @property
    def upper(self) -> float:
        return float(np.sqrt(self.R ** 2 - self.alpha ** 2))


def _level_crossings(alpha: float, beta: float, upper: float) -> list:
    """Points of [0, upper] where f_alpha = beta, plus the critical point."""
    xs = critical_point(alpha)
    points = []
    pieces = [(0.0, min(xs, upper))]
    if xs < upper:
        points.append(xs)
        pieces.append((xs, upper))
    for a, b in pieces:
        fa, fb = float(f_alpha(a, alpha)) - beta, float(f_alpha(b, alpha)) - beta
        if fa * fb < 0:
            points.append(brentq(lambda x: float(f_alpha(x, alpha)) - beta, a, b, xtol=1e-14))
    return sorted(p for p in points if 0 < p < upper)


def eval_I_alpha_beta(spec: PhaseIntegralSpec) -> float:
    """int_0^{sqrt(R^2 - alpha^2)} dx / (1 + sigma (f_alpha(x) - beta)^2)."""
    upper = spec.upper
    if spec.sigma == 0:
        return upper
    alpha, beta, sigma = spec.alpha, spec.beta, spec.sigma

    def integrand(x):
        return 1.0 / (1.0 + sigma * (alpha * x / (alpha ** 2 + x ** 2) ** 1.5 - beta) ** 2)

    result = quad(integrand, 0.0, upper, points=_level_crossings(alpha, beta, upper) or None,
                  epsabs=1e-10, epsrel=1e-10, limit=500, full_output=1)
    if len(result) > 3:
        raise QuadratureError(f"I(alpha={alpha}, beta={beta}, R={spec.R}, sigma={sigma}): {result[3]}")
    return float(result[0])


def sup_beta_I(alpha: float, R: float, sigma: float, points: int = 96,
               around_critical: bool = False) -> tuple:
    """(sup over beta >= 0 of I_{alpha,beta}^R(sigma), maximizing beta).

    The scan covers [0, f_alpha(x*)] uniformly plus a sigma^{-1/2} band around the degenerate
    level f_alpha(x*), then refines the best sample by golden section. around_critical=True
    keeps only the band, which isolates the degenerate branch.
    """
    fmax = f_alpha_max(alpha)
    if sigma == 0:
        return PhaseIntegralSpec(alpha, fmax, R, 0.0).upper, fmax
    band = fmax + np.linspace(-8.0, 2.0, 33) / np.sqrt(sigma)
    if not around_critical:
        band = np.concatenate([band, np.linspace(0.0, fmax, points)])
    betas = np.unique(np.maximum(band, 0.0))
    values = np.array([eval_I_alpha_beta(PhaseIntegralSpec(alpha, b, R, sigma)) for b in betas])
    i = int(values.argmax())
    best, best_beta = float(values[i]), float(betas[i])
    if 0 < i < len(betas) - 1:
        try:
            res = minimize_scalar(lambda b: -eval_I_alpha_beta(PhaseIntegralSpec(alpha, b, R, sigma)),
                                  bracket=(betas[i - 1], betas[i], betas[i + 1]), method='golden',
                                  options={'xtol': 1e-10})
            if -res.fun > best and res.x >= 0:
                best, best_beta = float(-res.fun), float(res.x)
        except ValueError:
            pass
    return best, best_beta


def sigma_decay_study(alpha: float = 1.0, R: float = 10.0, sigmas=None) -> dict:
    """Slope of log sup_beta I against log sigma over [1e2, 1e6]; the optimal rate is -1/4."""
    sigmas = np.logspace(2, 6, 9) if sigmas is None else np.asarray(sigmas, dtype=float)
    sups = [sup_beta_I(alpha, R, s)[0] for s in sigmas]
    fit = fit_rate(sigmas, sups)
    passed = abs(fit.slope + 0.25) <= 0.05
    _log('INFO', f"sup_beta I decay at alpha={alpha}, R={R}: slope {fit.slope:.4f}")
    return {'sigmas': sigmas.tolist(), 'values': sups, 'fit': fit.describe(), 'passed': bool(passed)}


def _refine(values) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2:
        return v
    mids = np.sqrt(v[:-1] * v[1:]) if np.all(v > 0) else 0.5 * (v[:-1] + v[1:])
    return np.sort(np.concatenate([v, mids]))


def _upper_sup(alphas, betas, Rs, sigmas) -> float:
    best = 0.0
    for a in alphas:
        for R in Rs:
            if not R > 2 * a / np.sqrt(3.0):
                continue
            for b in betas:
                for s in sigmas:
                    value = eval_I_alpha_beta(PhaseIntegralSpec(a, b, R, s))
                    best = max(best, value * a ** 5.5 * max(1.0, s ** 0.25) / R ** 7)
    return best


def phase_integral_upper_constant(alphas, betas, Rs, sigmas) -> dict:
    """sup of I alpha^{11/2} max(1, sigma^{1/4}) / R^7 on a lattice and on its refinement."""
    coarse = _upper_sup(alphas, betas, Rs, sigmas)
    fine = _upper_sup(_refine(alphas), _refine(betas), _refine(Rs), _refine(sigmas))
    stable = np.isfinite(fine) and fine <= 2.0 * coarse + 1e-300
    return {'coarse': coarse, 'refined': fine, 'stable': bool(stable)}


def lower_bound_witness(alphas=(0.5, 1.0, 2.0), sigmas=None, R: float = 10.0) -> dict:
    """Fitted alpha-exponent of min_sigma sup_beta I sigma^{1/4}; optimality predicts 3/2."""
    sigmas = np.logspace(3, 6, 4) if sigmas is None else np.asarray(sigmas, dtype=float)
    c0 = []
    for a in alphas:
        c0.append(min(sup_beta_I(a, R, s, around_critical=True)[0] * s ** 0.25 for s in sigmas))
    fit = fit_rate(alphas, c0, min_points=2)
    return {'alphas': list(alphas), 'c0': c0, 'fit': fit.describe(),
            'passed': bool(abs(fit.slope - 1.5) <= 0.1 and min(c0) > 0)}


# =========================================================
# OSCILLATORY KERNEL I_{eps,t,t'}
# =========================================================
GL_NODES = 8


def _kernel_integrand(xi3, alpha, x3, t, tprime, eps, params: PhysParams, R, r):
    xi2 = alpha ** 2 + xi3 ** 2
    xi_abs = np.sqrt(xi2)
    heat = -0.25 * (params.nu + params.nuprime) * (t + tprime) * xi2
    phase = x3 * xi3 + (t - tprime) / eps * alpha / xi_abs
    if not params.equal_diffusion:
        xi = np.stack([np.full_like(xi3, alpha), np.zeros_like(xi3), xi3], axis=-1)
        phase = phase - (t - tprime) * eps * remainder_closed_form(xi, params.with_eps(eps))
    cutoff = chi(xi_abs / (2 * R)) * (1.0 - chi(alpha / r))
    return np.exp(heat + 1j * phase) * cutoff / (2 * np.pi)


def _panel_sum(fn, a: float, b: float, panels: int) -> complex:
    nodes, weights = roots_legendre(GL_NODES)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = mid[:, None] + half[:, None] * nodes[None, :]
    return complex(np.sum(fn(x) * weights[None, :] * half[:, None]))


def eval_I(xi_h: float, x3: float, t: float, tprime: float, eps: float, params: PhysParams,
           spec: TruncationSpec, rtol: float = 1e-8, max_doublings: int = 6) -> complex:
    """Vertical oscillatory integral over xi3 with cutoffs chi(|xi|/2R)(1 - chi(|xi_h|/r)).

    Composite Gauss-Legendre panels no wider than 1/8 of the shortest phase period;
    the panel count doubles until two successive sums agree to rtol.
    """
    alpha = abs(float(xi_h))
    R, r = spec.R, spec.r
    if alpha >= 2 * R or float(1.0 - chi(alpha / r)) == 0.0:
        return 0j
    upper = float(np.sqrt((2 * R) ** 2 - alpha ** 2))
    sigma = abs(t - tprime) / eps
    rate = abs(x3) + sigma * G_MAX / alpha
    if not params.equal_diffusion:
        rate += abs(t - tprime) * eps * float(np.max(np.abs(remainder_closed_form(
            np.array([[alpha, 0.0, 0.0], [alpha, 0.0, upper]]), params.with_eps(eps)))))
    period = 2 * np.pi / rate if rate > 0 else 2 * upper
    panels = max(16, int(np.ceil(2 * upper / (period / 8.0))))

    def fn(x):
        return _kernel_integrand(x, alpha, x3, t, tprime, eps, params, R, r)

    previous = _panel_sum(fn, -upper, upper, panels)
    for _ in range(max_doublings):
        panels *= 2
        current = _panel_sum(fn, -upper, upper, panels)
        scale = max(abs(current), 1e-300)
        if abs(current - previous) <= rtol * scale or abs(current - previous) < 1e-15:
            return current
        previous = current
    raise QuadratureError(f"kernel quadrature did not settle at xi_h={alpha}, x3={x3}, sigma={sigma:.3g}")


def kernel_linf_bound(R: float, r: float, t: float, tprime: float, params: PhysParams) -> float:
    """C0 R exp(-(nu + nu')(t + t') r^2 / 16) with C0 = 2 / pi."""
    return KERNEL_C0 * R * np.exp(-(params.nu + params.nuprime) * (t + tprime) * r ** 2 / 16.0)


def sup_x3_kernel(xi_h: float, sigma: float, eps: float, params: PhysParams, spec: TruncationSpec,
                  points: int = 24) -> tuple:
    """sup over x3 of |I| near the degenerate stationary point, t' = 0 and t = sigma eps."""
    alpha = abs(xi_h)
    t = sigma * eps
    fmax = f_alpha_max(alpha)
    scale = (G_CURVATURE / (2 * alpha ** 3)) ** (1.0 / 3.0) * sigma ** (-2.0 / 3.0)
    betas = fmax + np.linspace(-6.0, 2.0, points) * scale

    def modulus(beta):
        return abs(eval_I(alpha, sigma * beta, t, 0.0, eps, params, spec))

    values = np.array([modulus(b) for b in betas])
    i = int(values.argmax())
    best, best_beta = float(values[i]), float(betas[i])
    if 0 < i < len(betas) - 1:
        try:
            res = minimize_scalar(lambda b: -modulus(b), bracket=(betas[i - 1], betas[i], betas[i + 1]),
                                  method='golden', options={'xtol': 1e-6 * scale})
            if -res.fun > best:
                best, best_beta = float(-res.fun), float(res.x)
        except ValueError:
            pass
    return best, sigma * best_beta


def kernel_decay_study(xi_h: float = 1.0, sigmas=None, eps: float = 1e-8,
                       params: PhysParams = None, spec: TruncationSpec = None) -> dict:
    """Fitted exponent of sup_x3 |I| in sigma = |t - t'| / eps; at most -1/4 (+0.05) expected."""
    params = params or PhysParams(1.0, 1.0, eps)
    spec = spec or TruncationSpec(0.5, 1.0)
    sigmas = np.logspace(1, 5, 9) if sigmas is None else np.asarray(sigmas, dtype=float)
    sups = [sup_x3_kernel(xi_h, s, eps, params, spec)[0] for s in sigmas]
    fit = fit_rate(sigmas, sups)
    bounds = [kernel_linf_bound(spec.R, spec.r, s * eps, 0.0, params) for s in sigmas]
    within = all(v <= b * (1 + 1e-12) for v, b in zip(sups, bounds))
    _log('INFO', f"kernel decay at xi_h={xi_h}: slope {fit.slope:.4f}")
    return {'sigmas': sigmas.tolist(), 'values': sups, 'fit': fit.describe(),
            'linf_bound_holds': bool(within), 'passed': bool(fit.slope <= -0.25 + 0.05 and within)}


# =========================================================
# STRICHARTZ SCALINGS
# =========================================================
def strichartz_exponent(mode: str, index: float, p: float, theta: float = 1.0,
                        equal_diffusion: bool = True, d: float = 0.0) -> dict:
    """Theoretical eps-exponent and admissible time exponents for the linear semigroup.

    mode 'isotropic': index is the Lebesgue exponent r; 'anisotropic': index is m in L^{m,2}_{v,h}.
    """
    if mode not in ('isotropic', 'anisotropic'):
        raise ValueError(f"mode must be isotropic or anisotropic, got '{mode}'")
    if index < 2 or (mode == 'anisotropic' and equal_diffusion and index == 2):
        raise DomainError(f"spatial exponent out of range: {index}")
    if not 0 <= theta <= 1:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    gain = 1.0 - 2.0 / index
    if equal_diffusion:
        exponent = (theta / 4 if mode == 'isotropic' else theta / 8) * gain
        bound = 4.0 if mode == 'isotropic' else 8.0
        p_max = float('inf') if theta * gain == 0 else bound / (theta * gain)
    else:
        exponent = gain / 8
        p_max = float('inf') if gain == 0 else 8.0 / gain
    out = {'mode': mode, 'index': index, 'p': p, 'theta': theta, 'equal_diffusion': equal_diffusion,
           'exponent': exponent, 'p_max': p_max, 'admissible': bool(1 <= p <= p_max)}
    if equal_diffusion:
        if mode == 'isotropic':
            out['regularity'] = d + 1.5 - 3.0 / index - 2.0 / p + theta / 2 * gain
        else:
            out['regularity'] = d + 0.5 - 1.0 / index - 2.0 / p + theta / 4 * gain
    return out


def vertical_reach(t_end: float, eps: float, r_h: float) -> float:
    """Farthest vertical distance covered by t_end by a wave with |xi_h| >= r_h.

    The vertical group velocity of |xi_h| / (eps |xi|) is -f_{|xi_h|}(xi3) / eps, at most
    G_MAX / (eps |xi_h|).
    """
    if not (t_end >= 0 and eps > 0 and r_h > 0):
        raise DomainError(f"reach needs t_end >= 0, eps > 0, r_h > 0; got {t_end}, {eps}, {r_h}")
    return G_MAX * t_end / (eps * r_h)


def dispersive_grid(spec: TruncationSpec, t_end: float, eps_min: float,
                    L_h: float = 2 * np.pi) -> GridSpec:
    """Horizontally periodic grid whose vertical period no wave of C_{r,R} wraps before t_end.

    Every axis resolves |xi| <= R inside the dealiased band.
    """
    n_h = 2 * int(np.ceil(1.5 * spec.R * L_h / (2 * np.pi)))
    dz = np.pi / (2.0 * spec.R)
    need = 2.0 * vertical_reach(t_end, eps_min, 2 * np.pi / L_h) + 2.0 * L_h
    n3 = int(2 ** np.ceil(np.log2(need / dz)))
    return GridSpec((n_h, n_h, n3), (L_h, L_h, n3 * dz))


def localized_packet(grid: GridSpec, spec: TruncationSpec, seed: int = 0, width: float = 1.0) -> Field4:
    """Random oscillating field in C_{r,R}, Gaussian-localised in x3 around mid-height."""
    f = random_field(grid, seed, band=(spec.r, spec.R))
    envelope = np.exp(-0.5 * ((grid.x3 - 0.5 * grid.L[2]) / width) ** 2)
    local = to_spectral(to_physical(f.coeffs, grid) * envelope, grid)
    return oscillating_part(truncate(leray_project(Field4(grid, local)), spec))


def _content_min_horizontal(f: Field4) -> float:
    weight = np.max(np.abs(f.coeffs), axis=0)
    live = (weight > 1e-14 * weight.max()) & (f.grid.xih_abs > 0)
    if not live.any():
        raise DomainError("Strichartz data has no mode with xi_h != 0")
    return float(f.grid.xih_abs[live].min())


def measure_strichartz_scaling(f0: Field4, params: PhysParams, eps_list, mode: str, index: float,
                               p: float, theta: float = 1.0, t_end: float = 1.0, n_times: int = 64,
                               spec: TruncationSpec = None) -> dict:
    """Fit log ||W_eps||_{L^p_t X} against log eps for the free linear flow of the oscillating part of f0.

    f0 must live on a grid whose vertical period outruns every wave up to t_end (see
    dispersive_grid): on a short period the waves wrap around and the norms stop decaying.
    All eps share one time grid, geometric from 1e-3 min(eps) so the fastest early decay is resolved.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 4:
        raise ConfigError(f"Strichartz scaling needs at least 4 eps values, got {len(eps_list)}")
    theory = strichartz_exponent(mode, index, p, theta, params.equal_diffusion)
    data = oscillating_part(f0 if spec is None else truncate(f0, spec))
    grid = data.grid
    reach = vertical_reach(t_end, min(eps_list), _content_min_horizontal(data))
    if grid.L[2] < 2.0 * reach:
        raise ResolutionError(f"vertical period {grid.L[2]:.4g} is shorter than twice the wave reach "
                              f"{reach:.4g}; build the data on dispersive_grid")
    times = np.concatenate([[0.0], np.geomspace(1e-3 * min(eps_list), t_end, n_times)])
    values = []
    for eps in eps_list:
        flow = params.with_eps(eps)
        per_time = []
        for t in times:
            w = block_semigroup(data, t, flow).coeffs
            if mode == 'isotropic':
                per_time.append(lebesgue_norm(w, grid, index))
            else:
                per_time.append(anisotropic_norm(w, grid, index, 2.0))
        values.append(time_lebesgue(per_time, times, p))
    fit = fit_rate(eps_list, values, min_points=4)
    passed = fit.slope >= theory['exponent'] - 0.05
    _log('INFO', f"Strichartz {mode} (p={p}, index={index}) on {grid.n}: measured {fit.slope:.4f}, "
                 f"theory {theory['exponent']:.4f}")
    return {'eps': eps_list, 'values': values, 'fit': fit.describe(), 'theory': theory,
            'reach': reach, 'grid': grid.describe(), 'passed': bool(passed)}


# =========================================================
# HEAT FLOW ON THE ANNULUS
# =========================================================
def check_heat_annulus(r: float, R: float, p: float, fields, times) -> dict:
    """Fitted C in ||e^{t Delta} u||_{L^p} <= C (R^3 / r^4) e^{-t r^2 / 2} ||u||_{L^p}."""
    spec = TruncationSpec(r, R)
    worst = 0.0
    for f in fields:
        u = truncate(f, spec)
        base = lebesgue_norm(u.coeffs, u.grid, p)
        if base == 0:
            continue
        for t in times:
            flowed = u.coeffs * np.exp(-u.grid.xi2 * t)
            ratio = lebesgue_norm(flowed, u.grid, p) / base * np.exp(t * r ** 2 / 2)
            worst = max(worst, ratio)
    constant = worst * r ** 4 / R ** 3
    return {'r': r, 'R': R, 'p': p, 'max_ratio': worst, 'constant': constant,
            'passed': bool(np.isfinite(constant))}
