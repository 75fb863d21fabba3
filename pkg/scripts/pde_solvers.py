#!/usr/bin/env python3
"""
PDE Solvers - Time integration of the stratified system, its limit
systems (horizontal Navier-Stokes and vertical heat flow), the filtering
waves and the Stokes-type system, plus the difference diagnostics D_eps
and delta_eps.

The stiff linear part is applied exactly mode by mode (integrating factor
from linear_stratified); only advection is explicit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid, cumulative_trapezoid

from run_log import log
from spectral_core import (
    CFLViolationError, ConfigError, DomainError, Field1, Field4, GridMismatchError,
    GridSpec, NumericalBlowUpError, TruncationError, TruncationSpec,
    advect_coeffs, decompose_stratified_oscillating, horizontal_leray,
    inverse_horizontal_laplacian, leray_project, oscillating_part, stratified_part,
    to_physical, to_spectral, truncate,
)
from spectral_norms import (
    NormSpec, chemin_lerner_norm, hs_norm, inhomogeneous_hs_norm, norm, parse_norm,
    profile_besov_norm, profile_hs_norm,
)
from linear_stratified import PhysParams, get_propagator

SCHEMES = ('ifrk2', 'ifrk4')


def _log(level, message):
    log(level, 'pde_solvers', message)


# =========================================================
# CONFIGURATION AND DATA
# =========================================================
@dataclass
class SolverConfig:
    dt: float = 1e-2
    t_end: float = 0.5
    scheme: str = 'ifrk4'
    cfl: float = 0.5
    snapshot_every: int = 1
    nonlinear: bool = True
    norms: tuple = ('L2',)

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"run.dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError(f"run.t_end must be nonnegative, got {self.t_end}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"run.scheme must be one of {SCHEMES}, got '{self.scheme}'")
        if not self.cfl > 0:
            raise ConfigError(f"run.cfl must be positive, got {self.cfl}")
        if int(self.snapshot_every) < 1:
            raise ConfigError(f"run.snapshot_every must be >= 1, got {self.snapshot_every}")
        self.snapshot_every = int(self.snapshot_every)
        self.norms = tuple(self.norms)
        for token in self.norms:
            parse_norm(token)

    @property
    def n_steps(self) -> int:
        """Steps of (nearly) dt landing exactly on t_end."""
        if self.t_end == 0:
            return 0
        return max(1, int(np.ceil(self.t_end / self.dt - 1e-9)))

    @property
    def step(self) -> float:
        return self.t_end / self.n_steps if self.n_steps else self.dt

    @property
    def step_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def with_dt(self, dt: float) -> 'SolverConfig':
        return SolverConfig(dt, self.t_end, self.scheme, self.cfl, self.snapshot_every,
                            self.nonlinear, self.norms)

    def every_step(self) -> 'SolverConfig':
        return SolverConfig(self.dt, self.t_end, self.scheme, self.cfl, 1, self.nonlinear, self.norms)

    def describe(self) -> dict:
        return {'dt': self.dt, 't_end': self.t_end, 'scheme': self.scheme, 'cfl': self.cfl,
                'snapshot_every': self.snapshot_every, 'nonlinear': self.nonlinear,
                'norms': list(self.norms)}


def _relative(part: np.ndarray, whole: np.ndarray) -> float:
    scale = np.linalg.norm(whole)
    return float(np.linalg.norm(part) / scale) if scale > 0 else 0.0


@dataclass
class InitialData:
    """U(0) = U0_S + U0_osc + (0, 0, 0, theta0_eps(x3)), limit data (v0_h, theta0)."""
    U0_S: Field4
    U0_osc: Field4
    theta0_eps: Field1
    v0_h: np.ndarray
    theta0: Field1
    recipe: str = 'custom'
    tolerance: float = 1e-10

    def __post_init__(self):
        grid = self.U0_S.grid
        for f in (self.U0_osc, self.theta0_eps, self.theta0):
            if f.grid != grid:
                raise GridMismatchError("initial data pieces live on different grids")
        self.v0_h = np.asarray(self.v0_h, dtype=complex)
        if self.v0_h.shape != (2,) + grid.shape:
            raise GridMismatchError(f"v0_h must have shape {(2,) + grid.shape}, got {self.v0_h.shape}")
        bad_s = _relative(oscillating_part(self.U0_S).coeffs, self.U0_S.coeffs)
        bad_osc = _relative(stratified_part(self.U0_osc).coeffs, self.U0_osc.coeffs)
        if bad_s > self.tolerance:
            raise DomainError(f"U0_S is not stratified (relative oscillating content {bad_s:.2e})")
        if bad_osc > self.tolerance:
            raise DomainError(f"U0_osc has a stratified part (relative {bad_osc:.2e})")
        xi = grid.xi
        div_h = _relative(xi[0] * self.v0_h[0] + xi[1] * self.v0_h[1],
                          grid.xih_abs * np.sqrt(np.sum(np.abs(self.v0_h) ** 2, axis=0)))
        if div_h > self.tolerance:
            raise DomainError(f"limit data v0_h is not horizontally divergence-free ({div_h:.2e})")
        for name, f in (('U0_S', self.U0_S), ('U0_osc', self.U0_osc)):
            residual = np.linalg.norm(np.sum(xi * f.velocity, axis=0))
            scale = np.linalg.norm(grid.xi_abs * np.sqrt(np.sum(np.abs(f.velocity) ** 2, axis=0)))
            if scale > 0 and residual / scale > self.tolerance:
                raise DomainError(f"{name} velocity is not divergence-free")

    @property
    def grid(self) -> GridSpec:
        return self.U0_S.grid

    @property
    def U0_eps(self) -> Field4:
        return self.U0_S + self.U0_osc

    def combined(self) -> Field4:
        return self.U0_eps + self.theta0_eps.embed()

    def limit_state(self) -> Field4:
        """(v0_h, 0, theta0) on the grid."""
        out = self.theta0.embed().coeffs
        out[:2] = self.v0_h
        return Field4(self.grid, out)

    def stokes_data(self) -> Field4:
        """E(0) = U0_osc + (U0_S^h - v0_h, 0, 0)."""
        out = self.U0_osc.coeffs.copy()
        out[:2] += self.U0_S.coeffs[:2] - self.v0_h
        return Field4(self.grid, out)

    @classmethod
    def well_prepared(cls, v0_h: np.ndarray, theta0: Field1) -> 'InitialData':
        grid = theta0.grid
        coeffs = np.zeros((4,) + grid.shape, dtype=complex)
        coeffs[:2] = v0_h
        return cls(Field4(grid, coeffs), Field4.zeros(grid), Field1(grid, theta0.coeffs.copy()),
                   v0_h, theta0, recipe='well')

    @classmethod
    def from_state(cls, U0: Field4, theta0_eps: Field1 = None) -> 'InitialData':
        """Split an arbitrary divergence-free state; the limit data is its stratified part."""
        grid = U0.grid
        f_s, f_osc = decompose_stratified_oscillating(U0)
        theta = theta0_eps if theta0_eps is not None else Field1.zeros(grid)
        return cls(f_s, f_osc, theta, f_s.coeffs[:2].copy(), Field1(grid, theta.coeffs.copy()))


# =========================================================
# TRAJECTORIES
# =========================================================
@dataclass
class Trajectory:
    label: str
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    monitor: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def append(self, t: float, snapshot, values: dict = None, monitor: float = None):
        if self.times and not t > self.times[-1]:
            raise DomainError(f"{self.label}: snapshot time {t} does not increase past {self.times[-1]}")
        self.times.append(float(t))
        self.snapshots.append(snapshot)
        for name, value in (values or {}).items():
            self.series.setdefault(name, []).append(float(value))
        if monitor is not None:
            self.monitor.append(float(monitor))

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.snapshots[-1]

    @property
    def grid(self) -> GridSpec:
        return self.snapshots[0].grid

    def series_array(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    def map(self, fn, label: str) -> 'Trajectory':
        out = Trajectory(label)
        for t, snap in zip(self.times, self.snapshots):
            out.append(t, fn(snap))
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = sorted(self.series)
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            header = ['t'] + names + (['monitor'] if self.monitor else [])
            writer.writerow(header)
            for i, t in enumerate(self.times):
                row = [repr(t)] + [repr(self.series[n][i]) for n in names]
                if self.monitor:
                    row.append(repr(self.monitor[i]))
                writer.writerow(row)
        return path


def _snapshot_norms(f, tokens) -> dict:
    values = {}
    for token in tokens:
        spec = parse_norm(token)
        if spec.is_space_time:
            continue
        values[token] = norm(f, spec)
    return values


def _check_finite(coeffs: np.ndarray, label: str, t: float):
    if not np.all(np.isfinite(coeffs)):
        raise NumericalBlowUpError(f"{label}: non-finite coefficients at t={t:.6g}")


def _check_cfl(velocity: np.ndarray, grid: GridSpec, dt: float, cfl: float, label: str, t: float):
    v = to_physical(velocity, grid)
    vmax = float(np.sqrt(np.max(np.sum(v ** 2, axis=0))))
    if vmax > 0 and dt > cfl * grid.dx / vmax:
        raise CFLViolationError(
            f"{label}: dt={dt:.3g} exceeds {cfl} * dx / max|v| = {cfl * grid.dx / vmax:.3g} "
            f"(max|v|={vmax:.3g}, t={t:.6g})")


# =========================================================
# INTEGRATING-FACTOR RUNGE-KUTTA
# =========================================================
class IntegratingFactorRK:
    """Lawson-type RK: exact linear flow composed with explicit stages for the nonlinearity."""

    def __init__(self, scheme: str, flow, nonlinear):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{scheme}'")
        self.scheme = scheme
        self.flow = flow
        self.nonlinear = nonlinear

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        full = lambda x: self.flow(x, dt)
        if self.nonlinear is None:
            return full(u)
        N = self.nonlinear
        if self.scheme == 'ifrk2':
            k1 = N(u)
            Eu = full(u)
            Ek1 = full(k1)
            k2 = N(Eu + dt * Ek1)
            return Eu + 0.5 * dt * (Ek1 + k2)
        half = lambda x: self.flow(x, 0.5 * dt)
        k1 = N(u)
        Ehu = half(u)
        k2 = N(Ehu + 0.5 * dt * half(k1))
        k3 = N(Ehu + 0.5 * dt * k2)
        Eu = full(u)
        k4 = N(Eu + dt * half(k3))
        return Eu + dt / 6.0 * (full(k1) + 2.0 * half(k2 + k3) + k4)


class _StratifiedFlow:
    """Exact flow of the Leray-projected linear operator, matrices cached per step size."""

    def __init__(self, grid: GridSpec, params: PhysParams, spec: TruncationSpec = None):
        self.prop = get_propagator(grid, params, spec)
        self._cache = {}

    def __call__(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        key = round(t, 15)
        mats = self._cache.get(key)
        if mats is None:
            mats = self.prop.exponential(t)
            self._cache[key] = mats
        return self.prop.apply(mats, coeffs)


def _full_nonlinearity(grid: GridSpec):
    def N(coeffs):
        adv = advect_coeffs(coeffs[:3], coeffs, grid)
        return -leray_project(Field4(grid, adv)).coeffs
    return N


# =========================================================
# VERTICAL HEAT FLOW
# =========================================================
def solve_heat_1d(theta0: Field1, nuprime: float, t: float) -> Field1:
    """Exact per-mode decay exp(-nu' xi3^2 t)."""
    if t < 0:
        raise DomainError(f"heat flow time must be nonnegative, got {t}")
    return Field1(theta0.grid, theta0.coeffs * np.exp(-nuprime * theta0.xi3 ** 2 * t))


def heat_trajectory(theta0: Field1, nuprime: float, times, label: str = 'theta_eps') -> Trajectory:
    traj = Trajectory(label)
    for t in times:
        traj.append(t, solve_heat_1d(theta0, nuprime, t))
    return traj


def check_heat_energy(theta0: Field1, nuprime: float, times, s: float = 0.0) -> dict:
    """||theta||^2_{L~inf H^s} + nu' ||theta||^2_{L^2 H^{s+1}} <= 2 ||theta0||^2_{H^s}."""
    times = np.asarray(times, dtype=float)
    profiles = [solve_heat_1d(theta0, nuprime, t) for t in times]
    peak = np.max(np.abs(np.array([p.coeffs for p in profiles])), axis=0)
    sup_term = profile_hs_norm(Field1(theta0.grid, peak), s) ** 2
    grad = [profile_hs_norm(p, s + 1) ** 2 for p in profiles]
    integral = float(trapezoid(grad, times)) if len(times) > 1 else 0.0
    lhs = sup_term + nuprime * integral
    rhs = 2.0 * profile_hs_norm(theta0, s) ** 2
    return {'s': s, 'lhs': lhs, 'rhs': rhs, 'slack': rhs - lhs, 'passed': bool(rhs - lhs >= 0)}


def check_heat_besov(theta0: Field1, nuprime: float, times, s: float = -0.5,
                     qs=(1.0, 2.0, float('inf'))) -> dict:
    """Fitted constants C in ||theta||_{L~^q B^{s+2/q}_{2,1}} <= C nu'^{-1/q} ||theta0||_{B^s_{2,1}}."""
    times = np.asarray(times, dtype=float)
    profiles = [solve_heat_1d(theta0, nuprime, t) for t in times]
    base = profile_besov_norm(theta0, s, 2.0, 1.0)
    out = {'s': s, 'data_norm': base, 'constants': {}}
    for q in qs:
        shift = 0.0 if q == float('inf') else 2.0 / q
        value = chemin_lerner_norm(profiles, times, s + shift, q, 2.0, 1.0)
        factor = 1.0 if q == float('inf') else nuprime ** (1.0 / q)
        out['constants'][q] = value * factor / base if base > 0 else 0.0
    out['passed'] = all(np.isfinite(c) for c in out['constants'].values())
    return out


# =========================================================
# LIMIT HORIZONTAL NAVIER-STOKES
# =========================================================
def compute_pressure_pi0(v_h: np.ndarray, grid: GridSpec) -> np.ndarray:
    """pi0 = -sum_ij Delta_h^{-1} d_i d_j (v^i v^j), products dealiased."""
    mask = grid.dealias_mask
    v = to_physical(np.asarray(v_h) * mask, grid)
    xi = grid.xi
    second = np.zeros(grid.shape, dtype=complex)
    for i in range(2):
        for j in range(2):
            second -= xi[i] * xi[j] * to_spectral(v[i] * v[j], grid)
    return -inverse_horizontal_laplacian(second * mask, grid)


def compute_G_tilde(v_h: np.ndarray, grid: GridSpec) -> Field4:
    """G = P (d1 pi0, d2 pi0, 0, 0)."""
    pi0 = compute_pressure_pi0(v_h, grid)
    out = np.zeros((4,) + grid.shape, dtype=complex)
    out[0] = 1j * grid.xi[0] * pi0
    out[1] = 1j * grid.xi[1] * pi0
    return leray_project(Field4(grid, out))


def _horizontal_state(v_h: np.ndarray, grid: GridSpec) -> Field4:
    out = np.zeros((4,) + grid.shape, dtype=complex)
    out[:2] = v_h
    return Field4(grid, out)


def _limit_states(v0_h: np.ndarray, nu: float, config: SolverConfig, grid: GridSpec, label: str):
    """Yield (t, v_h) for the limit flow at t = 0 and after every step."""
    v = horizontal_leray(np.array(v0_h, dtype=complex), grid)
    xi2 = grid.xi2

    def flow(coeffs, t):
        return coeffs * np.exp(-nu * xi2 * t)

    def N(coeffs):
        vel = np.zeros((3,) + grid.shape, dtype=complex)
        vel[:2] = coeffs
        return -horizontal_leray(advect_coeffs(vel, coeffs, grid), grid)

    stepper = IntegratingFactorRK(config.scheme, flow, N if config.nonlinear else None)
    dt = config.step
    yield 0.0, v
    t = 0.0
    for n in range(1, config.n_steps + 1):
        if config.nonlinear:
            _check_cfl(np.concatenate([v, np.zeros((1,) + grid.shape)]), grid, dt, config.cfl, label, t)
        v = horizontal_leray(stepper.step(v, dt), grid)
        t = n * dt
        _check_finite(v, label, t)
        yield t, v


def solve_limit_ns(v0_h: np.ndarray, nu: float, config: SolverConfig, grid: GridSpec = None,
                   label: str = 'limit') -> Trajectory:
    """d_t v + v . grad_h v - nu Delta v = -grad_h pi0 on the 3D grid, snapshots as (v_h, 0, 0)."""
    if grid is None:
        raise GridMismatchError("solve_limit_ns needs the grid the data lives on")
    if np.shape(v0_h) != (2,) + grid.shape:
        raise GridMismatchError(f"v0_h must have shape {(2,) + grid.shape}, got {np.shape(v0_h)}")
    dt = config.step
    traj = Trajectory(label)

    def record(t, coeffs, dissipated):
        snap = _horizontal_state(coeffs, grid)
        values = _snapshot_norms(snap, config.norms)
        values['energy'] = hs_norm(coeffs, grid, 0.0) ** 2
        values['dissipation'] = dissipated
        traj.append(t, snap, values)

    grad_sq = []
    for n, (t, v) in enumerate(_limit_states(v0_h, nu, config, grid, label)):
        grad_sq.append(hs_norm(v, grid, 1.0) ** 2)
        if n == 0:
            record(0.0, v, 0.0)
        elif n % config.snapshot_every == 0 or n == config.n_steps:
            record(t, v, 2 * nu * float(trapezoid(grad_sq, dx=dt)))
    balance = traj.series_array('energy') + traj.series_array('dissipation')
    e0 = balance[0]
    traj.checks['energy_balance'] = {
        'max_relative_defect': float(np.max(np.abs(balance - e0)) / e0) if e0 > 0 else 0.0,
        'monotone': bool(np.all(np.diff(traj.series_array('energy')) <= 1e-12 * max(e0, 1e-300))),
    }
    _log('DEBUG', f"{label}: {config.n_steps} steps, final energy {traj.series['energy'][-1]:.6e}")
    return traj


def limit_energy_norm(traj: Trajectory, s: float, nu: float) -> float:
    """||v||^2_{L^inf H^s} + nu ||grad v||^2_{L^2 H^s} (inhomogeneous)."""
    grid = traj.grid
    sup = max(inhomogeneous_hs_norm(f.coeffs[:2], grid, s) ** 2 for f in traj.snapshots)
    grads = []
    for f in traj.snapshots:
        g = np.concatenate([1j * grid.xi * f.coeffs[0], 1j * grid.xi * f.coeffs[1]])
        grads.append(inhomogeneous_hs_norm(g, grid, s) ** 2)
    integral = float(trapezoid(grads, traj.times)) if len(traj) > 1 else 0.0
    return float(sup + nu * integral)


def check_G_tilde_integrals(traj: Trajectory, s_values) -> dict:
    """int ||G(t)||_{H^s} dt over the limit trajectory for each s."""
    source = SourceSeries.from_limit(traj)
    out = {float(s): source.integral_norm(s) for s in s_values}
    return {'integrals': out, 'passed': all(np.isfinite(v) for v in out.values())}


# =========================================================
# SOURCES FOR THE LINEAR SYSTEMS
# =========================================================
@dataclass
class SourceSeries:
    """Time samples of a forcing, linearly interpolated between knots."""
    times: np.ndarray
    fields: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.fields) or not len(self.fields):
            raise DomainError("source needs one field per time knot")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("source knots must increase strictly")

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    @classmethod
    def constant(cls, f: Field4) -> 'SourceSeries':
        return cls(np.array([0.0]), [f])

    @classmethod
    def zero(cls, grid: GridSpec) -> 'SourceSeries':
        return cls.constant(Field4.zeros(grid))

    @classmethod
    def from_limit(cls, traj: Trajectory) -> 'SourceSeries':
        grid = traj.grid
        return cls(np.array(traj.times), [compute_G_tilde(s.coeffs[:2], grid) for s in traj.snapshots])

    def is_zero(self) -> bool:
        return all(not np.any(f.coeffs) for f in self.fields)

    def at(self, t: float) -> np.ndarray:
        if len(self.times) == 1:
            return self.fields[0].coeffs
        span = 1e-9 * max(1.0, self.times[-1])
        if t < self.times[0] - span or t > self.times[-1] + span:
            raise DomainError(f"source sampled at t={t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, len(self.times) - 2))
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        w = min(max(w, 0.0), 1.0)
        return (1 - w) * self.fields[i].coeffs + w * self.fields[i + 1].coeffs

    def truncated(self, spec: TruncationSpec) -> 'SourceSeries':
        return SourceSeries(self.times.copy(), [truncate(f, spec) for f in self.fields])

    def integral_norm(self, s: float = 0.0) -> float:
        values = [hs_norm(f.coeffs, f.grid, s) for f in self.fields]
        if len(values) == 1:
            return 0.0
        return float(trapezoid(values, self.times))


# =========================================================
# LINEAR FORCED SYSTEMS
# =========================================================
def _solve_forced_linear(U0: Field4, source: SourceSeries, params: PhysParams, config: SolverConfig,
                         spec: TruncationSpec, label: str) -> Trajectory:
    """W' = (L - eps^-1 P B) W + G(t), G piecewise linear: exact exponential integrator."""
    grid = U0.grid
    source = source or SourceSeries.zero(grid)
    if source.grid != grid:
        raise GridMismatchError(f"{label}: source grid does not match data grid")
    prop = get_propagator(grid, params, spec)
    dt = config.step
    E, P1, P2 = prop.phi_functions(dt) if config.n_steps else (None, None, None)
    forced = not source.is_zero()
    w = U0.coeffs.copy()
    traj = Trajectory(label)
    traj.append(0.0, Field4(grid, w.copy()), _snapshot_norms(U0, config.norms))
    g_prev = source.at(0.0) if forced else None
    for n in range(1, config.n_steps + 1):
        t = n * dt
        w_new = prop.apply(E, w)
        if forced:
            g_next = source.at(t)
            w_new += dt * (prop.apply(P1, g_prev) + prop.apply(P2, g_next - g_prev))
            g_prev = g_next
        w = w_new
        _check_finite(w, label, t)
        if n % config.snapshot_every == 0 or n == config.n_steps:
            snap = Field4(grid, w.copy())
            traj.append(t, snap, _snapshot_norms(snap, config.norms))
    return traj


def solve_wave(U0_osc: Field4, source: SourceSeries, params: PhysParams, config: SolverConfig,
               truncated: bool = False, spec: TruncationSpec = None, label: str = None) -> Trajectory:
    """Filtering wave W (or its truncation W^T on C_{r,R})."""
    if truncated:
        if spec is None:
            raise TruncationError("truncated wave needs a TruncationSpec")
        U0_osc = truncate(U0_osc, spec)
        if source is not None:
            source = source.truncated(spec)
    return _solve_forced_linear(U0_osc, source, params, config, spec,
                                label or ('wave_T' if truncated else 'wave'))


def solve_stokes_type(E0: Field4, source: SourceSeries, params: PhysParams, config: SolverConfig,
                      s: float = 0.0, label: str = 'stokes') -> Trajectory:
    traj = _solve_forced_linear(E0, source, params, config, None, label)
    traj.checks['stokes_estimate'] = check_stokes_estimate(traj, source or SourceSeries.zero(E0.grid),
                                                           params.nu0, s)
    if not traj.checks['stokes_estimate']['passed']:
        _log('WARN', f"{label}: energy estimate violated, slack {traj.checks['stokes_estimate']['slack']:.3e}")
    return traj


def check_stokes_estimate(traj: Trajectory, source: SourceSeries, nu0: float, s: float = 0.0) -> dict:
    """||E(t)||^2 + nu0 int ||grad E||^2 <= (||E0||^2 + int ||G||) exp(int ||G||), all in H^s."""
    grid = traj.grid
    times = np.asarray(traj.times)
    energy = np.array([hs_norm(f.coeffs, grid, s) ** 2 for f in traj.snapshots])
    grad = np.array([hs_norm(f.coeffs, grid, s + 1) ** 2 for f in traj.snapshots])
    g = np.array([hs_norm(source.at(t), grid, s) for t in times])
    if len(times) > 1:
        dissipated = cumulative_trapezoid(grad, times, initial=0.0)
        forcing = cumulative_trapezoid(g, times, initial=0.0)
    else:
        dissipated = forcing = np.zeros(1)
    lhs = energy + nu0 * dissipated
    rhs = (energy[0] + forcing) * np.exp(forcing)
    slack = float(np.min(rhs - lhs + 1e-12 * max(rhs.max(), 1e-300)))
    return {'s': s, 'lhs': lhs.tolist(), 'rhs': rhs.tolist(), 'slack': slack, 'passed': bool(slack >= 0)}


# =========================================================
# FULL STRATIFIED SYSTEM
# =========================================================
def solve_full_stratif(data: InitialData, params: PhysParams, config: SolverConfig,
                       spec: TruncationSpec = None, label: str = None) -> Trajectory:
    """Advance U from U0_eps + (0, 0, 0, theta0_eps) with IF-RK; exact linear step.

    The monitor is int_0^t ||grad D_eps||^2_{H^1/2} with D_eps = U - (v_h, 0, theta_eps).
    """
    grid = data.grid
    label = label or f"full[eps={params.eps:g}]"
    U = leray_project(data.combined()).coeffs
    flow = _StratifiedFlow(grid, params, spec)
    stepper = IntegratingFactorRK(config.scheme, flow, _full_nonlinearity(grid) if config.nonlinear else None)
    dt = config.step
    traj = Trajectory(label)

    limit = _limit_states(data.v0_h, params.nu, config, grid, f"{label}:limit")

    def deviation(t, coeffs):
        # D_eps = U - (v_h, 0, theta_eps) with the limit advanced in lockstep
        _, v_h = next(limit)
        ref = np.zeros_like(coeffs)
        ref[:2] = v_h
        ref[3] = solve_heat_1d(data.theta0_eps, params.nuprime, t).embed().coeffs[3]
        return hs_norm(coeffs - ref, grid, 1.5) ** 2

    def record(t, coeffs, monitor):
        snap = Field4(grid, coeffs.copy())
        values = _snapshot_norms(snap, config.norms)
        values['energy'] = hs_norm(coeffs, grid, 0.0) ** 2 + grid.volume * float(np.sum(np.abs(coeffs[:, 0, 0, 0]) ** 2))
        traj.append(t, snap, values, monitor)

    integrand = [deviation(0.0, U)]
    record(0.0, U, 0.0)
    t = 0.0
    for n in range(1, config.n_steps + 1):
        if config.nonlinear:
            _check_cfl(U[:3], grid, dt, config.cfl, label, t)
        U = stepper.step(U, dt)
        t = n * dt
        _check_finite(U, label, t)
        integrand.append(deviation(t, U))
        if n % config.snapshot_every == 0 or n == config.n_steps:
            record(t, U, float(trapezoid(integrand, dx=dt)))
    energy = traj.series_array('energy')
    traj.checks['energy_inequality'] = {
        'initial': float(energy[0]), 'max': float(energy.max()),
        'passed': bool(np.all(energy <= energy[0] * (1 + 1e-10) + 1e-300)),
    }
    traj.checks['blowup_monitor_finite'] = bool(np.all(np.isfinite(traj.monitor)))
    _log('INFO', f"{label}: {config.n_steps} steps of dt={dt:.3g}, monitor {traj.monitor[-1]:.3e}")
    return traj


def richardson_order(data: InitialData, params: PhysParams, config: SolverConfig) -> float:
    """Observed order from final states at dt, dt/2, dt/4."""
    finals = []
    for k in range(3):
        cfg = config.with_dt(config.step / 2 ** k)
        finals.append(solve_full_stratif(data, params, cfg, label=f"richardson[{k}]").final.coeffs)
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    if e2 == 0:
        return float('inf')
    return float(np.log2(e1 / e2))


# =========================================================
# DIFFERENCE DIAGNOSTICS
# =========================================================
def _check_aligned(a: Trajectory, b: Trajectory):
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=1e-12, atol=1e-14):
        raise GridMismatchError(f"time stamps of '{a.label}' and '{b.label}' do not line up")
    if a.grid != b.grid:
        raise GridMismatchError(f"'{a.label}' and '{b.label}' live on different grids")


DIFFERENCE_NORMS = ('L2', 'Linf', 'H0.5')


def _difference_series(traj: Trajectory, tokens):
    for snap in traj.snapshots:
        for token, value in _snapshot_norms(snap, tokens).items():
            traj.series.setdefault(token, []).append(value)
        traj.series.setdefault('stratified_L2', []).append(norm(stratified_part(snap), NormSpec('hs', s=0.0)))
    grad = [hs_norm(s.coeffs, s.grid, 1.5) ** 2 for s in traj.snapshots]
    if len(traj) > 1:
        traj.monitor = cumulative_trapezoid(grad, traj.times, initial=0.0).tolist()
    else:
        traj.monitor = [0.0]


def compute_D_eps(traj_full: Trajectory, traj_limit: Trajectory, theta_eps: Trajectory,
                  tokens=DIFFERENCE_NORMS) -> Trajectory:
    """D = U - (v_h, 0, theta_eps) at every shared snapshot."""
    _check_aligned(traj_full, traj_limit)
    if len(theta_eps) != len(traj_full) or not np.allclose(theta_eps.times, traj_full.times, rtol=1e-12, atol=1e-14):
        raise GridMismatchError("theta_eps profile times do not line up with the full trajectory")
    out = Trajectory(f"D[{traj_full.label}]")
    for t, U, lim, th in zip(traj_full.times, traj_full.snapshots, traj_limit.snapshots, theta_eps.snapshots):
        ref = lim.coeffs.copy()
        ref[3] = th.embed().coeffs[3]
        out.append(t, Field4(U.grid, U.coeffs - ref))
    _difference_series(out, tokens)
    return out


def compute_delta_eps(D_eps: Trajectory, wave_T: Trajectory, tokens=DIFFERENCE_NORMS) -> Trajectory:
    """delta = D - W^T."""
    _check_aligned(D_eps, wave_T)
    out = Trajectory(f"delta[{D_eps.label}]")
    for t, d, w in zip(D_eps.times, D_eps.snapshots, wave_T.snapshots):
        out.append(t, d - w)
    _difference_series(out, tokens)
    return out


def leray_energy_monitor(D_eps: Trajectory, data: InitialData, nu0: float) -> dict:
    """||D(t)||^2 + nu0 int ||grad D||^2 against the data term ||U0_osc||^2 + ||U0_S^h - v0_h||^2."""
    grid = D_eps.grid
    times = np.asarray(D_eps.times)
    energy = np.array([hs_norm(f.coeffs, grid, 0.0) ** 2 for f in D_eps.snapshots])
    grad = np.array([hs_norm(f.coeffs, grid, 1.0) ** 2 for f in D_eps.snapshots])
    dissipated = cumulative_trapezoid(grad, times, initial=0.0) if len(times) > 1 else np.zeros(1)
    lhs = energy + nu0 * dissipated
    data_term = (hs_norm(data.U0_osc.coeffs, grid, 0.0) ** 2
                 + hs_norm(data.U0_S.coeffs[:2] - data.v0_h, grid, 0.0) ** 2)
    return {
        'lhs': lhs.tolist(),
        'data_term': float(data_term),
        'implied_constant': float(lhs.max() / data_term) if data_term > 0 else float('inf'),
        'finite': bool(np.all(np.isfinite(lhs))),
    }
