#!/usr/bin/env python3
"""
Boussinesq Bridge - Change of variables between the classical Boussinesq
system (v, rho, P) and the stratified perturbation variables (U, Phi),
the explicit stably stratified stationary solution, and the expansion of
a computed solution back into Boussinesq variables.

The stationary profile is linear in x3 and therefore not periodic: it is
only ever handled as pointwise samples on a bounded box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from run_log import log
from spectral_core import DomainError, GridMismatchError
from linear_stratified import PhysParams


def _log(level, message):
    log(level, 'boussinesq_bridge', message)


def _require_kappa(params: PhysParams):
    if params.kappa <= 0:
        raise DomainError("the Boussinesq change of variables needs kappa > 0")


# =========================================================
# STATIONARY SOLUTION
# =========================================================
@dataclass(frozen=True)
class Reference:
    """Free constants of the stationary solution."""
    rho0: float = 0.0
    P0: float = 0.0


def stationary_density(x3, params: PhysParams, ref: Reference = Reference()) -> np.ndarray:
    _require_kappa(params)
    return ref.rho0 - np.asarray(x3, dtype=float) / (params.eps ** 2 * params.kappa ** 2)


def stationary_pressure(x3, params: PhysParams, ref: Reference = Reference()) -> np.ndarray:
    _require_kappa(params)
    x3 = np.asarray(x3, dtype=float)
    return ref.P0 - params.kappa ** 2 * ref.rho0 * x3 + x3 ** 2 / (2 * params.eps ** 2)


def stationary_solution(params: PhysParams, points: np.ndarray, ref: Reference = Reference()) -> tuple:
    """(V_bar (4, ...), P_bar (...)) sampled at points of shape (3, ...)."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] != 3:
        raise GridMismatchError(f"points must have a leading axis of length 3, got {points.shape}")
    V = np.zeros((4,) + points.shape[1:])
    V[3] = stationary_density(points[2], params, ref)
    return V, stationary_pressure(points[2], params, ref)


def stationary_residual(params: PhysParams, box=(1.0, 1.0, 1.0), n: int = 9,
                        ref: Reference = Reference(), step: float = 1e-2) -> dict:
    """Central-difference residuals of the Boussinesq equations at the stationary state on [-box, box].

    Momentum: kappa^2 rho e3 + grad P = 0 (v = 0). Transport: nu' Delta rho = 0.
    Residuals are relative to the size of the balanced terms.
    """
    _require_kappa(params)
    axes = [np.linspace(-b, b, n) for b in box]
    pts = np.array(np.meshgrid(*axes, indexing='ij'))
    h = step * max(box)
    _, P = stationary_solution(params, pts, ref)
    rho = stationary_density(pts[2], params, ref)

    def shifted(k, sign):
        p = pts.copy()
        p[k] += sign * h
        return p

    grad_P = []
    lap_rho = np.zeros_like(rho)
    for k in range(3):
        plus, minus = shifted(k, 1), shifted(k, -1)
        grad_P.append((stationary_pressure(plus[2], params, ref) - stationary_pressure(minus[2], params, ref)) / (2 * h))
        lap_rho += (stationary_density(plus[2], params, ref) - 2 * rho
                    + stationary_density(minus[2], params, ref)) / h ** 2
    buoyancy = params.kappa ** 2 * rho
    momentum = np.stack([grad_P[0], grad_P[1], grad_P[2] + buoyancy])
    scale = max(np.max(np.abs(buoyancy)), np.max(np.abs(grad_P[2])), 1e-300)
    momentum_rel = float(np.max(np.abs(momentum)) / scale)
    transport_rel = float(np.max(np.abs(params.nuprime * lap_rho))
                          / max(params.nuprime * np.max(np.abs(rho)) / h ** 2, 1e-300))
    return {
        'momentum': momentum_rel,
        'transport': transport_rel,
        'passed': bool(momentum_rel < 1e-12 and transport_rel < 1e-12),
    }


# =========================================================
# CHANGE OF VARIABLES
# =========================================================
def boussinesq_to_stratif(V: np.ndarray, P: np.ndarray, x3, params: PhysParams,
                          ref: Reference = Reference()) -> tuple:
    """theta = eps kappa^2 (rho - rho_bar), Phi = eps (P - P_bar)."""
    _require_kappa(params)
    V = np.asarray(V, dtype=float)
    U = V.copy()
    U[3] = params.eps * params.kappa ** 2 * (V[3] - stationary_density(x3, params, ref))
    Phi = params.eps * (np.asarray(P, dtype=float) - stationary_pressure(x3, params, ref))
    return U, Phi


def stratif_to_boussinesq(U: np.ndarray, Phi: np.ndarray, x3, params: PhysParams,
                          ref: Reference = Reference()) -> tuple:
    """rho = rho_bar + theta / (eps kappa^2), P = P_bar + Phi / eps."""
    _require_kappa(params)
    U = np.asarray(U, dtype=float)
    V = U.copy()
    V[3] = stationary_density(x3, params, ref) + U[3] / (params.eps * params.kappa ** 2)
    P = stationary_pressure(x3, params, ref) + np.asarray(Phi, dtype=float) / params.eps
    return V, P


# =========================================================
# EXPANSION OF A COMPUTED SOLUTION
# =========================================================
def reconstruct_boussinesq_expansion(D_eps, limit, theta_eps, params: PhysParams,
                                     ref: Reference = Reference()) -> dict:
    """Rebuild V = stationary + theta_eps/(eps kappa^2) + (v_h, 0) + remainder at each snapshot.

    The remainder is (D^h, D^3, D^4 / (eps kappa^2)); its velocity part is the O(eps^K)
    term and its density part the O(eps^{K-1}) term.
    """
    _require_kappa(params)
    if len(D_eps) != len(limit) or len(D_eps) != len(theta_eps):
        raise GridMismatchError("expansion needs aligned D_eps, limit and theta_eps trajectories")
    grid = D_eps.grid
    x3 = grid.coords[2]
    scale = params.eps * params.kappa ** 2
    velocity_rem, density_rem, identity_gap = [], [], []
    for D, lim, th in zip(D_eps.snapshots, limit.snapshots, theta_eps.snapshots):
        d = D.physical()
        v_h = lim.physical()[:2]
        theta = th.physical()[None, None, :]
        U = d.copy()
        U[:2] += v_h
        U[3] += theta
        V, _ = stratif_to_boussinesq(U, np.zeros(grid.shape), x3, params, ref)
        lead = np.zeros_like(V)
        lead[:2] = v_h
        lead[3] = stationary_density(x3, params, ref) + theta / scale
        rem = V - lead
        velocity_rem.append(float(np.max(np.abs(rem[:3]))))
        density_rem.append(float(np.max(np.abs(rem[3]))))
        identity_gap.append(float(np.max(np.abs(rem[3] * scale - d[3]))
                                  / max(np.max(np.abs(d[3])), 1e-300)))
    _log('DEBUG', f"expansion at eps={params.eps:g}: velocity remainder {max(velocity_rem):.3e}, "
                  f"density remainder {max(density_rem):.3e}")
    return {
        'eps': params.eps,
        'times': list(D_eps.times),
        'velocity_remainder': velocity_rem,
        'density_remainder': density_rem,
        'density_over_velocity_scale': 1.0 / scale,
        'identity_gap': max(identity_gap),
    }
