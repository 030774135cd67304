"""
Exact discrete-time double integrator kinematics.

Longitudinal (x1, x3, u1) and lateral (x2, x4, u2) motions are decoupled:
    x1(k+1) = x1 + T*x3 + T^2/2*u1
    x2(k+1) = x2 + T*x4 + T^2/2*u2
    x3(k+1) = x3 + T*u1
    x4(k+1) = x4 + T*u2
The scalar and array paths below evaluate these in the same order so
their results are bit-identical.
"""

import math
from collections.abc import Sequence

import numpy as np
from scipy.linalg import expm

from lanefree.core.classes import ControlInput, Plan, VehicleState
from lanefree.core.errors import NonFiniteInput


def _check_finite(*values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteInput(f"Non-finite value in {values}")


def step(s: VehicleState, u: ControlInput, dt: float) -> VehicleState:
    _check_finite(s.x1, s.x2, s.x3, s.x4, u.u1, u.u2, dt)
    if dt <= 0:
        raise NonFiniteInput(f"dt must be positive, got {dt}")

    half_dt2 = 0.5 * dt * dt
    return VehicleState(
        s.x1 + dt * s.x3 + half_dt2 * u.u1,
        s.x2 + dt * s.x4 + half_dt2 * u.u2,
        s.x3 + dt * u.u1,
        s.x4 + dt * u.u2,
    )


def step_array(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """step() over the last axis of x (..., 4) and u (..., 2). No validation"""
    half_dt2 = 0.5 * dt * dt
    out = np.empty_like(x, dtype=float)
    out[..., 0] = x[..., 0] + dt * x[..., 2] + half_dt2 * u[..., 0]
    out[..., 1] = x[..., 1] + dt * x[..., 3] + half_dt2 * u[..., 1]
    out[..., 2] = x[..., 2] + dt * u[..., 0]
    out[..., 3] = x[..., 3] + dt * u[..., 1]
    return out


def rollout_array(x0: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Returns the (K+1, 4) state sequence for (K, 2) controls"""
    horizon = controls.shape[0]
    states = np.empty((horizon + 1, 4), dtype=float)
    states[0] = x0
    for k in range(horizon):
        states[k + 1] = step_array(states[k], controls[k], dt)
    return states


def reach_envelope(
    s0: VehicleState, horizon: int, dt: float, u_min1: float, u_max1: float
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """
    Longitudinal bounds at steps 0..K-1 over every control sequence with
    u_min1 <= u1 <= u_max1 that keeps x3 >= 0.
    Returns ((x1_lo, x1_hi), (x3_lo, x3_hi))
    """
    t = dt * np.arange(horizon, dtype=float)
    x1_hi = s0.x1 + s0.x3 * t + 0.5 * u_max1 * t * t
    x3_hi = s0.x3 + u_max1 * t
    # Hardest braking stops at x3 = 0 and stays there
    braking = np.minimum(t, s0.x3 / -u_min1) if u_min1 < 0 else t
    x1_lo = s0.x1 + s0.x3 * braking + 0.5 * u_min1 * braking * braking
    x3_lo = np.maximum(s0.x3 + u_min1 * braking, 0.0)
    return (x1_lo, x1_hi), (x3_lo, x3_hi)


def rollout(
    s0: VehicleState,
    controls: Sequence[ControlInput] | np.ndarray,
    dt: float,
    t0: float = 0.0,
) -> Plan:
    if len(controls) == 0:
        raise ValueError("rollout needs at least one control")

    if isinstance(controls, np.ndarray):
        u = np.asarray(controls, dtype=float).reshape(-1, 2)
    else:
        u = np.array([c.as_array() for c in controls], dtype=float)

    x0 = s0.as_array()
    if not (np.isfinite(x0).all() and np.isfinite(u).all() and math.isfinite(dt)):
        raise NonFiniteInput("Non-finite state or control passed to rollout")
    if dt <= 0:
        raise NonFiniteInput(f"dt must be positive, got {dt}")

    return Plan(t0=t0, dt=dt, controls=u, states=rollout_array(x0, u, dt))


def state_jacobian(dt: float) -> np.ndarray:
    """df/dx of the step map (constant)"""
    a = np.eye(4)
    a[0, 2] = dt
    a[1, 3] = dt
    return a


def input_jacobian(dt: float) -> np.ndarray:
    """df/du of the step map (constant)"""
    b = np.zeros((4, 2))
    b[0, 0] = b[1, 1] = 0.5 * dt * dt
    b[2, 0] = b[3, 1] = dt
    return b


def zoh_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Zero-order-hold discretisation of the continuous double integrator
    via the matrix exponential of the augmented system [[A, B], [0, 0]]
    """
    m = np.zeros((6, 6))
    m[0, 2] = m[1, 3] = 1.0  # position' = speed
    m[2, 4] = m[3, 5] = 1.0  # speed' = acceleration
    em = expm(m * dt)
    return em[:4, :4], em[:4, 4:]


def exactness_check(
    s0: VehicleState, u: ControlInput, dt: float, rtol: float = 1e-12
) -> bool:
    """
    Compares step() against the continuous-time solution with u held over dt
    """
    ad, bd = zoh_matrices(dt)
    expected = ad @ s0.as_array() + bd @ u.as_array()
    got = step(s0, u, dt).as_array()
    scale = np.maximum(1.0, np.abs(expected))
    return bool(np.all(np.abs(got - expected) <= rtol * scale))
