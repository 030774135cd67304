import logging
import math

import numpy as np

from lanefree.core.classes import (
    AccelLimits,
    ControlInput,
    GainSet,
    LateralCorridor,
    MovingBoundary,
    VehicleState,
)
from lanefree.core.errors import CorridorViolation, GainOutOfRange

logger = logging.getLogger(__name__)

CORRIDOR_TOL = 1e-9


def design_gains(k1: float, dt: float) -> tuple[float, float]:
    """
    Returns (k1, k2) with k2 = 2*sqrt(k1) - k1*dt/2, which places a
    non-negative real double root on the tracking error dynamics
    """
    if not (math.isfinite(k1) and math.isfinite(dt)) or dt <= 0:
        raise GainOutOfRange(f"Invalid gain design input: k1={k1}, dt={dt}")
    # Small relative slack so k1 = 1/dt**2 computed in floating point is accepted
    if not 0 < k1 <= (1 / dt**2) * (1 + 1e-12):
        raise GainOutOfRange(f"k1 must lie in (0, {1 / dt**2}], got {k1}")
    return k1, 2 * math.sqrt(k1) - k1 * dt / 2


def gain_set(k_long1: float, k_lat1: float, dt: float) -> GainSet:
    _, k_long2 = design_gains(k_long1, dt)
    _, k_lat2 = design_gains(k_lat1, dt)
    return GainSet(k_long1, k_long2, k_lat1, k_lat2)


def dead_beat_gains(dt: float) -> GainSet:
    k1, k2 = design_gains(1 / dt**2, dt)
    return GainSet(k1, k2, k1, k2)


def characteristic_polynomial(
    k1: float, k2: float, dt: float
) -> tuple[float, float, float]:
    """
    Closed loop error polynomial z^2 + a*z + b.
    Returns (a, b, discriminant)
    """
    a = k1 * dt**2 / 2 + dt * k2 - 2
    b = k1 * dt**2 / 2 - dt * k2 + 1
    return a, b, a * a - 4 * b


def double_root(k1: float, dt: float) -> float:
    """Root of the closed loop polynomial at design_gains(k1, dt)"""
    return 1 - dt * math.sqrt(k1)


def invariant_speed_ratio(k1: float, dt: float) -> float:
    """
    Slope c of the invariant cone of the boundary controller at
    design_gains(k1, dt): a state with speed towards an edge of at most
    c * (distance to that edge) never crosses it while the bound is respected
    """
    _, k2 = design_gains(k1, dt)
    r = double_root(k1, dt)
    return (r - 1 + k2 * dt) / (dt - k2 * dt * dt / 2)


def tracking_error_step(
    e1: float, e2: float, k1: float, k2: float, dt: float
) -> tuple[float, float]:
    """One step of the tracking error dynamics with the feedback bound active"""
    v = -k1 * e1 - k2 * e2
    return e1 + dt * e2 + 0.5 * dt * dt * v, e2 + dt * v


def tracking_error_sequence(
    e1: float, e2: float, k1: float, k2: float, dt: float, n_steps: int
) -> np.ndarray:
    """(n_steps+1, 2) array of tracking errors starting at (e1, e2)"""
    errors = np.empty((n_steps + 1, 2))
    errors[0] = e1, e2
    for n in range(n_steps):
        e1, e2 = tracking_error_step(e1, e2, k1, k2, dt)
        errors[n + 1] = e1, e2
    return errors


def long_lower_bound(x3: float, dt: float, u_min_const: float) -> float:
    """Keeps x3(k+1) >= 0"""
    return max(-x3 / dt, u_min_const)


def long_upper_bound_emergency(
    s: VehicleState, mb: MovingBoundary, g: GainSet
) -> float:
    e1, e2 = mb.errors(s)
    return -g.k_long1 * e1 - g.k_long2 * e2 + mb.u1_hat


def lateral_bounds_unchecked(
    x2: float, x4: float, c: LateralCorridor, g: GainSet
) -> tuple[float, float]:
    u_min2 = -g.k_lat1 * (x2 - c.x2_right) - g.k_lat2 * x4
    u_max2 = -g.k_lat1 * (x2 - c.x2_left) - g.k_lat2 * x4
    return u_min2, u_max2


def lateral_bounds(
    s: VehicleState, c: LateralCorridor, g: GainSet
) -> tuple[float, float]:
    """(U_min2, U_max2) steering the vehicle back inside the corridor"""
    if not c.contains(s.x2, CORRIDOR_TOL):
        raise CorridorViolation(
            f"x2={s.x2} outside corridor [{c.x2_right}, {c.x2_left}]"
        )
    return lateral_bounds_unchecked(s.x2, s.x4, c, g)


def moving_boundary_track(
    obstacle_traj: np.ndarray,
    obstacle_length: float,
    ego_length: float,
    gap: float,
    dt: float,
) -> list[MovingBoundary]:
    """
    One MovingBoundary per obstacle sample: gap metres behind the obstacle's
    rear bumper, measured to the ego centre
    """
    offset = obstacle_length / 2 + ego_length / 2 + gap
    speeds = obstacle_traj[:, 2]
    accel = np.zeros(len(speeds))
    accel[:-1] = np.diff(speeds) / dt
    return [
        MovingBoundary(
            float(obstacle_traj[k, 0] - offset), max(float(speeds[k]), 0.0), float(accel[k])
        )
        for k in range(len(speeds))
    ]


def box_values(
    x: tuple[float, float, float, float] | np.ndarray,
    dt: float,
    u_min1: float,
    u_max1: float,
    corridor: LateralCorridor,
    gains: GainSet,
    boundary: MovingBoundary | None = None,
) -> tuple[float, float, float, float]:
    """
    Raw state-dependent box (lo1, hi1, lo2, hi2) at state x.
    hi1 may fall below lo1 when an emergency boundary is already violated
    """
    x1, x2, x3, x4 = x[0], x[1], x[2], x[3]
    lo1 = max(-x3 / dt, u_min1)
    hi1 = u_max1
    if boundary is not None:
        hi1 = min(
            hi1,
            -gains.k_long1 * (x1 - boundary.x1_hat)
            - gains.k_long2 * (x3 - boundary.x3_hat)
            + boundary.u1_hat,
        )
    lo2 = -gains.k_lat1 * (x2 - corridor.x2_right) - gains.k_lat2 * x4
    hi2 = -gains.k_lat1 * (x2 - corridor.x2_left) - gains.k_lat2 * x4
    return lo1, hi1, lo2, hi2


def accel_limits(
    s: VehicleState,
    dt: float,
    u_min1: float,
    u_max1: float,
    corridor: LateralCorridor,
    gains: GainSet,
    boundary: MovingBoundary | None = None,
) -> AccelLimits:
    lo1, hi1, lo2, hi2 = box_values(
        (s.x1, s.x2, s.x3, s.x4), dt, u_min1, u_max1, corridor, gains, boundary
    )
    return AccelLimits(lo1, hi1, lo2, hi2)


def clamp_values(
    u1: float, u2: float, lo1: float, hi1: float, lo2: float, hi2: float
) -> tuple[float, float, bool]:
    """
    Componentwise projection into the box.
    An empty box resolves lower-bound-wins for u1 and midpoint for u2; the
    third return value flags that case
    """
    empty = False
    if hi1 < lo1:
        empty = True
        u1 = lo1
    else:
        u1 = min(max(u1, lo1), hi1)
    if hi2 < lo2:
        empty = True
        u2 = 0.5 * (lo2 + hi2)
    else:
        u2 = min(max(u2, lo2), hi2)
    return u1, u2, empty


def clamp(u: ControlInput, lim: AccelLimits) -> ControlInput:
    u1, u2, empty = clamp_values(
        u.u1, u.u2, lim.u_min1, lim.u_max1, lim.u_min2, lim.u_max2
    )
    if empty:
        logger.warning(f"Empty control box {lim}, resolved to ({u1}, {u2})")
    return ControlInput(u1, u2)


def dead_beat_check(
    s0: VehicleState,
    target: MovingBoundary | LateralCorridor,
    dt: float,
    side: str = "left",
    gains: GainSet | None = None,
    tol: float = 1e-9,
    max_steps: int = 10,
) -> int | None:
    """
    Simulates the closed loop with the feedback bound always active.
    Returns the number of steps until position and speed errors vanish
    (within tol), or None if that takes more than max_steps
    """
    if gains is None:
        gains = dead_beat_gains(dt)
    half_dt2 = 0.5 * dt * dt

    match target:
        case MovingBoundary():
            x1, x3 = s0.x1, s0.x3
            b1, b3, bu = target.x1_hat, target.x3_hat, target.u1_hat
            for n in range(max_steps + 1):
                if abs(x1 - b1) <= tol and abs(x3 - b3) <= tol:
                    return n
                u1 = -gains.k_long1 * (x1 - b1) - gains.k_long2 * (x3 - b3) + bu
                x1, x3 = x1 + dt * x3 + half_dt2 * u1, x3 + dt * u1
                b1, b3 = b1 + dt * b3 + half_dt2 * bu, b3 + dt * bu
        case LateralCorridor():
            if side not in ("left", "right"):
                raise ValueError(f"side must be 'left' or 'right', got {side}")
            edge = target.x2_left if side == "left" else target.x2_right
            x2, x4 = s0.x2, s0.x4
            for n in range(max_steps + 1):
                if abs(x2 - edge) <= tol and abs(x4) <= tol:
                    return n
                u_min2, u_max2 = lateral_bounds_unchecked(x2, x4, target, gains)
                u2 = u_max2 if side == "left" else u_min2
                x2, x4 = x2 + dt * x4 + half_dt2 * u2, x4 + dt * u2
        case _:
            raise TypeError(f"Unsupported target {target!r}")
    return None
