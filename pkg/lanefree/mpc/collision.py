import numpy as np

from lanefree.core.classes import ObstaclePrediction
from lanefree.mpc.classes import CollisionKind, CollisionReport


def _first_step(long_hit: np.ndarray, lat_hit: np.ndarray) -> int:
    both = np.flatnonzero(long_hit & lat_hit)
    if both.size:
        return int(both[0])
    return int(max(np.flatnonzero(long_hit)[0], np.flatnonzero(lat_hit)[0]))


def _common_horizon(ego_states: np.ndarray, obs_traj: np.ndarray) -> int:
    return min(ego_states.shape[0], obs_traj.shape[0])


def detect_longitudinal_collision(
    ego_states: np.ndarray,
    obs_traj: np.ndarray,
    ego_length: float,
    ego_width: float,
    obs_length: float,
    obs_width: float,
    omega1: float,
    eps: float,
    obstacle_id: int = -1,
) -> CollisionReport | None:
    """
    The ego starts behind the obstacle and, at some steps, comes within
    the half lengths plus the emergency time-gap 0.5*omega1*x3(0)
    longitudinally and within the half widths plus eps laterally
    """
    horizon = _common_horizon(ego_states, obs_traj)
    x = ego_states[:horizon]
    o = obs_traj[:horizon]
    if not x[0, 0] < o[0, 0]:
        return None

    long_allow = (ego_length + obs_length) / 2 + 0.5 * omega1 * x[0, 2]
    lat_allow = (ego_width + obs_width) / 2 + eps
    dx = np.abs(x[:, 0] - o[:, 0])
    dy = np.abs(x[:, 1] - o[:, 1])
    long_hit = dx < long_allow
    lat_hit = dy < lat_allow
    if not (long_hit.any() and lat_hit.any()):
        return None
    return CollisionReport(
        kind=CollisionKind.LONGITUDINAL,
        obstacle_id=obstacle_id,
        step=_first_step(long_hit, lat_hit),
        long_margin=float(np.min(dx - long_allow)),
        lat_margin=float(np.min(dy - lat_allow)),
    )


def detect_lateral_collision(
    ego_states: np.ndarray,
    obs_traj: np.ndarray,
    ego_length: float,
    ego_width: float,
    obs_length: float,
    obs_width: float,
    eps: float,
    obstacle_id: int = -1,
) -> CollisionReport | None:
    """
    The vehicles are longitudinally aligned at k = 0 and, at some steps,
    overlap longitudinally and laterally (each extent padded by eps)
    """
    horizon = _common_horizon(ego_states, obs_traj)
    x = ego_states[:horizon]
    o = obs_traj[:horizon]
    long_allow = (ego_length + obs_length) / 2 + eps
    lat_allow = (ego_width + obs_width) / 2 + eps
    dx = np.abs(x[:, 0] - o[:, 0])
    dy = np.abs(x[:, 1] - o[:, 1])
    if not dx[0] < long_allow:
        return None
    long_hit = dx < long_allow
    lat_hit = dy < lat_allow
    if not lat_hit.any():
        return None
    return CollisionReport(
        kind=CollisionKind.LATERAL,
        obstacle_id=obstacle_id,
        step=_first_step(long_hit, lat_hit),
        long_margin=float(np.min(dx - long_allow)),
        lat_margin=float(np.min(dy - lat_allow)),
    )


def detect_collisions(
    ego_states: np.ndarray,
    obstacles: list[ObstaclePrediction],
    ego_length: float,
    ego_width: float,
    omega1: float,
    eps: float,
) -> list[CollisionReport]:
    """
    At most one report per obstacle, lateral prevailing when both detectors fire
    """
    reports = []
    for obs in obstacles:
        lateral = detect_lateral_collision(
            ego_states,
            obs.traj,
            ego_length,
            ego_width,
            obs.length,
            obs.width,
            eps,
            obs.id,
        )
        if lateral is not None:
            reports.append(lateral)
            continue
        longitudinal = detect_longitudinal_collision(
            ego_states,
            obs.traj,
            ego_length,
            ego_width,
            obs.length,
            obs.width,
            omega1,
            eps,
            obs.id,
        )
        if longitudinal is not None:
            reports.append(longitudinal)
    return reports


def physical_overlap(
    ego_states: np.ndarray,
    obs_traj: np.ndarray,
    ego_length: float,
    ego_width: float,
    obs_length: float,
    obs_width: float,
) -> int | None:
    """First step at which the two rectangles overlap with positive area"""
    horizon = _common_horizon(ego_states, obs_traj)
    dx = np.abs(ego_states[:horizon, 0] - obs_traj[:horizon, 0])
    dy = np.abs(ego_states[:horizon, 1] - obs_traj[:horizon, 1])
    hit = np.flatnonzero(
        (dx < (ego_length + obs_length) / 2) & (dy < (ego_width + obs_width) / 2)
    )
    return int(hit[0]) if hit.size else None
