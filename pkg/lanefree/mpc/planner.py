"""
Event-triggered replanning for one vehicle at a time.

A Planner turns an immutable WorldSnapshot into a PlanRecord for an ego
vehicle: it builds the interaction zone, completes the obstacles' broadcast
trajectories, solves, and checks the result with both collision detectors.
A detected collision leads to one reformulated (emergency) solve.
"""

import logging
import math

import numpy as np

from lanefree.core.bounds import dead_beat_gains, moving_boundary_track
from lanefree.core.classes import (
    GainSet,
    LateralCorridor,
    ObstaclePrediction,
    SpeedTargets,
    VehicleState,
)
from lanefree.core.config import Config
from lanefree.core.errors import EmptyTrajectory, EmergencyReplanFailed, StaleSnapshot
from lanefree.mpc.classes import (
    AdaptiveSpeedConfig,
    CollisionKind,
    CollisionReport,
    InteractionZone,
    PlanRecord,
    TriggerEvent,
    TriggerKind,
    WorldSnapshot,
)
from lanefree.mpc.collision import detect_collisions, physical_overlap
from lanefree.solver.classes import BoundConfig, OcpSpec, SolverSettings
from lanefree.solver.fda import solve

logger = logging.getLogger(__name__)


def wrap_offset(dx, road_length: float):
    """Map longitudinal differences onto the nearest image, [-L/2, L/2)"""
    return (np.asarray(dx) + road_length / 2) % road_length - road_length / 2


def extrapolate_obstacle(partial: np.ndarray, horizon: int, dt: float) -> np.ndarray:
    """
    Completes a partial (m, 4) trajectory to (horizon, 4) assuming zero
    accelerations after the last known sample. Longer inputs are truncated
    """
    partial = np.asarray(partial, dtype=float)
    if partial.ndim != 2 or partial.shape[0] == 0:
        raise EmptyTrajectory("Cannot extrapolate an empty trajectory")
    m = partial.shape[0]
    if m >= horizon:
        return partial[:horizon].copy()

    last = partial[-1]
    steps = np.arange(1, horizon - m + 1, dtype=float)
    tail = np.empty((horizon - m, 4))
    tail[:, 0] = last[0] + steps * dt * last[2]
    tail[:, 1] = last[1] + steps * dt * last[3]
    tail[:, 2] = last[2]
    tail[:, 3] = last[3]
    return np.vstack([partial, tail])


def adaptive_desired_speed(
    x3_0: float, d_d: float, d_v: float | None, cfg: AdaptiveSpeedConfig
) -> float:
    """
    Caps the target speed at x3(0) + v_incr1 and, in dense downstream traffic
    (d_d > d_bar), at the downstream mean speed d_v + v_incr2
    """
    speed = min(x3_0 + cfg.v_incr1, cfg.v_des1)
    if d_v is not None and d_d > cfg.d_bar:
        speed = min(speed, d_v + cfg.v_incr2)
    return speed


def interaction_zone(
    ego_id: int, snapshot: WorldSnapshot, v_des1: float, horizon_s: float, min_length: float
) -> InteractionZone:
    length = max(v_des1 * horizon_s, min_length)
    dx = wrap_offset(snapshot.states[:, 0] - snapshot.states[ego_id, 0], snapshot.road_length)
    inside = (dx >= -length) & (dx <= length)
    inside[ego_id] = False
    ahead = inside & (dx > 0)
    return InteractionZone(
        upstream=length,
        downstream=length,
        members=frozenset(int(i) for i in np.flatnonzero(inside)),
        downstream_members=frozenset(int(i) for i in np.flatnonzero(ahead)),
    )


def detect_triggers(
    record: PlanRecord,
    snapshot: WorldSnapshot,
    zone: InteractionZone,
    deviation_long: float = 0.2,
    deviation_lat: float = 0.1,
) -> list[TriggerEvent]:
    """
    Events that call for a new plan:
    the application period has elapsed, an obstacle left its predicted
    trajectory, or a vehicle entered the interaction zone
    """
    now = snapshot.time
    events = []
    if record.applied_through >= record.application_horizon:
        events.append(TriggerEvent(TriggerKind.APPLICATION_PERIOD_ELAPSED, now))

    k = snapshot.step - record.snapshot_id
    if record.obstacle_ids.size and 0 <= k < record.obstacle_traj.shape[1]:
        predicted = record.obstacle_traj[:, k]
        actual = snapshot.states[record.obstacle_ids]
        dx = np.abs(wrap_offset(actual[:, 0] - predicted[:, 0], snapshot.road_length))
        dy = np.abs(actual[:, 1] - predicted[:, 1])
        for obs_id, ex, ey in zip(record.obstacle_ids, dx, dy, strict=True):
            if ex > deviation_long:
                events.append(
                    TriggerEvent(
                        TriggerKind.OBSTACLE_DEVIATION, now, int(obs_id), "longitudinal", float(ex)
                    )
                )
            elif ey > deviation_lat:
                events.append(
                    TriggerEvent(
                        TriggerKind.OBSTACLE_DEVIATION, now, int(obs_id), "lateral", float(ey)
                    )
                )

    for obs_id in sorted(zone.members - record.zone_members):
        events.append(TriggerEvent(TriggerKind.NEW_OBSTACLE_IN_ZONE, now, obs_id))
    return events


class Planner:
    """Builds and solves the planning problem of any vehicle from a snapshot"""

    def __init__(self, config: Config):
        self.config = config
        self.horizon = config.horizon
        self.dt = config.dt
        self.weights = config.weights()
        self.ellipsoid = config.ellipsoid()
        self.gains = config.gains()
        self.settings = SolverSettings.from_config(config)

    def speed_config(self, v_des1: float) -> AdaptiveSpeedConfig:
        return AdaptiveSpeedConfig(
            v_des1=v_des1,
            v_incr1=self.config.v_incr1,
            v_incr2=self.config.v_incr2,
            d_bar=self.config.d_bar,
        )

    def zone(self, ego_id: int, snapshot: WorldSnapshot) -> InteractionZone:
        return interaction_zone(
            ego_id,
            snapshot,
            float(snapshot.v_des[ego_id]),
            self.horizon * self.dt,
            self.config.iz_min_length,
        )

    def obstacle_predictions(
        self, ego_id: int, snapshot: WorldSnapshot, zone: InteractionZone
    ) -> list[ObstaclePrediction]:
        """
        Zone members' broadcast trajectories completed to the horizon and
        shifted to the nearest image of the ego (ego x1 stays in road frame)
        """
        ego_x1 = snapshot.states[ego_id, 0]
        obstacles = []
        for obs_id in sorted(zone.members):
            board = snapshot.board.get(obs_id)
            if board is None:
                board = snapshot.states[obs_id][None, :]
            traj = extrapolate_obstacle(board, self.horizon, self.dt)
            shift = ego_x1 + wrap_offset(traj[0, 0] - ego_x1, snapshot.road_length) - traj[0, 0]
            traj[:, 0] += shift
            obstacles.append(
                ObstaclePrediction(
                    id=obs_id,
                    length=float(snapshot.lengths[obs_id]),
                    width=float(snapshot.widths[obs_id]),
                    traj=traj,
                )
            )
        return obstacles

    def desired_speed(
        self, ego_id: int, snapshot: WorldSnapshot, zone: InteractionZone
    ) -> float:
        ahead = sorted(zone.downstream_members)
        d_d = len(ahead) / (zone.downstream / 1000.0)
        d_v = float(np.mean(snapshot.states[ahead, 2])) if ahead else None
        return adaptive_desired_speed(
            float(snapshot.states[ego_id, 2]),
            d_d,
            d_v,
            self.speed_config(float(snapshot.v_des[ego_id])),
        )

    def road_corridor(self, ego_id: int, snapshot: WorldSnapshot) -> LateralCorridor:
        return LateralCorridor.for_road(snapshot.road_width, float(snapshot.widths[ego_id]))

    def build_spec(
        self,
        ego_id: int,
        snapshot: WorldSnapshot,
        vd1: float,
        obstacles: list[ObstaclePrediction],
        u1_prev: float,
        bounds: BoundConfig | None = None,
    ) -> OcpSpec:
        if bounds is None:
            bounds = BoundConfig(
                u_min1=self.config.u_min1,
                u_max1=self.config.u_max1,
                corridor=self.road_corridor(ego_id, snapshot),
                gains=self.gains,
            )
        return OcpSpec(
            horizon=self.horizon,
            dt=self.dt,
            x0=VehicleState.from_array(snapshot.states[ego_id]),
            targets=SpeedTargets(vd1),
            weights=self.weights,
            ellipsoid=self.ellipsoid,
            beta=self.config.beta,
            u1_prev=u1_prev,
            obstacles=obstacles,
            bounds=bounds,
            ego_length=float(snapshot.lengths[ego_id]),
            ego_width=float(snapshot.widths[ego_id]),
            t0=snapshot.time,
        )

    def warm_start(self, previous: PlanRecord | None) -> np.ndarray:
        """The unused part of the previous plan, padded with zero accelerations"""
        guess = np.zeros((self.horizon, 2))
        if previous is not None:
            unused = previous.unused_controls()[: self.horizon]
            guess[: len(unused)] = unused
        return guess

    def detect(self, states: np.ndarray, spec: OcpSpec) -> list[CollisionReport]:
        return detect_collisions(
            states,
            spec.obstacles,
            spec.ego_length,
            spec.ego_width,
            self.ellipsoid.omega1,
            self.config.collision_eps,
        )

    def plan(
        self,
        ego_id: int,
        snapshot: WorldSnapshot,
        previous: PlanRecord | None = None,
        u1_prev: float = 0.0,
        now_step: int | None = None,
    ) -> PlanRecord:
        if now_step is not None and now_step - snapshot.step > 1:
            raise StaleSnapshot(
                f"Snapshot of step {snapshot.step} used at step {now_step}"
            )

        zone = self.zone(ego_id, snapshot)
        obstacles = self.obstacle_predictions(ego_id, snapshot, zone)
        vd1 = self.desired_speed(ego_id, snapshot, zone)
        spec = self.build_spec(ego_id, snapshot, vd1, obstacles, u1_prev)
        plan, report = solve(spec, self.warm_start(previous), self.settings)

        record = PlanRecord(
            plan=plan,
            application_horizon=self.horizon // 2,
            snapshot_id=snapshot.step,
            vd1=vd1,
            report=report,
            obstacle_ids=np.array([o.id for o in obstacles], dtype=int),
            obstacle_traj=(
                np.stack([o.traj for o in obstacles])
                if obstacles
                else np.zeros((0, self.horizon, 4))
            ),
            zone_members=zone.members,
        )

        reports = self.detect(plan.states, spec)
        if not reports:
            return record
        return self.replan_emergency(ego_id, spec, record, reports)

    def emergency_bounds(
        self, spec: OcpSpec, reports: list[CollisionReport]
    ) -> tuple[BoundConfig, CollisionKind]:
        """
        Lateral reports confine the ego to x2(0) +/- emergency_corridor (dead-beat
        gains); otherwise the ego follows the obstacle hit first, with u_min1_emergency
        """
        lateral = [r for r in reports if r.kind == CollisionKind.LATERAL]
        if lateral:
            half = self.config.emergency_corridor
            band = LateralCorridor(spec.x0.x2 - half, spec.x0.x2 + half)
            corridor = band.intersect(spec.bounds.corridor)
            gains = dead_beat_gains(spec.dt)
            return (
                BoundConfig(
                    u_min1=spec.bounds.u_min1,
                    u_max1=spec.bounds.u_max1,
                    corridor=corridor,
                    gains=GainSet(
                        spec.bounds.gains.k_long1,
                        spec.bounds.gains.k_long2,
                        gains.k_lat1,
                        gains.k_lat2,
                    ),
                ),
                CollisionKind.LATERAL,
            )

        target = min(reports, key=lambda r: (r.step, r.obstacle_id))
        obstacle = next(o for o in spec.obstacles if o.id == target.obstacle_id)
        # x1_hat = obstacle rear - follow_gap - ego half length
        track = moving_boundary_track(
            obstacle.traj, obstacle.length, spec.ego_length, self.config.follow_gap, spec.dt
        )
        return (
            BoundConfig(
                u_min1=self.config.u_min1_emergency,
                u_max1=spec.bounds.u_max1,
                corridor=spec.bounds.corridor,
                gains=spec.bounds.gains,
                boundary_track=tuple(track),
            ),
            CollisionKind.LONGITUDINAL,
        )

    def replan_emergency(
        self,
        ego_id: int,
        spec: OcpSpec,
        first: PlanRecord,
        reports: list[CollisionReport],
    ) -> PlanRecord:
        bounds, kind = self.emergency_bounds(spec, reports)
        logger.info(
            f"Vehicle {ego_id} at t={spec.t0:.2f}: {kind.value} collision with "
            f"{[r.obstacle_id for r in reports]}, replanning"
        )
        emergency_spec = OcpSpec(
            horizon=spec.horizon,
            dt=spec.dt,
            x0=spec.x0,
            targets=spec.targets,
            weights=spec.weights,
            ellipsoid=spec.ellipsoid,
            beta=spec.beta,
            u1_prev=spec.u1_prev,
            obstacles=spec.obstacles,
            bounds=bounds,
            ego_length=spec.ego_length,
            ego_width=spec.ego_width,
            t0=spec.t0,
        )
        plan, report = solve(emergency_spec, first.plan.controls, self.settings)

        remaining = self.detect(plan.states, emergency_spec)
        if remaining:
            by_id = {o.id: o for o in spec.obstacles}
            flagged = [r.obstacle_id for r in remaining]
            overlapping = [
                r.obstacle_id
                for r in remaining
                if physical_overlap(
                    plan.states,
                    by_id[r.obstacle_id].traj,
                    spec.ego_length,
                    spec.ego_width,
                    by_id[r.obstacle_id].length,
                    by_id[r.obstacle_id].width,
                )
                is not None
            ]
            message = (
                f"Emergency plan of vehicle {ego_id} at t={spec.t0:.2f} still detected "
                f"against {flagged}"
                + (f", physical overlap with {overlapping}" if overlapping else "")
            )
            if self.config.strict_emergency:
                logger.critical(message)
                raise EmergencyReplanFailed(
                    message,
                    dump=emergency_dump(ego_id, emergency_spec, plan.controls, plan.states, remaining),
                )
            logger.warning(message)

        return PlanRecord(
            plan=plan,
            application_horizon=first.application_horizon,
            snapshot_id=first.snapshot_id,
            vd1=first.vd1,
            emergency=kind,
            report=first.report,
            emergency_report=report,
            obstacle_ids=first.obstacle_ids,
            obstacle_traj=first.obstacle_traj,
            zone_members=first.zone_members,
        )


def emergency_dump(
    ego_id: int,
    spec: OcpSpec,
    controls: np.ndarray,
    states: np.ndarray,
    reports: list[CollisionReport],
) -> dict:
    """JSON serialisable description of a failed emergency solve"""

    def clean(value: float) -> float | None:
        return value if math.isfinite(value) else None

    return {
        "ego_id": ego_id,
        "t0": spec.t0,
        "x0": [spec.x0.x1, spec.x0.x2, spec.x0.x3, spec.x0.x4],
        "ego_length": spec.ego_length,
        "ego_width": spec.ego_width,
        "vd1": spec.targets.vd1,
        "corridor": [spec.bounds.corridor.x2_right, spec.bounds.corridor.x2_left],
        "u_min1": spec.bounds.u_min1,
        "controls": controls.tolist(),
        "states": states.tolist(),
        "reports": [
            {
                "kind": r.kind.value,
                "obstacle_id": r.obstacle_id,
                "step": r.step,
                "long_margin": clean(r.long_margin),
                "lat_margin": clean(r.lat_margin),
            }
            for r in reports
        ],
        "obstacles": [
            {"id": o.id, "length": o.length, "width": o.width, "traj": o.traj.tolist()}
            for o in spec.obstacles
        ],
    }
