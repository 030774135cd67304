from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from lanefree.core.classes import ControlInput, Plan
from lanefree.solver.classes import SolverReport


class TriggerKind(Enum):
    APPLICATION_PERIOD_ELAPSED = "application_period_elapsed"
    OBSTACLE_DEVIATION = "obstacle_deviation"
    NEW_OBSTACLE_IN_ZONE = "new_obstacle_in_zone"


@dataclass(frozen=True)
class TriggerEvent:
    kind: TriggerKind
    time: float
    obstacle_id: int | None = None
    # Only set for OBSTACLE_DEVIATION: "longitudinal" or "lateral"
    axis: str | None = None
    magnitude: float | None = None


class CollisionKind(Enum):
    LONGITUDINAL = "longitudinal"
    LATERAL = "lateral"


@dataclass(frozen=True)
class CollisionReport:
    kind: CollisionKind
    obstacle_id: int
    step: int
    # Smallest |dx| - allowance and |dy| - allowance over the horizon (negative = overlap)
    long_margin: float
    lat_margin: float


@dataclass(frozen=True)
class InteractionZone:
    upstream: float
    downstream: float
    members: frozenset[int] = frozenset()
    # Members ahead of the ego (0 < dx <= downstream)
    downstream_members: frozenset[int] = frozenset()


@dataclass(frozen=True)
class AdaptiveSpeedConfig:
    v_des1: float
    v_incr1: float = 5.0
    v_incr2: float = 2.0
    d_bar: float = 150.0


@dataclass(eq=False)
class PlanRecord:
    """A plan being applied by one vehicle"""

    plan: Plan
    application_horizon: int
    snapshot_id: int
    plan_id: int = -1
    applied_through: int = 0
    vd1: float = 0.0
    emergency: CollisionKind | None = None
    report: SolverReport | None = None
    emergency_report: SolverReport | None = None
    # Obstacle predictions the plan was optimised against, ego frame
    obstacle_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    obstacle_traj: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 4)))
    zone_members: frozenset[int] = frozenset()

    def __post_init__(self):
        if not 0 <= self.applied_through <= self.plan.horizon:
            raise ValueError(
                f"applied_through {self.applied_through} outside [0, {self.plan.horizon}]"
            )

    @property
    def exhausted(self) -> bool:
        return self.applied_through >= self.application_horizon

    def next_control(self) -> ControlInput:
        return self.plan.control(self.applied_through)

    def remaining_states(self) -> np.ndarray:
        """Predicted states from the current step onward"""
        return self.plan.states[self.applied_through :]

    def unused_controls(self) -> np.ndarray:
        return self.plan.controls[self.applied_through :]

    def solve_times(self) -> list[float]:
        return [r.wall_time for r in (self.report, self.emergency_report) if r is not None]


@dataclass(frozen=True, eq=False)
class WorldSnapshot:
    """
    Immutable view of the world at one step boundary.
    board maps vehicle id to its broadcast predicted states, index 0 at this step,
    x1 in the wrapped road frame of the current position
    """

    step: int
    time: float
    dt: float
    road_length: float
    road_width: float
    states: np.ndarray
    lengths: np.ndarray
    widths: np.ndarray
    v_des: np.ndarray
    board: Mapping[int, np.ndarray]

    @property
    def n(self) -> int:
        return self.states.shape[0]
