from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from lanefree.core.classes import (
    EllipsoidParams,
    GainSet,
    LateralCorridor,
    MovingBoundary,
    ObstaclePrediction,
    SpeedTargets,
    VehicleState,
    Weights,
)
from lanefree.core.config import Config
from lanefree.core.objective import StageTerms


class StopReason(Enum):
    GRADIENT_TOL = "gradient_tol"
    ITERATION_CAP = "iteration_cap"
    TIME_BUDGET = "time_budget"
    # No step down to alpha_min decreases J: stationary under projection
    LINE_SEARCH_STALL = "line_search_stall"


@dataclass(frozen=True)
class BoundConfig:
    u_min1: float
    u_max1: float
    corridor: LateralCorridor
    gains: GainSet
    # One MovingBoundary per step, only set for longitudinal emergency plans
    boundary_track: tuple[MovingBoundary, ...] | None = None


@dataclass(eq=False)
class OcpSpec:
    """Everything a single solve needs"""

    horizon: int
    dt: float
    x0: VehicleState
    targets: SpeedTargets
    weights: Weights
    ellipsoid: EllipsoidParams
    beta: float
    u1_prev: float
    obstacles: list[ObstaclePrediction]
    bounds: BoundConfig
    ego_length: float
    ego_width: float
    t0: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        track = self.bounds.boundary_track
        if track is not None and len(track) < self.horizon:
            raise ValueError(
                f"Moving boundary covers {len(track)} steps, horizon is {self.horizon}"
            )


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-4
    max_iter: int = 500
    time_budget: float | None = 0.25
    armijo_c: float = 1e-4
    alpha_min: float = 1e-10
    prune_tol: float = 1e-4

    @classmethod
    def from_config(cls, config: Config) -> "SolverSettings":
        return cls(
            tol=config.solver_tol,
            max_iter=config.solver_max_iter,
            time_budget=config.time_budget,
            armijo_c=config.armijo_c,
            alpha_min=config.alpha_min,
            prune_tol=config.prune_tol,
        )


@dataclass(eq=False)
class SolverWorkspace:
    """Mutable state of one solve. states always equal the rollout of controls"""

    controls: np.ndarray  # (K, 2)
    states: np.ndarray  # (K+1, 4)
    costates: np.ndarray  # (K+1, 4)
    gradient: np.ndarray  # (K, 2)
    dphi_du: np.ndarray  # (K, 2)
    cost: float = float("inf")
    prev_gradient: np.ndarray | None = None
    prev_direction: np.ndarray | None = None
    prev_pinned: np.ndarray | None = None
    alpha_prev: float | None = None
    iteration: int = 0
    history: list[float] = field(default_factory=list)
    # Stage terms at controls, reused by the next costate sweep
    terms: StageTerms | None = None

    @classmethod
    def empty(cls, horizon: int) -> "SolverWorkspace":
        return cls(
            controls=np.zeros((horizon, 2)),
            states=np.zeros((horizon + 1, 4)),
            costates=np.zeros((horizon + 1, 4)),
            gradient=np.zeros((horizon, 2)),
            dphi_du=np.zeros((horizon, 2)),
        )


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    cost: float
    grad_norm: float
    wall_time: float
    stop_reason: StopReason
    history: list[float] = field(default_factory=list)
    empty_box_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "cost": self.cost,
            "grad_norm": self.grad_norm,
            "wall_time_s": self.wall_time,
            "stop_reason": self.stop_reason.value,
            "empty_box_steps": self.empty_box_steps,
            "history": self.history,
        }
