from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, slots=True)
class VehicleState:
    """x1/x2 longitudinal/lateral position (m), x3/x4 speeds (m/s)"""

    x1: float
    x2: float
    x3: float
    x4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4], dtype=float)

    @classmethod
    def from_array(cls, array) -> "VehicleState":
        return cls(float(array[0]), float(array[1]), float(array[2]), float(array[3]))


@dataclass(frozen=True, slots=True)
class ControlInput:
    """u1/u2 longitudinal/lateral acceleration (m/s^2)"""

    u1: float
    u2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)

    @classmethod
    def from_array(cls, array) -> "ControlInput":
        return cls(float(array[0]), float(array[1]))


@dataclass(eq=False)
class Plan:
    """
    A finite horizon plan.
    controls has shape (K, 2) and states (K+1, 4); states[k+1] is step(states[k], controls[k])
    """

    t0: float
    dt: float
    controls: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.controls.ndim != 2 or self.controls.shape[1] != 2:
            raise ValueError(f"controls must have shape (K, 2), got {self.controls.shape}")
        if self.states.shape != (self.controls.shape[0] + 1, 4):
            raise ValueError(
                f"states must have shape ({self.controls.shape[0] + 1}, 4), got {self.states.shape}"
            )

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def state(self, k: int) -> VehicleState:
        return VehicleState.from_array(self.states[k])

    def control(self, k: int) -> ControlInput:
        return ControlInput.from_array(self.controls[k])

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.horizon + 1)


@dataclass(frozen=True, slots=True)
class AccelLimits:
    u_min1: float
    u_max1: float
    u_min2: float
    u_max2: float

    def is_empty(self) -> bool:
        return self.u_max1 < self.u_min1 or self.u_max2 < self.u_min2


@dataclass(frozen=True, slots=True)
class GainSet:
    k_long1: float
    k_long2: float
    k_lat1: float
    k_lat2: float


@dataclass(frozen=True, slots=True)
class MovingBoundary:
    """A virtual longitudinal limit, x3_hat >= 0"""

    x1_hat: float
    x3_hat: float
    u1_hat: float = 0.0

    def errors(self, s: VehicleState) -> tuple[float, float]:
        """Tracking errors (e1, e2) = (x1 - x1_hat, x3 - x3_hat)"""
        return s.x1 - self.x1_hat, s.x3 - self.x3_hat


@dataclass(frozen=True, slots=True)
class LateralCorridor:
    """x2_right is the right (lower) limit, x2_left the left (upper) limit"""

    x2_right: float
    x2_left: float

    def __post_init__(self):
        if not self.x2_right < self.x2_left:
            raise ValueError(
                f"Corridor limits must satisfy right < left: ({self.x2_right}, {self.x2_left})"
            )

    @classmethod
    def for_road(cls, road_width: float, vehicle_width: float) -> "LateralCorridor":
        return cls(vehicle_width / 2, road_width - vehicle_width / 2)

    def contains(self, x2: float, tol: float = 0.0) -> bool:
        return self.x2_right - tol <= x2 <= self.x2_left + tol

    def intersect(self, other: "LateralCorridor") -> "LateralCorridor":
        return LateralCorridor(
            max(self.x2_right, other.x2_right), min(self.x2_left, other.x2_left)
        )


@dataclass(frozen=True, slots=True)
class Weights:
    w1: float = 0.005
    w2: float = 0.005
    w3: float = 0.015
    w4: float = 0.005
    w5: float = 7.0
    w6: float = 0.1
    w7: float = 0.005

    @classmethod
    def zeros(cls) -> "Weights":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class EllipsoidParams:
    omega1: float = 0.53
    omega2: float = 0.5
    mu_x: float = 1.3
    mu_y: float = 1.2
    eps_w: float = 0.1
    p1: int = 6
    p2: int = 2
    p3: int = 2
    p4: int = 2
    p5: float = 2

    @property
    def omega1_em(self) -> float:
        """Emergency time-gap used by the longitudinal collision check"""
        return 0.5 * self.omega1


@dataclass(eq=False)
class ObstaclePrediction:
    """
    Another vehicle as seen by the ego planner.
    traj has shape (m, 4): o1, o2, o3, o4 at ego steps 0..m-1
    """

    id: int
    length: float
    width: float
    traj: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.traj.shape[0]


@dataclass(frozen=True, slots=True)
class SpeedTargets:
    vd1: float
    vd2: float = 0.0
