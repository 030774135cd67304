from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from lanefree.core.config import Config
from lanefree.mpc.classes import PlanRecord, WorldSnapshot

# Vehicle classes: (length m, width m)
VEHICLE_CLASSES: dict[str, tuple[float, float]] = {
    "I": (3.2, 1.6),
    "II": (3.4, 1.7),
    "III": (3.9, 1.7),
    "IV": (4.25, 1.8),
    "V": (4.55, 1.82),
    "VI": (4.6, 1.77),
    "VII": (5.15, 1.84),
    "VIII": (5.2, 1.88),
}


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    class_id: str
    length: float
    width: float
    v_des1: float

    @classmethod
    def of_class(cls, id: int, class_id: str, v_des1: float) -> "VehicleSpec":
        length, width = VEHICLE_CLASSES[class_id]
        return cls(id, class_id, length, width, v_des1)


@dataclass
class DetectorRecord:
    position: float
    count: int = 0
    window: float = 0.0

    @property
    def flow(self) -> float:
        """veh/h"""
        return self.count * 3600.0 / self.window if self.window > 0 else 0.0


@dataclass(eq=False)
class TrajectoryLog:
    """Per step, per vehicle rows; one array per column"""

    columns: tuple[str, ...] = (
        "time",
        "vehicle_id",
        "x1",
        "x2",
        "x3",
        "x4",
        "u1",
        "u2",
        "plan_id",
        "emergency",
        "v_des1",
        "vd1",
    )
    _blocks: list[np.ndarray] = field(default_factory=list)

    def append(self, block: np.ndarray) -> None:
        self._blocks.append(block)

    def table(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros((0, len(self.columns)))
        return np.vstack(self._blocks)

    def column(self, name: str) -> np.ndarray:
        return self.table()[:, self.columns.index(name)]


@dataclass
class RunStatistics:
    density: float
    seed: int
    n_vehicles: int
    detectors: list[DetectorRecord]
    n_plans: int = 0
    n_emergency: int = 0
    collision_audit_count: int = 0
    solve_times: list[float] = field(default_factory=list)
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    log: TrajectoryLog = field(default_factory=TrajectoryLog)
    # (steps, n, 2) applied controls and (steps, n) new-plan flags
    controls_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 2)))
    plan_start: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    wall_time: float = 0.0

    @property
    def mean_flow(self) -> float:
        """Average flow across detectors (veh/h)"""
        if not self.detectors:
            return 0.0
        return float(np.mean([d.flow for d in self.detectors]))

    @property
    def emergency_pct(self) -> float:
        return 100.0 * self.n_emergency / self.n_plans if self.n_plans else 0.0


@dataclass(frozen=True)
class FundamentalDiagramRow:
    density: float
    mean_flow: float
    min_flow: float
    max_flow: float
    emergency_pct: float
    n_plans: int


@dataclass(eq=False)
class World:
    """
    Mutable ring-road state. x1 is kept wrapped into [0, road_length)
    """

    config: Config
    vehicles: list[VehicleSpec]
    states: np.ndarray  # (n, 4)
    step: int = 0
    records: list[PlanRecord | None] = field(default_factory=list)
    last_controls: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    plan_counter: int = 0

    def __post_init__(self):
        n = len(self.vehicles)
        if not self.records:
            self.records = [None] * n
        if self.last_controls.shape != (n, 2):
            self.last_controls = np.zeros((n, 2))
        self.lengths = np.array([v.length for v in self.vehicles], dtype=float)
        self.widths = np.array([v.width for v in self.vehicles], dtype=float)
        self.v_des = np.array([v.v_des1 for v in self.vehicles], dtype=float)
        for values in (self.lengths, self.widths, self.v_des):
            values.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.vehicles)

    @property
    def time(self) -> float:
        return self.step * self.config.dt

    def board(self) -> dict[int, np.ndarray]:
        """Each planned vehicle's remaining trajectory, shifted to its wrapped x1"""
        board = {}
        for i, record in enumerate(self.records):
            if record is None:
                continue
            traj = record.remaining_states().copy()
            traj[:, 0] += self.states[i, 0] - traj[0, 0]
            traj.flags.writeable = False
            board[i] = traj
        return board

    def snapshot(self) -> WorldSnapshot:
        states = self.states.copy()
        states.flags.writeable = False
        return WorldSnapshot(
            step=self.step,
            time=self.time,
            dt=self.config.dt,
            road_length=self.config.road_length,
            road_width=self.config.road_width,
            states=states,
            lengths=self.lengths,
            widths=self.widths,
            v_des=self.v_des,
            board=MappingProxyType(self.board()),
        )
