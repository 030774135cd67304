import json
import pathlib
from typing import Any

from lanefree import __version__
from lanefree.core.bounds import gain_set
from lanefree.core.classes import EllipsoidParams, GainSet, Weights
from lanefree.core.errors import ConfigFileInvalid, ConfigSchemaError


class Config:
    """
    lanefree configuration.
    Class properties are defaults (the ring-road simulation setup), can be
    overridden on instantiation (and will shadow class defaults)
    """

    # Scenario Settings
    road_length: float = 1000.0
    road_width: float = 10.2
    density: float = 100.0
    duration: float = 300.0
    warmup: float = 60.0
    seed: int = 1
    v_des_min: float = 25.0
    v_des_max: float = 35.0
    n_virtual_lanes: int = 4
    jitter: float = 0.1
    detector_positions: list[float] = [0.0, 200.0, 400.0, 600.0, 800.0]
    max_placement_retries: int = 100
    # Objective Settings
    w1: float = 0.005
    w2: float = 0.005
    w3: float = 0.015
    w4: float = 0.005
    w5: float = 7.0
    w6: float = 0.1
    w7: float = 0.005
    omega1: float = 0.53
    omega2: float = 0.5
    mu_x: float = 1.3
    mu_y: float = 1.2
    eps_w: float = 0.1
    p1: int = 6
    p2: int = 2
    p3: int = 2
    p4: int = 2
    p5: int = 2
    beta: float = 0.03
    # Bound Settings
    dt: float = 0.25
    horizon: int = 32
    u_max1: float = 0.5
    u_min1: float = -2.0
    u_min1_emergency: float = -4.0
    k_long1: float = 1.0
    k_lat1: float = 1.0
    follow_gap: float = 1.0
    # MPC Settings
    v_incr1: float = 5.0
    v_incr2: float = 2.0
    d_bar: float = 150.0
    iz_min_length: float = 100.0
    deviation_long: float = 0.2
    deviation_lat: float = 0.1
    collision_eps: float = 0.2
    emergency_corridor: float = 0.15
    strict_emergency: bool = True
    # Solver Settings
    solver_tol: float = 1e-4
    solver_max_iter: int = 500
    solver_time_budget: float = 0.25
    armijo_c: float = 1e-4
    alpha_min: float = 1e-10
    # Obstacles whose weighted potential stays below this at every step are skipped
    prune_tol: float = 1e-4
    # Run Settings
    workers: int = 1
    write_trajectories: bool = True
    version: str = __version__

    # Keys grouped as they appear in the config file
    SECTIONS: dict[str, tuple[str, ...]] = {
        "scenario": (
            "road_length",
            "road_width",
            "density",
            "duration",
            "warmup",
            "seed",
            "v_des_min",
            "v_des_max",
            "n_virtual_lanes",
            "jitter",
            "detector_positions",
            "max_placement_retries",
        ),
        "objective": (
            "w1",
            "w2",
            "w3",
            "w4",
            "w5",
            "w6",
            "w7",
            "omega1",
            "omega2",
            "mu_x",
            "mu_y",
            "eps_w",
            "p1",
            "p2",
            "p3",
            "p4",
            "p5",
            "beta",
        ),
        "bounds": (
            "dt",
            "horizon",
            "u_max1",
            "u_min1",
            "u_min1_emergency",
            "k_long1",
            "k_lat1",
            "follow_gap",
        ),
        "mpc": (
            "v_incr1",
            "v_incr2",
            "d_bar",
            "iz_min_length",
            "deviation_long",
            "deviation_lat",
            "collision_eps",
            "emergency_corridor",
            "strict_emergency",
        ),
        "solver": (
            "solver_tol",
            "solver_max_iter",
            "solver_time_budget",
            "armijo_c",
            "alpha_min",
            "prune_tol",
        ),
        "run": ("workers", "write_trajectories"),
    }

    def __init__(self, **kwargs: Any) -> None:
        # Lists are mutable, give every instance its own copy
        self.detector_positions = list(self.detector_positions)
        self.assign_kwargs(**kwargs)

    @classmethod
    def known_keys(cls) -> set[str]:
        return {key for keys in cls.SECTIONS.values() for key in keys}

    @classmethod
    def from_file(cls, path: pathlib.Path) -> "Config":
        """
        Reads a sectioned JSON config file:
            {"scenario": {"density": 200}, "solver": {...}, ...}
        Raises ConfigFileInvalid on syntax errors and ConfigSchemaError
        on unknown or invalid keys
        """
        path = pathlib.Path(path)
        try:
            with open(path) as file:
                raw = json.load(file)
        except json.JSONDecodeError as e:
            raise ConfigFileInvalid(
                f"{path.name}: line {e.lineno} column {e.colno}: {e.msg}"
            ) from e

        if not isinstance(raw, dict):
            raise ConfigFileInvalid(f"{path.name}: top level must be an object")
        return cls.from_sections(raw, source=path.name)

    @classmethod
    def from_sections(
        cls, raw: dict, base: "Config | None" = None, source: str = "config"
    ) -> "Config":
        """
        Builds a Config from {section: {key: value}}, on top of base if given
        """
        flat: dict[str, Any] = {}
        bad_keys: list[str] = []
        for section, values in raw.items():
            if section not in cls.SECTIONS or not isinstance(values, dict):
                bad_keys.append(section)
                continue
            for key, value in values.items():
                if key not in cls.SECTIONS[section]:
                    bad_keys.append(f"{section}.{key}")
                else:
                    flat[key] = value
        if bad_keys:
            raise ConfigSchemaError(bad_keys)

        try:
            config = cls(**{**(base.items() if base is not None else {}), **flat})
        except (TypeError, ValueError) as e:
            raise ConfigSchemaError(list(flat.keys()), f"{source}: {e}") from e

        invalid = config.validate()
        if invalid:
            raise ConfigSchemaError(invalid)
        return config

    def validate(self) -> list[str]:
        """
        Returns the keys holding invalid values. An empty list is a valid config
        """
        bad: list[str] = []
        if self.road_length <= 0:
            bad.append("road_length")
        if self.road_width <= 0:
            bad.append("road_width")
        if self.density <= 0:
            bad.append("density")
        if self.warmup < 0:
            bad.append("warmup")
        if self.duration <= self.warmup:
            bad.append("duration")
        if not 0 <= self.v_des_min <= self.v_des_max:
            bad.append("v_des_min")
        if self.n_virtual_lanes < 1:
            bad.append("n_virtual_lanes")
        if not 0 <= self.jitter < 0.5:
            bad.append("jitter")
        if any(not 0 <= x < self.road_length for x in self.detector_positions):
            bad.append("detector_positions")
        for key in ("w1", "w2", "w3", "w4", "w5", "w6", "w7", "beta"):
            if getattr(self, key) < 0:
                bad.append(key)
        for key in ("omega1", "omega2", "eps_w"):
            if getattr(self, key) <= 0:
                bad.append(key)
        for key in ("mu_x", "mu_y"):
            if getattr(self, key) < 1:
                bad.append(key)
        for key in ("p1", "p2", "p3", "p4"):
            value = getattr(self, key)
            if value <= 0 or value % 2 != 0:
                bad.append(key)
        if self.p5 <= 0:
            bad.append("p5")
        if self.dt <= 0:
            bad.append("dt")
        if self.horizon < 2 or self.horizon % 2 != 0:
            bad.append("horizon")
        if self.dt > 0:
            for key in ("k_long1", "k_lat1"):
                if not 0 < getattr(self, key) <= 1 / self.dt**2:
                    bad.append(key)
        if not self.u_min1 < 0 < self.u_max1:
            bad.append("u_min1")
        if self.u_min1_emergency > self.u_min1:
            bad.append("u_min1_emergency")
        for key in (
            "follow_gap",
            "v_incr1",
            "v_incr2",
            "d_bar",
            "iz_min_length",
            "deviation_long",
            "deviation_lat",
            "collision_eps",
            "emergency_corridor",
            "solver_tol",
            "armijo_c",
            "alpha_min",
        ):
            if getattr(self, key) <= 0:
                bad.append(key)
        if self.solver_max_iter < 1:
            bad.append("solver_max_iter")
        if self.prune_tol < 0:
            bad.append("prune_tol")
        if self.solver_time_budget < 0:
            bad.append("solver_time_budget")
        if self.workers < 1:
            bad.append("workers")
        return bad

    @property
    def n_vehicles(self) -> int:
        """Nominal vehicle count; density counts use this, not occupancy"""
        return int(round(self.density * self.road_length / 1000.0))

    @property
    def time_budget(self) -> float | None:
        return self.solver_time_budget if self.solver_time_budget > 0 else None

    def gains(self) -> GainSet:
        return gain_set(self.k_long1, self.k_lat1, self.dt)

    def weights(self) -> Weights:
        return Weights(self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7)

    def ellipsoid(self) -> EllipsoidParams:
        return EllipsoidParams(
            omega1=self.omega1,
            omega2=self.omega2,
            mu_x=self.mu_x,
            mu_y=self.mu_y,
            eps_w=self.eps_w,
            p1=self.p1,
            p2=self.p2,
            p3=self.p3,
            p4=self.p4,
            p5=self.p5,
        )

    def items(self) -> dict[str, Any]:
        """
        Return a dict (key, val) for every configurable member
        """
        items = {}
        for key in sorted(self.known_keys()):
            value = getattr(self, key)
            if isinstance(value, pathlib.Path):
                items[key] = str(value)
            elif isinstance(value, list):
                items[key] = list(value)
            else:
                items[key] = value
        items["version"] = self.version
        return items

    def to_dict(self) -> dict[str, Any]:
        return dict(self.items())

    def section_dict(self) -> dict[str, dict[str, Any]]:
        """The config regrouped in the config file layout"""
        items = self.items()
        return {
            section: {key: items[key] for key in keys}
            for section, keys in self.SECTIONS.items()
        }

    def __str__(self) -> str:
        return "\n".join(f"{key}: {val}" for key, val in self.items().items())

    def assign_kwargs(self, **kwargs: Any) -> None:
        for key, value in kwargs.items():
            # Check if key is valid
            if value is None:
                continue

            if key == "version":
                continue

            if key not in self.known_keys():
                raise ValueError(f"Unknown config key: {key}")

            # Convert to expected type
            current = getattr(self, key)
            if isinstance(current, bool):  # Need to check bool before int
                if isinstance(value, str):
                    setattr(self, key, value.lower() == "true")
                else:
                    setattr(self, key, bool(value))
            elif isinstance(current, int):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(f"{key} must be an integer, got {value}")
                setattr(self, key, int(value))
            elif isinstance(current, float):
                setattr(self, key, float(value))
            elif isinstance(current, list):
                if isinstance(value, str | int | float):
                    value = [value]
                setattr(self, key, [float(x) for x in value])
            else:
                setattr(self, key, value)

