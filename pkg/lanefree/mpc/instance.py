"""
Single planning problems read from an instance file.

Instance files are JSON:
    {
        "ego": {"state": [x1, x2, x3, x4], "length": 4.25, "width": 1.8},
        "obstacles": [
            {"id": 1, "state": [o1, o2, o3, o4], "length": 4.25, "width": 1.8},
            {"id": 2, "traj": [[o1, o2, o3, o4], ...], "length": 5.2, "width": 1.88}
        ],
        "road_width": 10.2,
        "vd1": 30.0,
        "u1_prev": 0.0,
        "config": {"objective": {"omega1": 0.35}}
    }
Obstacles given by a single state or a partial trajectory are completed to
the horizon with zero accelerations.
"""

import json
import logging
import pathlib
import time
from dataclasses import dataclass, replace

import numpy as np
from click import UsageError

from lanefree.core.classes import (
    LateralCorridor,
    ObstaclePrediction,
    Plan,
    SpeedTargets,
    VehicleState,
)
from lanefree.core.config import Config
from lanefree.core.errors import EmergencyReplanFailed, InstanceFileInvalid
from lanefree.core.logger import setup_rich_logger
from lanefree.core.objective import cost_field
from lanefree.core.outputs import (
    text_md5,
    write_cost_field,
    write_json,
    write_manifest,
    write_plan,
)
from lanefree.mpc.classes import CollisionKind, CollisionReport, PlanRecord
from lanefree.mpc.planner import Planner, extrapolate_obstacle
from lanefree.solver.classes import BoundConfig, OcpSpec, SolverReport
from lanefree.solver.fda import check_feasible, solve, state_boxes

logger = logging.getLogger(__name__)

EGO_ID = -1


@dataclass(eq=False)
class Instance:
    x0: VehicleState
    ego_length: float
    ego_width: float
    obstacles: list[ObstaclePrediction]
    road_width: float
    vd1: float
    u1_prev: float
    config: Config


@dataclass(eq=False)
class InstanceResult:
    spec: OcpSpec
    plan: Plan
    report: SolverReport
    reports: list[CollisionReport]
    emergency: CollisionKind | None
    emergency_report: SolverReport | None
    feasible: bool


def _vector(value, where: str, length: int = 4) -> list[float]:
    if not isinstance(value, list) or len(value) != length:
        raise InstanceFileInvalid(f"{where} must be a list of {length} numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as e:
        raise InstanceFileInvalid(f"{where} must be a list of {length} numbers") from e


def _number(data: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in data:
        if default is None:
            raise InstanceFileInvalid(f"{where}: missing key '{key}'")
        return default
    try:
        return float(data[key])
    except (TypeError, ValueError) as e:
        raise InstanceFileInvalid(f"{where}.{key} must be a number") from e


def parse_instance(raw: dict, base: Config | None = None, source: str = "instance") -> Instance:
    if not isinstance(raw, dict):
        raise InstanceFileInvalid(f"{source}: top level must be an object")
    sections = raw.get("config", {})
    if not isinstance(sections, dict):
        raise InstanceFileInvalid(f"{source}: config must be an object")
    config = Config.from_sections(sections, base=base, source=source)

    ego = raw.get("ego")
    if not isinstance(ego, dict):
        raise InstanceFileInvalid(f"{source}: missing object 'ego'")
    x0 = VehicleState(*_vector(ego.get("state"), f"{source}: ego.state"))

    obstacles = []
    for i, obs in enumerate(raw.get("obstacles", [])):
        where = f"{source}: obstacles[{i}]"
        if not isinstance(obs, dict):
            raise InstanceFileInvalid(f"{where} must be an object")
        if "traj" in obs:
            if not isinstance(obs["traj"], list) or not obs["traj"]:
                raise InstanceFileInvalid(f"{where}.traj must be a non-empty list")
            partial = np.array(
                [_vector(row, f"{where}.traj[{k}]") for k, row in enumerate(obs["traj"])]
            )
        else:
            partial = np.array([_vector(obs.get("state"), f"{where}.state")])
        obstacles.append(
            ObstaclePrediction(
                id=int(obs.get("id", i)),
                length=_number(obs, "length", where),
                width=_number(obs, "width", where),
                traj=extrapolate_obstacle(partial, config.horizon, config.dt),
            )
        )

    return Instance(
        x0=x0,
        ego_length=_number(ego, "length", f"{source}: ego"),
        ego_width=_number(ego, "width", f"{source}: ego"),
        obstacles=obstacles,
        road_width=_number(raw, "road_width", source, config.road_width),
        vd1=_number(raw, "vd1", source),
        u1_prev=_number(raw, "u1_prev", source, 0.0),
        config=config,
    )


def read_instance(path: pathlib.Path, base: Config | None = None) -> Instance:
    path = pathlib.Path(path)
    try:
        with open(path) as file:
            raw = json.load(file)
    except json.JSONDecodeError as e:
        raise InstanceFileInvalid(
            f"{path.name}: line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    return parse_instance(raw, base=base, source=path.name)


def solve_instance(instance: Instance) -> InstanceResult:
    """Solves the instance, with the emergency reformulation if the plan is flagged"""
    config = instance.config
    planner = Planner(config)
    corridor = LateralCorridor.for_road(instance.road_width, instance.ego_width)
    if not corridor.contains(instance.x0.x2):
        raise InstanceFileInvalid(
            f"Ego x2={instance.x0.x2} lies outside its corridor "
            f"[{corridor.x2_right}, {corridor.x2_left}]"
        )
    spec = OcpSpec(
        horizon=config.horizon,
        dt=config.dt,
        x0=instance.x0,
        targets=SpeedTargets(instance.vd1),
        weights=planner.weights,
        ellipsoid=planner.ellipsoid,
        beta=config.beta,
        u1_prev=instance.u1_prev,
        obstacles=instance.obstacles,
        bounds=BoundConfig(
            u_min1=config.u_min1,
            u_max1=config.u_max1,
            corridor=corridor,
            gains=planner.gains,
        ),
        ego_length=instance.ego_length,
        ego_width=instance.ego_width,
    )
    plan, report = solve(spec, settings=planner.settings)
    reports = planner.detect(plan.states, spec)
    if not reports:
        return InstanceResult(spec, plan, report, [], None, None, check_feasible(plan, spec))

    first = PlanRecord(
        plan=plan,
        application_horizon=config.horizon // 2,
        snapshot_id=0,
        vd1=instance.vd1,
        report=report,
    )
    record = planner.replan_emergency(EGO_ID, spec, first, reports)
    bounds, _ = planner.emergency_bounds(spec, reports)
    final_spec = replace(spec, bounds=bounds)
    return InstanceResult(
        spec=final_spec,
        plan=record.plan,
        report=report,
        reports=reports,
        emergency=record.emergency,
        emergency_report=record.emergency_report,
        feasible=check_feasible(record.plan, final_spec),
    )


def solve_once(
    instance_path: pathlib.Path,
    output_dir: pathlib.Path,
    config: Config | None = None,
    force: bool = False,
) -> InstanceResult:
    """
    Writes plan.tsv (states, controls and box per step), report.json,
    cost_field.tsv (the obstacle potential around the ego at k = 0) and
    manifest.json
    """
    OUTPUT_DIR = pathlib.Path(output_dir).absolute()
    if OUTPUT_DIR.is_dir() and not force:
        raise UsageError(f"{OUTPUT_DIR} already exists, please use --force to override")
    pathlib.Path.mkdir(OUTPUT_DIR, parents=True, exist_ok=True)
    pathlib.Path.mkdir(OUTPUT_DIR / "work", exist_ok=True)
    setup_rich_logger(str(OUTPUT_DIR / "work/file.log"))

    start = time.perf_counter()
    instance = read_instance(instance_path, base=config)
    try:
        result = solve_instance(instance)
    except EmergencyReplanFailed as e:
        write_json(OUTPUT_DIR / "work" / "forensic_dump.json", e.dump)
        raise

    write_plan(OUTPUT_DIR / "plan.tsv", result.plan, state_boxes(result.plan.states, result.spec))

    x1s = [instance.x0.x1] + [float(o.traj[0, 0]) for o in instance.obstacles]
    grid_x1 = np.arange(min(x1s) - 20.0, max(x1s) + 20.0 + 1e-9, 0.5)
    grid_x2 = np.linspace(0.0, instance.road_width, 103)
    field, boxes = cost_field(
        grid_x1,
        grid_x2,
        instance.x0,
        instance.obstacles,
        result.spec.ellipsoid,
        instance.ego_length,
        instance.ego_width,
    )
    write_cost_field(OUTPUT_DIR / "cost_field.tsv", grid_x1, grid_x2, field)

    write_json(
        OUTPUT_DIR / "report.json",
        {
            "solver": result.report.to_dict(),
            "emergency": None if result.emergency is None else result.emergency.value,
            "emergency_solver": (
                None if result.emergency_report is None else result.emergency_report.to_dict()
            ),
            "collisions": [
                {"kind": r.kind.value, "obstacle_id": r.obstacle_id, "step": r.step}
                for r in result.reports
            ],
            "feasible": result.feasible,
            "ellipsoids": boxes,
        },
    )
    cfg_text = json.dumps(instance.config.to_dict(), sort_keys=True)
    with open(OUTPUT_DIR / "config.json", "w") as outfile:
        outfile.write(cfg_text)

    solve_times = [
        r.wall_time for r in (result.report, result.emergency_report) if r is not None
    ]
    write_manifest(
        OUTPUT_DIR,
        config_md5=text_md5(cfg_text),
        seeds=[],
        files=["config.json", "plan.tsv", "report.json", "cost_field.tsv"],
        solve_times={"solve_ms": [1000.0 * t for t in solve_times]},
        emergency_pct=100.0 if result.emergency is not None else 0.0,
        wall_time=time.perf_counter() - start,
    )
    logger.info(
        f"Solved in {result.report.iterations} iterations "
        f"({result.report.stop_reason.value}), J={result.report.cost:.6g}"
    )
    return result
