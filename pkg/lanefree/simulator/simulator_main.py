"""
Lane-free ring-road simulation.

The world advances in lockstep steps of T. At each step boundary every
vehicle checks its replanning triggers against one immutable snapshot;
triggered plans are computed (optionally in parallel) and applied in
vehicle-id order, so results do not depend on the number of workers.
"""

import json
import logging
import math
import pathlib
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from click import UsageError

from lanefree.core.config import Config
from lanefree.core.dynamics import step_array
from lanefree.core.errors import (
    CollisionAuditFailure,
    EmergencyReplanFailed,
    InitializationFailed,
)
from lanefree.core.logger import setup_rich_logger
from lanefree.core.outputs import (
    file_md5,
    text_md5,
    write_detectors,
    write_fundamental_diagram,
    write_histograms,
    write_json,
    write_manifest,
    write_replications,
    write_trajectories,
)
from lanefree.core.progress_tracker import ProgressManager
from lanefree.mpc.classes import PlanRecord, WorldSnapshot
from lanefree.mpc.planner import Planner, detect_triggers, wrap_offset
from lanefree.simulator.classes import (
    VEHICLE_CLASSES,
    DetectorRecord,
    FundamentalDiagramRow,
    RunStatistics,
    VehicleSpec,
    World,
)

logger = logging.getLogger(__name__)

ACCEL_EDGES = np.linspace(-5.0, 5.0, 201)
JERK_EDGES = np.linspace(-40.0, 40.0, 321)


def overlapping_pairs(
    states: np.ndarray, lengths: np.ndarray, widths: np.ndarray, road_length: float
) -> list[tuple[int, int]]:
    """Pairs (i < j) whose rectangles overlap with positive area, x1 wrapped"""
    dx = np.abs(wrap_offset(states[:, None, 0] - states[None, :, 0], road_length))
    dy = np.abs(states[:, None, 1] - states[None, :, 1])
    hit = (dx < (lengths[:, None] + lengths[None, :]) / 2) & (
        dy < (widths[:, None] + widths[None, :]) / 2
    )
    i, j = np.nonzero(np.triu(hit, k=1))
    return [(int(a), int(b)) for a, b in zip(i, j, strict=True)]


def collision_audit(world: World) -> int:
    return len(
        overlapping_pairs(world.states, world.lengths, world.widths, world.config.road_length)
    )


def initialize(config: Config, rng: np.random.Generator | None = None) -> World:
    """
    Places n vehicles at the centres of a virtual grid (n_virtual_lanes lanes
    times ceil(n / lanes) sections, first n cells) with uniform jitter. Lane j
    draws its desired speeds from the j-th of n_virtual_lanes equal zones
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_vehicles
    lanes = config.n_virtual_lanes
    sections = max(1, math.ceil(n / lanes))
    cell_length = config.road_length / sections
    lane_width = config.road_width / lanes
    zone_width = (config.v_des_max - config.v_des_min) / lanes
    class_ids = list(VEHICLE_CLASSES)

    vehicles: list[VehicleSpec] = []
    states = np.zeros((n, 4))
    lengths = np.zeros(n)
    widths = np.zeros(n)
    for i in range(n):
        section, lane = divmod(i, lanes)
        class_id = class_ids[int(rng.integers(len(class_ids)))]
        low = config.v_des_min + lane * zone_width
        v_des1 = float(rng.uniform(low, low + zone_width))
        spec = VehicleSpec.of_class(i, class_id, v_des1)
        lengths[i], widths[i] = spec.length, spec.width

        centre_x1 = (section + 0.5) * cell_length
        centre_x2 = (lane + 0.5) * lane_width
        for _ in range(config.max_placement_retries):
            x1 = centre_x1 + rng.uniform(-1, 1) * config.jitter * cell_length
            x2 = centre_x2 + rng.uniform(-1, 1) * config.jitter * lane_width
            x2 = min(max(x2, spec.width / 2), config.road_width - spec.width / 2)
            states[i] = x1 % config.road_length, x2, 0.0, 0.0
            pairs = overlapping_pairs(
                states[: i + 1], lengths[: i + 1], widths[: i + 1], config.road_length
            )
            if not any(j == i for _, j in pairs):
                break
        else:
            raise InitializationFailed(
                f"Could not place vehicle {i} without overlap after "
                f"{config.max_placement_retries} attempts"
            )
        vehicles.append(spec)

    logger.debug(f"Placed {n} vehicles on a {lanes}x{sections} grid")
    return World(config=config, vehicles=vehicles, states=states)


def initialize_scripted(
    config: Config, vehicles: list[VehicleSpec], states: np.ndarray
) -> World:
    """A world from an explicit vehicle list, for scripted scenarios"""
    states = np.array(states, dtype=float).reshape(len(vehicles), 4)
    states[:, 0] %= config.road_length
    world = World(config=config, vehicles=list(vehicles), states=states)
    if collision_audit(world):
        raise InitializationFailed("Scripted vehicles overlap")
    return world


def detector_measure(
    record: DetectorRecord,
    front_before: np.ndarray,
    travelled: np.ndarray,
    t_start: float,
    dt: float,
    road_length: float,
    warmup: float = 0.0,
) -> DetectorRecord:
    """
    Counts front bumpers crossing record.position during one step.
    A crossing is attributed the linearly interpolated time and only counts
    from warmup on
    """
    ahead = (record.position - np.asarray(front_before)) % road_length
    travelled = np.asarray(travelled)
    crossed = (travelled > 0) & (ahead > 0) & (ahead <= travelled)
    if crossed.any():
        t_cross = t_start + dt * ahead[crossed] / travelled[crossed]
        record.count += int(np.count_nonzero(t_cross >= warmup))
    return record


def comfort_histograms(
    controls: np.ndarray, plan_start: np.ndarray, dt: float
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """
    Histograms of u1, u2, jerks (u(k) - u(k-1)) / T and the longitudinal jerk
    at plan boundaries. controls is (steps, n, 2), plan_start (steps, n).
    Values beyond the bin range land in the outermost bins
    """

    def hist(values: np.ndarray, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        clipped = np.clip(values.ravel(), edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        return edges, counts

    jerk = np.diff(controls, axis=0) / dt if controls.shape[0] > 1 else np.zeros((0, 2))
    return {
        "u1": hist(controls[..., 0], ACCEL_EDGES),
        "u2": hist(controls[..., 1], ACCEL_EDGES),
        "jerk1": hist(jerk[..., 0], JERK_EDGES),
        "jerk2": hist(jerk[..., 1], JERK_EDGES),
        "boundary_jerk1": hist(boundary_jerk(controls, plan_start, dt), JERK_EDGES),
    }


def boundary_jerk(controls: np.ndarray, plan_start: np.ndarray, dt: float) -> np.ndarray:
    """Longitudinal jerk values at steps where a new plan took over"""
    if controls.shape[0] < 2:
        return np.zeros(0)
    jerk = np.diff(controls[..., 0], axis=0) / dt
    return jerk[plan_start[1:]]


def solve_time_summary(times: list[float]) -> dict[str, float]:
    """Solve wall times in ms"""
    if not times:
        return {}
    ms = np.asarray(times) * 1000.0
    return {
        "n": int(ms.size),
        "min_ms": float(ms.min()),
        "median_ms": float(np.median(ms)),
        "mean_ms": float(ms.mean()),
        "p99_ms": float(np.percentile(ms, 99)),
        "p99.9_ms": float(np.percentile(ms, 99.9)),
        "p99.99_ms": float(np.percentile(ms, 99.99)),
        "max_ms": float(ms.max()),
    }


def _world_dump(world: World, pairs: list[tuple[int, int]]) -> dict:
    return {
        "time": world.time,
        "step": world.step,
        "pairs": pairs,
        "vehicles": [
            {
                "id": v.id,
                "class": v.class_id,
                "length": v.length,
                "width": v.width,
                "v_des1": v.v_des1,
                "state": world.states[v.id].tolist(),
                "plan_id": getattr(world.records[v.id], "plan_id", None),
            }
            for v in world.vehicles
        ],
    }


def _due_vehicles(world: World, snapshot: WorldSnapshot, planner: Planner) -> list[int]:
    due = []
    for i, record in enumerate(world.records):
        if record is None:
            due.append(i)
            continue
        events = detect_triggers(
            record,
            snapshot,
            planner.zone(i, snapshot),
            world.config.deviation_long,
            world.config.deviation_lat,
        )
        if events:
            logger.debug(
                f"t={snapshot.time:.2f} vehicle {i}: {[e.kind.value for e in events]}"
            )
            due.append(i)
    return due


def run(
    config: Config,
    world: World | None = None,
    progress_manager: ProgressManager | None = None,
    executor: ThreadPoolExecutor | None = None,
) -> RunStatistics:
    """
    Simulates config.duration seconds. Raises CollisionAuditFailure (with a
    forensic dump) on any overlap and EmergencyReplanFailed if a reformulated
    plan is still flagged by a collision detector
    """
    start = time.perf_counter()
    if world is None:
        world = initialize(config)
    if progress_manager is None:
        progress_manager = ProgressManager(disable=True)
    planner = Planner(config)
    dt = config.dt
    n_steps = int(round(config.duration / dt))

    stats = RunStatistics(
        density=config.density,
        seed=config.seed,
        n_vehicles=world.n,
        detectors=[DetectorRecord(p) for p in config.detector_positions],
    )
    controls_history = np.zeros((n_steps, world.n, 2))
    plan_start = np.zeros((n_steps, world.n), dtype=bool)

    own_executor = executor is None and config.workers > 1
    if own_executor:
        executor = ThreadPoolExecutor(max_workers=config.workers)

    try:
        tracker = progress_manager.create_sub_progress(
            iter=range(n_steps),
            scenario=f"density={config.density:g} seed={config.seed}",
            process="Simulating",
            leave=False,
        )
        for n in tracker:
            snapshot = world.snapshot()
            due = _due_vehicles(world, snapshot, planner)

            def plan_for(i: int, snapshot=snapshot) -> PlanRecord:
                return planner.plan(
                    i,
                    snapshot,
                    world.records[i],
                    float(world.last_controls[i, 0]),
                    now_step=world.step,
                )

            if executor is not None and len(due) > 1:
                results = list(executor.map(plan_for, due))
            else:
                results = [plan_for(i) for i in due]

            for i, record in zip(due, results, strict=True):
                world.plan_counter += 1
                record.plan_id = world.plan_counter
                world.records[i] = record
                stats.n_plans += 1
                stats.n_emergency += record.emergency is not None
                stats.solve_times.extend(record.solve_times())
                plan_start[n, i] = True

            u = np.empty((world.n, 2))
            for i, record in enumerate(world.records):
                u[i] = record.plan.controls[record.applied_through]  # type: ignore
                record.applied_through += 1  # type: ignore
            controls_history[n] = u

            if config.write_trajectories:
                stats.log.append(_log_block(world, u))

            new_states = step_array(world.states, u, dt)
            travelled = new_states[:, 0] - world.states[:, 0]
            front_before = (world.states[:, 0] + world.lengths / 2) % config.road_length
            for detector in stats.detectors:
                detector_measure(
                    detector, front_before, travelled, world.time, dt, config.road_length, config.warmup
                )
            new_states[:, 0] %= config.road_length
            world.states = new_states
            world.last_controls = u
            world.step += 1

            pairs = overlapping_pairs(world.states, world.lengths, world.widths, config.road_length)
            if pairs:
                stats.collision_audit_count += len(pairs)
                logger.critical(f"Collision at t={world.time:.2f}: {pairs}")
                raise CollisionAuditFailure(
                    f"{len(pairs)} overlapping vehicle pairs at t={world.time:.2f}",
                    dump=_world_dump(world, pairs),
                )
            tracker.manual_update(count=stats.n_plans)
    except EmergencyReplanFailed as e:
        e.dump.setdefault("world", _world_dump(world, []))
        raise
    finally:
        if own_executor and executor is not None:
            executor.shutdown()

    for detector in stats.detectors:
        detector.window = config.duration - config.warmup
    stats.histograms = comfort_histograms(controls_history, plan_start, dt)
    stats.controls_history = controls_history
    stats.plan_start = plan_start
    stats.wall_time = time.perf_counter() - start
    logger.info(
        f"density={config.density:g} seed={config.seed}: mean flow "
        f"{stats.mean_flow:.0f} veh/h, {stats.n_plans} plans, "
        f"{stats.n_emergency} emergencies"
    )
    return stats


def _log_block(world: World, u: np.ndarray) -> np.ndarray:
    block = np.empty((world.n, 12))
    block[:, 0] = world.time
    block[:, 1] = np.arange(world.n)
    block[:, 2:6] = world.states
    block[:, 6:8] = u
    for i, record in enumerate(world.records):
        block[i, 8] = record.plan_id  # type: ignore
        block[i, 9] = record.emergency is not None  # type: ignore
        block[i, 11] = record.vd1  # type: ignore
    block[:, 10] = world.v_des
    return block


def fundamental_diagram(
    config: Config,
    densities: list[float],
    seeds: list[int],
    progress_manager: ProgressManager | None = None,
) -> tuple[list[FundamentalDiagramRow], list[dict]]:
    """
    One run per (density, seed). Failed replications are recorded and skipped.
    Returns the table rows and one dict per replication
    """
    if not densities:
        raise ValueError("At least one density is required")
    rows = []
    replications = []
    for density in densities:
        flows = []
        n_plans = 0
        n_emergency = 0
        for seed in seeds:
            run_config = Config(**{**config.items(), "density": density, "seed": seed})
            try:
                stats = run(run_config, progress_manager=progress_manager)
            except (CollisionAuditFailure, EmergencyReplanFailed, InitializationFailed) as e:
                logger.error(f"density={density:g} seed={seed} failed: {e}")
                replications.append(
                    {
                        "density": density,
                        "seed": seed,
                        "status": type(e).__name__,
                        "mean_flow": None,
                        "dump": getattr(e, "dump", None),
                    }
                )
                continue
            flows.append(stats.mean_flow)
            n_plans += stats.n_plans
            n_emergency += stats.n_emergency
            replications.append(
                {
                    "density": density,
                    "seed": seed,
                    "status": "ok",
                    "mean_flow": stats.mean_flow,
                    "emergency_pct": stats.emergency_pct,
                    "n_plans": stats.n_plans,
                    "solve_times": stats.solve_times,
                }
            )
        if not flows:
            continue
        rows.append(
            FundamentalDiagramRow(
                density=density,
                mean_flow=float(np.mean(flows)),
                min_flow=float(np.min(flows)),
                max_flow=float(np.max(flows)),
                emergency_pct=100.0 * n_emergency / n_plans if n_plans else 0.0,
                n_plans=n_plans,
            )
        )
    return rows, replications


def _setup_output_dir(output_dir: pathlib.Path, force: bool) -> pathlib.Path:
    OUTPUT_DIR = pathlib.Path(output_dir).absolute()
    if OUTPUT_DIR.is_dir() and not force:
        raise UsageError(f"{OUTPUT_DIR} already exists, please use --force to override")
    pathlib.Path.mkdir(OUTPUT_DIR, parents=True, exist_ok=True)
    pathlib.Path.mkdir(OUTPUT_DIR / "work", exist_ok=True)
    setup_rich_logger(str(OUTPUT_DIR / "work/file.log"))
    return OUTPUT_DIR


def _write_config(OUTPUT_DIR: pathlib.Path, config: Config) -> str:
    cfg_text = json.dumps(config.to_dict(), sort_keys=True)
    with open(OUTPUT_DIR / "config.json", "w") as outfile:
        outfile.write(cfg_text)
    return text_md5(cfg_text)


def run_scenario(
    config: Config,
    output_dir: pathlib.Path,
    pm: ProgressManager | None = None,
    force: bool = False,
    config_path: pathlib.Path | None = None,
) -> RunStatistics:
    """
    One simulation written to output_dir: trajectories.tsv, detectors.tsv,
    histograms.tsv, config.json and manifest.json. On an audit or emergency
    failure work/forensic_dump.json is written and the error re-raised
    """
    OUTPUT_DIR = _setup_output_dir(output_dir, force)
    config_md5 = _write_config(OUTPUT_DIR, config)
    if pm is None:
        pm = ProgressManager()

    logger.info(
        f"Simulating {config.n_vehicles} vehicles, density {config.density:g} veh/km, "
        f"seed {config.seed}, {config.duration:g} s"
    )
    try:
        stats = run(config, progress_manager=pm)
    except (CollisionAuditFailure, EmergencyReplanFailed) as e:
        write_json(OUTPUT_DIR / "work" / "forensic_dump.json", e.dump)
        logger.critical(
            f"[red]Aborted[/red]: {e}. Dump written to "
            f"{OUTPUT_DIR.relative_to(OUTPUT_DIR.parent)}/work/forensic_dump.json"
        )
        raise

    logger.info("Writing output files")
    files = ["config.json", "detectors.tsv", "histograms.tsv"]
    if config.write_trajectories:
        write_trajectories(OUTPUT_DIR / "trajectories.tsv", stats.log)
        files.append("trajectories.tsv")
    write_detectors(OUTPUT_DIR / "detectors.tsv", stats.detectors)
    write_histograms(OUTPUT_DIR / "histograms.tsv", stats.histograms)

    extra = {"mean_flow_veh_h": stats.mean_flow, "n_plans": stats.n_plans}
    if config_path is not None:
        extra["config_file_md5"] = file_md5(config_path)
    write_manifest(
        OUTPUT_DIR,
        config_md5=config_md5,
        seeds=[config.seed],
        files=files,
        solve_times=solve_time_summary(stats.solve_times),
        emergency_pct=stats.emergency_pct,
        wall_time=stats.wall_time,
        extra=extra,
    )
    logger.info(
        f"[green]Written[/green]: {OUTPUT_DIR.relative_to(OUTPUT_DIR.parent)}"
    )
    return stats


def sweep(
    config: Config,
    densities: list[float],
    seeds: list[int],
    output_dir: pathlib.Path,
    pm: ProgressManager | None = None,
    force: bool = False,
    config_path: pathlib.Path | None = None,
) -> tuple[list[FundamentalDiagramRow], list[dict]]:
    """
    Fundamental diagram over densities x seeds, written as
    fundamental_diagram.tsv and replications.tsv. Dumps of failed
    replications go to work/
    """
    if not densities:
        raise UsageError("At least one --density is required")
    OUTPUT_DIR = _setup_output_dir(output_dir, force)
    config_md5 = _write_config(OUTPUT_DIR, config)
    if pm is None:
        pm = ProgressManager()

    start = time.perf_counter()
    rows, replications = fundamental_diagram(config, densities, seeds, pm)

    for r in replications:
        if r["status"] != "ok" and r.get("dump"):
            write_json(
                OUTPUT_DIR / "work" / f"forensic_dump_{r['density']:g}_{r['seed']}.json",
                r["dump"],
            )
    write_fundamental_diagram(OUTPUT_DIR / "fundamental_diagram.tsv", rows)
    write_replications(OUTPUT_DIR / "replications.tsv", replications)

    solve_times = [t for r in replications for t in r.get("solve_times", [])]
    n_plans = sum(r.get("n_plans") or 0 for r in replications)
    n_emergency = sum(row.emergency_pct * row.n_plans / 100.0 for row in rows)
    extra: dict = {
        "densities": list(densities),
        "failed": [(r["density"], r["seed"]) for r in replications if r["status"] != "ok"],
    }
    if config_path is not None:
        extra["config_file_md5"] = file_md5(config_path)
    write_manifest(
        OUTPUT_DIR,
        config_md5=config_md5,
        seeds=list(seeds),
        files=["config.json", "fundamental_diagram.tsv", "replications.tsv"],
        solve_times=solve_time_summary(solve_times),
        emergency_pct=100.0 * n_emergency / n_plans if n_plans else 0.0,
        wall_time=time.perf_counter() - start,
        extra=extra,
    )
    return rows, replications
