"""
Tab separated output tables and JSON run files.

Floats are written with repr() so reruns of a deterministic run produce
byte-identical files. Every table has a single header row.
"""

import hashlib
import json
import pathlib
import platform
from collections.abc import Iterable, Sequence

import numpy as np

from lanefree import __version__
from lanefree.core.classes import Plan
from lanefree.simulator.classes import (
    DetectorRecord,
    FundamentalDiagramRow,
    TrajectoryLog,
)

# Columns holding integer ids / flags
INT_COLUMNS = frozenset({"vehicle_id", "plan_id", "emergency", "count", "k", "n_plans"})


def format_value(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, str):
        return value
    if isinstance(value, bool | np.bool_):
        return str(int(value))
    if isinstance(value, int | np.integer):
        return str(int(value))
    return repr(float(value))


def table_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append(
            "\t".join(
                format_value(int(v) if c in INT_COLUMNS and v is not None else v)
                for c, v in zip(columns, row, strict=True)
            )
        )
    return "\n".join(lines) + "\n"


def write_table(path: pathlib.Path, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Writes the table and returns its text"""
    text = table_text(columns, rows)
    with open(path, "w") as outfile:
        outfile.write(text)
    return text


def read_table(path: pathlib.Path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows of a table written by write_table"""
    with open(path) as infile:
        lines = [line.rstrip("\n") for line in infile if line.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    header = lines[0].split("\t")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise ValueError(
                f"{path}: line {lineno} has {len(fields)} fields, expected {len(header)}"
            )
        rows.append(fields)
    return header, rows


def read_column(path: pathlib.Path, name: str) -> np.ndarray:
    header, rows = read_table(path)
    index = header.index(name)
    return np.array(
        [np.nan if row[index] == "NA" else float(row[index]) for row in rows]
    )


def write_trajectories(path: pathlib.Path, log: TrajectoryLog) -> str:
    return write_table(path, log.columns, log.table().tolist())


def write_detectors(path: pathlib.Path, detectors: list[DetectorRecord]) -> str:
    return write_table(
        path,
        ("position", "count", "window_s", "flow_veh_h"),
        ((d.position, d.count, d.window, d.flow) for d in detectors),
    )


def write_histograms(
    path: pathlib.Path, histograms: dict[str, tuple[np.ndarray, np.ndarray]]
) -> str:
    rows = []
    for quantity, (edges, counts) in histograms.items():
        for left, right, count in zip(edges[:-1], edges[1:], counts, strict=True):
            rows.append((quantity, left, right, int(count)))
    return write_table(path, ("quantity", "bin_left", "bin_right", "count"), rows)


def write_fundamental_diagram(
    path: pathlib.Path, rows: list[FundamentalDiagramRow]
) -> str:
    return write_table(
        path,
        ("density", "mean_flow", "min_flow", "max_flow", "emergency_pct", "n_plans"),
        (
            (r.density, r.mean_flow, r.min_flow, r.max_flow, r.emergency_pct, r.n_plans)
            for r in rows
        ),
    )


def write_replications(path: pathlib.Path, replications: list[dict]) -> str:
    return write_table(
        path,
        ("density", "seed", "status", "mean_flow", "emergency_pct", "n_plans"),
        (
            (
                r["density"],
                int(r["seed"]),
                r["status"],
                r.get("mean_flow"),
                r.get("emergency_pct"),
                r.get("n_plans"),
            )
            for r in replications
        ),
    )


def write_plan(path: pathlib.Path, plan: Plan, boxes: np.ndarray) -> str:
    """plan.tsv: one row per step k, the final state carries no control / box"""
    rows = []
    for k in range(plan.horizon + 1):
        x = plan.states[k]
        if k < plan.horizon:
            u = plan.controls[k]
            lo1, hi1, lo2, hi2 = boxes[k]
            rows.append((k, *x, *u, lo1, hi1, lo2, hi2))
        else:
            rows.append((k, *x, None, None, None, None, None, None))
    return write_table(
        path,
        ("k", "x1", "x2", "x3", "x4", "u1", "u2", "u_min1", "u_max1", "u_min2", "u_max2"),
        rows,
    )


def write_cost_field(
    path: pathlib.Path, grid_x1: np.ndarray, grid_x2: np.ndarray, field: np.ndarray
) -> str:
    rows = (
        (float(x1), float(x2), float(field[j, i]))
        for j, x2 in enumerate(grid_x2)
        for i, x1 in enumerate(grid_x1)
    )
    return write_table(path, ("x1", "x2", "cost"), rows)


def write_json(path: pathlib.Path, data: dict) -> str:
    text = json.dumps(data, sort_keys=True, indent=2)
    with open(path, "w") as outfile:
        outfile.write(text)
    return text


def text_md5(text: str) -> str:
    return hashlib.md5(text.encode()).hexdigest()


def file_md5(path: pathlib.Path) -> str:
    with open(path, "rb") as f:
        return hashlib.file_digest(f, "md5").hexdigest()


def versions() -> dict[str, str]:
    return {
        "lanefree": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def write_manifest(
    output_dir: pathlib.Path,
    config_md5: str,
    seeds: list[int],
    files: list[str],
    solve_times: dict,
    emergency_pct: float,
    wall_time: float,
    extra: dict | None = None,
) -> dict:
    """manifest.json; only lists files that exist in output_dir"""
    manifest = {
        "config_md5": config_md5,
        "seeds": seeds,
        "versions": versions(),
        "files": {
            name: file_md5(output_dir / name)
            for name in files
            if (output_dir / name).is_file()
        },
        "solve_time_ms": solve_times,
        "emergency_pct": emergency_pct,
        "wall_time_s": wall_time,
    }
    if extra:
        manifest.update(extra)
    write_json(output_dir / "manifest.json", manifest)
    return manifest
