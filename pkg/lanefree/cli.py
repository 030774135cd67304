#!/usr/bin/python3
import pathlib
from typing import Annotated, Optional

import typer
from click import UsageError

# Module imports
from lanefree import __version__
from lanefree.core.config import Config
from lanefree.core.errors import (
    CollisionAuditFailure,
    ConfigSchemaError,
    EmergencyReplanFailed,
    InitializationFailed,
)
from lanefree.core.progress_tracker import ProgressManager
from lanefree.mpc.instance import solve_once as solve_instance_file
from lanefree.simulator.simulator_main import run_scenario, sweep as sweep_densities

## Commands
# run         one ring-road simulation
# sweep       fundamental diagram over densities x seeds
# solve-once  a single planning problem from an instance file

# Exit codes: 0 ok, 2 config / instance error, 3 audit or emergency failure
EXIT_AUDIT_FAILURE = 3

# Create the main app
app = typer.Typer(name="lanefree", no_args_is_help=True)


def check_output_dir(output: pathlib.Path, force: bool):
    if output.exists() and not force:
        raise typer.BadParameter(
            f"--output '{output}' directory already exists. Use --force to overwrite"
        )


def typer_callback_version(value: bool):
    if value:
        version = typer.style(__version__, fg=typer.colors.GREEN, bold=True)
        typer.echo("lanefree version: " + version)
        raise typer.Exit()


def load_config(config: pathlib.Path | None, **overrides) -> Config:
    """Config file (or the defaults) with the cli overrides applied"""
    cfg = Config.from_file(config) if config is not None else Config()
    try:
        cfg.assign_kwargs(**overrides)
    except (TypeError, ValueError) as e:
        raise ConfigSchemaError(
            [k for k, v in overrides.items() if v is not None], str(e)
        ) from e
    invalid = cfg.validate()
    if invalid:
        raise ConfigSchemaError(invalid)
    return cfg


ConfigOption = Annotated[
    Optional[pathlib.Path],
    typer.Option(
        help="Sectioned JSON config file. Missing keys keep their defaults",
        exists=True,
        readable=True,
        dir_okay=False,
        resolve_path=True,
    ),
]
OutputOption = Annotated[
    pathlib.Path,
    typer.Option(help="The output directory", resolve_path=True),
]
SeedOption = Annotated[Optional[int], typer.Option(help="Override the random seed")]
WorkersOption = Annotated[
    Optional[int], typer.Option(help="Threads used for planning", min=1)
]
BudgetOption = Annotated[
    Optional[float],
    typer.Option(
        help="Solver wall time budget in seconds (0 disables). Budget-truncated solves depend "
        "on machine load: byte-identical reruns need --solver-time-budget 0",
        min=0.0,
    ),
]
ForceOption = Annotated[bool, typer.Option(help="Override the output directory")]


@app.callback()
def lanefree(
    value: Annotated[bool, typer.Option] = typer.Option(
        False, "--version", callback=typer_callback_version
    ),
):
    pass


@app.command(no_args_is_help=True)
def run(
    output: OutputOption,
    config: ConfigOption = None,
    density: Annotated[
        Optional[float], typer.Option(help="Override the density (veh/km)")
    ] = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    solver_time_budget: BudgetOption = None,
    force: ForceOption = False,
):
    """
    Simulates the ring road and writes trajectories, detectors, histograms and a manifest
    """
    cfg = load_config(
        config,
        density=density,
        seed=seed,
        workers=workers,
        solver_time_budget=solver_time_budget,
    )
    check_output_dir(output, force)

    # Set up the progress manager
    pm = ProgressManager()
    try:
        run_scenario(cfg, output, pm=pm, force=force, config_path=config)
    except InitializationFailed as e:
        raise UsageError(str(e)) from e
    except (CollisionAuditFailure, EmergencyReplanFailed) as e:
        typer.echo(f"{type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=EXIT_AUDIT_FAILURE) from e


@app.command(no_args_is_help=True)
def sweep(
    output: OutputOption,
    density: Annotated[
        Optional[list[float]],
        typer.Option(
            help="Densities (veh/km) to simulate. Use multiple --density flags. (--density 50 --density 100)"
        ),
    ] = None,
    seeds: Annotated[
        int, typer.Option(help="Replications per density, seeds start at --seed", min=1)
    ] = 5,
    config: ConfigOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    solver_time_budget: BudgetOption = None,
    force: ForceOption = False,
):
    """
    Runs every density with several seeds and writes the fundamental diagram
    """
    if not density:
        raise UsageError("At least one --density is required")
    cfg = load_config(
        config, seed=seed, workers=workers, solver_time_budget=solver_time_budget
    )
    check_output_dir(output, force)

    pm = ProgressManager()
    _, replications = sweep_densities(
        cfg,
        list(density),
        list(range(cfg.seed, cfg.seed + seeds)),
        output,
        pm=pm,
        force=force,
        config_path=config,
    )
    failed = [r for r in replications if r["status"] != "ok"]
    if failed:
        typer.echo(
            f"{len(failed)} of {len(replications)} replications failed", err=True
        )
        raise typer.Exit(code=EXIT_AUDIT_FAILURE)


@app.command(no_args_is_help=True)
def solve_once(
    instance: Annotated[
        pathlib.Path,
        typer.Argument(
            help="Instance JSON file (ego, obstacles, road_width, vd1)",
            exists=True,
            readable=True,
            dir_okay=False,
            resolve_path=True,
        ),
    ],
    output: OutputOption,
    config: ConfigOption = None,
    solver_time_budget: BudgetOption = None,
    force: ForceOption = False,
):
    """
    Solves one planning problem and writes the plan, solver report and cost field
    """
    cfg = load_config(config, solver_time_budget=solver_time_budget)
    check_output_dir(output, force)
    try:
        solve_instance_file(instance, output, config=cfg, force=force)
    except EmergencyReplanFailed as e:
        typer.echo(f"{type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=EXIT_AUDIT_FAILURE) from e


if __name__ == "__main__":
    app()
