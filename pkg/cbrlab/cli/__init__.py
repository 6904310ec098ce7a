import functools
import json
from typing import Any, Dict, List, Optional

import click

from cbrlab.core import api
from cbrlab.core.config import known_scenarios, resolve_config
from cbrlab.core.readers import read_config
from cbrlab.core.sweeps import GRID_REGISTRY
from cbrlab.exceptions import (
    InvalidConfig,
    InvalidFileExtension,
    InvalidFilePathOrDir,
    NumericError,
    ScheduleMismatch,
    UnknownGrid,
)
from cbrlab.settings import Settings


def _usage_errors(func):
    """Config and input problems exit with 2, numeric run failures with 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (InvalidConfig, ScheduleMismatch, InvalidFileExtension, InvalidFilePathOrDir, FileNotFoundError) as e:
            raise click.UsageError(str(e)) from e
        except UnknownGrid as e:
            raise click.UsageError(e.args[0]) from e
        except NumericError as e:
            raise click.ClickException(f"run failed: {e}") from e

    return wrapper


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidConfig(f"expected comma separated numbers, got {text!r}") from e


def _load(config: Optional[str], scenario: Optional[str], overrides: Dict[str, Any]) -> Dict[str, Any]:
    file_doc = read_config(config) if config else {}
    if scenario:
        overrides = {**overrides, "scenario": scenario}
    return resolve_config(file_doc, overrides=overrides)


@click.group()
def cli():
    """

    cbrlab - chaos-based reinforcement learning laboratory.

    """


@cli.command("train")
@click.option("-c", "--config", help="JSON config file", required=False, type=str)
@click.option("-s", "--scenario", help=f"preset: {', '.join(known_scenarios())}", required=False, type=str)
@click.option("--seed", help="root seed of the run", required=False, type=int, default=0)
@click.option("-o", "--out", help="output directory", required=True, type=str)
@click.option("--steps", help="total training steps", required=False, type=int)
@click.option("--dump-trajectories", help="dump test trajectories", is_flag=True, default=False)
@click.option("--dump-reservoir", help="dump test reservoir states", is_flag=True, default=False)
@_usage_errors
def train(config, scenario, seed, out, steps, dump_trajectories, dump_reservoir):
    """train one seed and write its run record"""
    run: Dict[str, Any] = {"seeds": [seed]}
    if steps is not None:
        run["total_steps"] = steps
    if dump_trajectories:
        run["dump_trajectories"] = True
    if dump_reservoir:
        run["dump_reservoir"] = True
    record, path = api.train(_load(config, scenario, {"run": run}), seed, out)
    click.echo(json.dumps({"record": str(path), **record.summary()}, sort_keys=True))
    if record.failed:
        raise NumericError(record.failure)


@cli.command("sweep")
@click.option("-c", "--config", help="JSON config file", required=False, type=str)
@click.option("-s", "--scenario", help="preset the grid runs against", required=False, type=str)
@click.option("-g", "--grid", help=f"grid: {', '.join(sorted(GRID_REGISTRY))}", required=True, type=str)
@click.option("--seeds", help="comma separated seeds (default: config run.seeds)", required=False, type=str)
@click.option("--values", help="custom values for a single-axis grid", required=False, type=str)
@click.option("--steps", help="total training steps", required=False, type=int)
@click.option("-o", "--out", help="output directory", required=True, type=str)
@click.option("-w", "--workers", help="worker processes", required=False, type=int, default=Settings.DEFAULT_WORKERS)
@_usage_errors
def sweep(config, scenario, grid, seeds, values, steps, out, workers):
    """run a parameter grid over seeds and write the sweep table"""
    doc = _load(config, scenario, {"run": {"total_steps": steps}} if steps is not None else {})
    seed_list = [int(s) for s in _floats(seeds)] if seeds else list(doc["run"]["seeds"])
    _, path = api.sweep(doc, grid, seed_list, out, workers=workers, values=_floats(values))
    click.echo(str(path))


@cli.command("analyze")
@click.argument("records", nargs=-1, required=True, type=str)
@click.option("-k", "--kind", help="analysis table to build", required=True, type=click.Choice(api.ANALYSIS_KINDS))
@click.option("-o", "--out", help="output file (csv, json or parquet)", required=True, type=str)
@click.option("--components", help="principal components kept", required=False, type=int, default=2)
@click.option("--g-values", help="comma separated g values for divergence", required=False, type=str, default="0.5,0.8,2.2,5")
@_usage_errors
def analyze(records, kind, out, components, g_values):
    """analyze run records (files or directories)"""
    click.echo(str(api.analyze(records, kind, out, k=components, g_values=_floats(g_values))))


@cli.command("replay")
@click.argument("record", type=str)
@click.option("-o", "--out", help="output battery file (json)", required=True, type=str)
@click.option("--dump-trajectories", help="dump replayed trajectories", is_flag=True, default=False)
@_usage_errors
def replay(record, out, dump_trajectories):
    """re-run the final test battery of a run record"""
    result = api.replay(record, out, dump_trajectories=dump_trajectories)
    click.echo(json.dumps(result.to_dict(), sort_keys=True))
