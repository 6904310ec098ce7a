"""Grid sweeps over scenario parameters.

Every (cell, seed) pair is an independent run whose record is cached under
``<out>/cells``; reruns skip pairs that already have a record. Results are
ordered by grid cell and seed, never by completion order.
"""
import concurrent.futures
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cbrlab.core.config import artifact_header, scenario_from_dict, with_values
from cbrlab.core.experiments import run_training
from cbrlab.core.readers import read_summary
from cbrlab.core.writers import write_frame, write_record
from cbrlab.dtypes import AxisValues, ConfigDict, FilePath
from cbrlab.exceptions import InvalidConfig, NumericError, ReservoirInitError, UnknownGrid
from cbrlab.log import get_logger
from cbrlab.settings import Settings
from cbrlab.utils import build_file_name

logger = get_logger(__name__)

STD_CONVENTION = "population (ddof=0) over seeds"


@dataclasses.dataclass(frozen=True)
class Grid:
    """Cells over one or more dotted config keys plus fixed overrides every
    cell shares."""

    name: str
    axes: Tuple[str, ...]
    cells: Tuple[Tuple[Any, ...], ...]
    fixed: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.cells:
            raise InvalidConfig(f"grid {self.name} has no cells")
        if any(len(c) != len(self.axes) for c in self.cells):
            raise InvalidConfig(f"grid {self.name}: every cell needs {len(self.axes)} values")

    def overrides(self, cell: Tuple[Any, ...]) -> Dict[str, Any]:
        return {**self.fixed, **dict(zip(self.axes, cell))}

    def with_values(self, values: AxisValues) -> "Grid":
        """Same grid with custom values on its single axis."""
        if len(self.axes) != 1:
            raise InvalidConfig(f"grid {self.name} has {len(self.axes)} axes, custom values need exactly one")
        return dataclasses.replace(self, cells=tuple((v,) for v in values))


GRID_REGISTRY: Dict[str, Callable[[], Grid]] = {}


def register_grid(name: str) -> Callable:
    def register_grid_fn(fn: Callable[[], Grid]) -> Callable[[], Grid]:
        if name in GRID_REGISTRY:
            raise ValueError(f"Cannot register duplicate grid ({name})")
        GRID_REGISTRY[name] = fn
        return fn

    return register_grid_fn


def get_grid(name: str, values: Optional[AxisValues] = None) -> Grid:
    try:
        grid = GRID_REGISTRY[name]()
    except KeyError:
        raise UnknownGrid(f"unknown grid {name!r}, known: {sorted(GRID_REGISTRY)}") from None
    return grid.with_values(values) if values is not None else grid


def _steps(start: float, stop: float, step: float) -> List[float]:
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def _powers(base: float, factor: float, n: int) -> List[float]:
    return [float(f"{base * factor**k:.12g}") for k in range(n + 1)]


@register_grid("g")
def spectral_radius_grid() -> Grid:
    return Grid("g", ("reservoir.spectral_radius",), tuple((g,) for g in _steps(0.0, 12.0, 0.2)))


@register_grid("lr-grid")
def learning_rate_grid() -> Grid:
    rates = _powers(1e-6, 4.0, 10)
    return Grid("lr-grid", ("td3.actor_lr", "td3.critic_lr"), tuple((a, c) for a in rates for c in rates))


@register_grid("gauss-sigma")
def gaussian_sigma_grid() -> Grid:
    return Grid(
        "gauss-sigma",
        ("actor.action_noise_std",),
        tuple((s,) for s in _steps(0.0, 1.0, 0.1)),
        fixed={"actor.kind": "mlp-noisy", "actor.exploration": "gaussian"},
    )


@register_grid("ou")
def ou_grid() -> Grid:
    """Reversion rate at dt=0.01, then time step at theta=0.15, each against
    the volatility."""
    scales = _powers(0.00005, 2.0, 10) + _powers(0.1, 2.0, 10)
    sigmas = _steps(0.0, 1.0, 0.2)
    cells = [(theta, sigma, 0.01) for theta in scales for sigma in sigmas]
    cells += [(0.15, sigma, dt) for dt in scales for sigma in sigmas]
    return Grid(
        "ou",
        ("actor.ou_theta", "actor.ou_sigma", "actor.ou_dt"),
        tuple(cells),
        fixed={"actor.kind": "mlp-noisy", "actor.exploration": "ou"},
    )


@register_grid("random-scale")
def random_scale_grid() -> Grid:
    return Grid(
        "random-scale",
        ("actor.random_scale",),
        tuple((s,) for s in _steps(0.0, 2.0, 0.1)),
        fixed={"actor.kind": "random-layer"},
    )


@register_grid("rsv-size")
def reservoir_size_grid() -> Grid:
    return Grid("rsv-size", ("reservoir.n_units",), tuple((16 * 2**n,) for n in range(11)))


@register_grid("rsv-conn")
def reservoir_connectivity_grid() -> Grid:
    values = [0.02, 0.05] + _steps(0.1, 1.0, 0.1)
    return Grid("rsv-conn", ("reservoir.connectivity",), tuple((p,) for p in values))


def cell_config(template: ConfigDict, grid: Grid, cell: Tuple[Any, ...], seed: int) -> ConfigDict:
    values = grid.overrides(cell)
    values["run.seeds"] = [seed]
    return with_values(template, values)


def config_key(doc: ConfigDict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _failed_summary(seed: int, error: Exception) -> Dict[str, Any]:
    return {
        "seed": seed,
        "success": False,
        "failed": True,
        "failure": str(error),
        "final_mean_steps": None,
        "final_reached": None,
        "battery_steps": [],
        "battery_means": [],
    }


def run_cell_seed(doc: ConfigDict, seed: int, record_path: Optional[str] = None) -> Dict[str, Any]:
    """Run (or load from cache) one seed of one cell and return its summary.

    Failures of a single run are reported in the summary, never raised.
    """
    if record_path is not None and Path(record_path).exists():
        logger.info(f"cache hit: {record_path}")
        return read_summary(record_path)
    try:
        record = run_training(scenario_from_dict(doc), seed, config=doc)
    except (InvalidConfig, NumericError, ReservoirInitError) as e:
        logger.warning(f"seed {seed} failed before training: {e}")
        return _failed_summary(seed, e)
    if record_path is not None:
        write_record(record_path, record, header=artifact_header(doc))
    return record.summary()


@dataclasses.dataclass
class SweepTable:
    """One row per grid cell: axis values, seed count, success probability and
    mean/std of the final battery mean over seeds."""

    grid: str
    axes: Tuple[str, ...]
    rows: pd.DataFrame
    header: Dict[str, Any]

    def write(self, file_path: FilePath) -> int:
        return write_frame(file_path, self.rows, header=self.header)


def aggregate_cell(cell: Tuple[Any, ...], axes: Sequence[str], summaries: List[Dict[str, Any]]) -> Dict[str, Any]:
    successes = sum(bool(s["success"]) for s in summaries)
    means = np.array(
        [s["final_mean_steps"] for s in summaries if s.get("final_mean_steps") is not None], dtype=np.float64
    )
    row = dict(zip(axes, cell))
    row.update(
        {
            "seeds": len(summaries),
            "successes": successes,
            "failures": sum(bool(s["failed"]) for s in summaries),
            "success_prob": successes / len(summaries),
            "mean_steps": float(means.mean()) if means.size else float("nan"),
            "std_steps": float(means.std(ddof=0)) if means.size else float("nan"),
        }
    )
    return row


def run_sweep(
    grid: Grid,
    template: ConfigDict,
    seeds: Sequence[int],
    out_dir: Optional[FilePath] = None,
    workers: int = Settings.DEFAULT_WORKERS,
) -> SweepTable:
    """Run every seed of every cell and aggregate per cell.

    Parameters
    ----------
    grid : Grid
        Cells to run.
    template : dict
        Resolved config document the cells override.
    seeds : Sequence[int]
        Seeds run in every cell.
    out_dir : FilePath, optional
        Directory for per-run record files; enables resuming.
    workers : int
        Process pool size; ``1`` runs inline.
    """
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise InvalidConfig("sweep needs at least one seed")
    jobs = []
    for ci, cell in enumerate(grid.cells):
        for seed in seeds:
            doc = cell_config(template, grid, cell, seed)
            path = None
            if out_dir is not None:
                path = str(Path(out_dir, "cells", build_file_name("json", grid.name, config_key(doc), f"seed{seed}")))
            jobs.append(((ci, seed), doc, seed, path))
    logger.info(f"sweep {grid.name}: {len(grid.cells)} cells x {len(seeds)} seeds, {workers} workers")

    results: Dict[Tuple[int, int], Dict[str, Any]] = {}
    if workers <= 1:
        for key, doc, seed, path in jobs:
            results[key] = run_cell_seed(doc, seed, path)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_cell_seed, doc, seed, path): key for key, doc, seed, path in jobs}
            for future in concurrent.futures.as_completed(futures):
                results[futures[future]] = future.result()

    rows = []
    for ci, cell in enumerate(grid.cells):
        row = aggregate_cell(cell, grid.axes, [results[(ci, seed)] for seed in seeds])
        rows.append(row)
        logger.info(f"cell {ci} {dict(zip(grid.axes, cell))}: success {row['success_prob']:.2f}")
    header = {
        **artifact_header(template),
        "grid": grid.name,
        "fixed": dict(grid.fixed),
        "seeds": seeds,
        "std": STD_CONVENTION,
    }
    return SweepTable(grid.name, grid.axes, pd.DataFrame(rows), header)
