import dataclasses
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cbrlab.analysis import aggregate_curves, divergence_probe, pca_fit, weight_stats
from cbrlab.core.config import artifact_header, scenario_from_dict
from cbrlab.core.experiments import BatteryResult, RunRecord, replay_final_battery, restore_actor, run_training
from cbrlab.core.readers import read_records, read_reservoir_states, record_paths
from cbrlab.core.sweeps import STD_CONVENTION, SweepTable, get_grid, run_sweep
from cbrlab.core.writers import RESERVOIR_TAG, TRAJECTORY_TAG, write_frame, write_record, write_record_json, write_rows
from cbrlab.dtypes import AxisValues, ConfigDict, FilePath, Row
from cbrlab.exceptions import InvalidConfig, InvalidFilePathOrDir, NumericError
from cbrlab.log import get_logger
from cbrlab.neural import ReadoutParams
from cbrlab.numkit import derive_stream, make_stream
from cbrlab.reservoir import init_reservoir
from cbrlab.settings import Settings
from cbrlab.utils import add_missing_suffix, build_file_name, companion_path

logger = get_logger(__name__)

ANALYSIS_KINDS = ("curves", "weights", "pca", "divergence")
DIVERGENCE_G_VALUES = (0.5, 0.8, 2.2, 5.0)


def train(doc: ConfigDict, seed: int, out_dir: FilePath) -> Tuple[RunRecord, Path]:
    """Run one seed of a resolved config and write its record to
    ``<out_dir>/<scenario>_seed<seed>.json``."""
    record = run_training(scenario_from_dict(doc), seed, config=doc)
    path = Path(out_dir, build_file_name("json", doc["scenario"], f"seed{seed}"))
    write_record(path, record, header=artifact_header(doc))
    return record, path


def sweep(
    doc: ConfigDict,
    grid_name: str,
    seeds: Sequence[int],
    out_dir: FilePath,
    workers: int = Settings.DEFAULT_WORKERS,
    values: Optional[AxisValues] = None,
) -> Tuple[SweepTable, Path]:
    """Run a built-in grid against a resolved config and write ``<out>/<grid>.csv``."""
    table = run_sweep(get_grid(grid_name, values), doc, seeds, out_dir=out_dir, workers=workers)
    path = Path(out_dir, build_file_name("csv", grid_name))
    table.write(path)
    return table, path


def weights_table(records: Sequence[RunRecord]) -> List[Row]:
    """One row per (g, seed, action unit) for readout actors."""
    rows = []
    for record in records:
        actor = restore_actor(record.actor)
        if not isinstance(actor, ReadoutParams):
            logger.warning(f"seed {record.seed}: actor has no readout, skipped")
            continue
        g = record.config["reservoir"]["spectral_radius"]
        rows.extend(weight_stats(actor).rows(g=g, seed=record.seed))
    return rows


def pca_table(records: Sequence[RunRecord], paths: Sequence[FilePath], k: int = 2) -> Tuple[List[Row], Dict[str, Any]]:
    """PCA of every run's dumped test-phase reservoir states.

    Each run is fitted on the union of its states; rows keep the time order
    of every test episode.

    Raises
    ------
    InvalidConfig
        If a record has no reservoir dump.
    NumericError
        If the fitted components are not orthonormal.
    """
    rows, explained = [], {}
    for record, path in zip(records, paths):
        dump = companion_path(path, RESERVOIR_TAG, "parquet")
        if not dump.exists():
            raise InvalidConfig(f"record {path} has no reservoir dump; rerun with --dump-reservoir")
        states = read_reservoir_states(dump)
        columns = [c for c in states.columns if c.startswith("x") and c[1:].isdigit()]
        result = pca_fit(states[columns].to_numpy(), k)
        if not result.is_orthonormal():
            raise NumericError(f"PCA components of {path} are not orthonormal")
        explained[str(record.seed)] = result.explained_ratio.tolist()
        meta = states[["battery", "start", "training_step", "step"]].to_numpy(dtype=np.int64)
        for (battery, start, training_step, step), pcs in zip(meta, result.projected):
            row = {
                "seed": record.seed,
                "episode_tag": f"b{battery}s{start}",
                "training_step": int(training_step),
                "step": int(step),
            }
            row.update({f"pc{i + 1}": float(v) for i, v in enumerate(pcs)})
            rows.append(row)
    return rows, {"explained_variance_ratio": explained}


def divergence_table(records: Sequence[RunRecord], g_values: AxisValues = DIVERGENCE_G_VALUES) -> List[Row]:
    """Divergence rate of each run's reservoir rescaled to every ``g``.

    The recurrent matrix is normalised before scaling, so one draw per seed
    serves all ``g`` values. Inputs are held at 0.5.
    """
    rows = []
    for record in records:
        reservoir_cfg = scenario_from_dict(record.config).reservoir
        root = make_stream(record.seed)
        for g in g_values:
            cfg = dataclasses.replace(reservoir_cfg, spectral_radius=float(g))
            params = init_reservoir(cfg, derive_stream(root, "reservoir"))
            rate = divergence_probe(params, cfg, np.full(cfg.n_inputs, 0.5), rng=derive_stream(root, "divergence"))
            rows.append({"seed": record.seed, "g": float(g), "rate": rate})
    return rows


def analyze(
    inputs: Sequence[FilePath],
    kind: str,
    out: FilePath,
    k: int = 2,
    g_values: AxisValues = DIVERGENCE_G_VALUES,
) -> Path:
    """Build one analysis table from record files or directories and write it.

    Raises
    ------
    InvalidConfig
        For an unknown analysis kind.
    InvalidFilePathOrDir
        If no records are found.
    """
    if kind not in ANALYSIS_KINDS:
        raise InvalidConfig(f"unknown analysis kind {kind!r}, known: {', '.join(ANALYSIS_KINDS)}")
    paths = record_paths(inputs)
    records = read_records(paths)
    if not records:
        raise InvalidFilePathOrDir(f"no run records found in {', '.join(str(i) for i in inputs)}")
    header = {**artifact_header(records[0].config), "kind": kind}
    if kind == "curves":
        header["std"] = STD_CONVENTION
        write_frame(out, aggregate_curves(records), header=header)
    elif kind == "weights":
        write_rows(out, weights_table(records), header=header)
    elif kind == "pca":
        rows, extra = pca_table(records, paths, k)
        write_rows(out, rows, header={**header, **extra})
    else:
        write_rows(out, divergence_table(records, g_values), header=header)
    return Path(out)


def replay(record_path: FilePath, out: FilePath, dump_trajectories: bool = False) -> BatteryResult:
    """Re-run the final battery of a record from its actor snapshot.

    The reservoir is regenerated from the record's seed and config. The
    output file notes whether the replay matched the stored battery.
    """
    out = add_missing_suffix(out, "json")
    record = read_records([record_path])[0]
    scenario = scenario_from_dict(record.config)
    result = replay_final_battery(record, scenario, dump_trajectories=dump_trajectories)
    matches = result.steps == record.final_battery.steps
    if not matches:
        logger.warning(f"replay of {record_path} differs from the stored final battery")
    header = artifact_header(record.config)
    write_record_json(
        out,
        {
            "summary": {"mean_steps": result.mean_steps, "reached": result.n_reached, "matches_record": matches},
            "seed": record.seed,
            "battery": result.to_dict(),
            **header,
        },
    )
    if dump_trajectories:
        write_rows(companion_path(out, TRAJECTORY_TAG, "csv"), result.trajectories, header=header)
    return result
