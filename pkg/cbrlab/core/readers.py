import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Sequence

import ijson
import pandas as pd
from pyarrow.parquet import ParquetFile

from cbrlab.core.experiments import RunRecord
from cbrlab.core.writers import STEP_METRICS_TAG
from cbrlab.decorators import valid_file_path
from cbrlab.dtypes import ConfigDict, FilePath
from cbrlab.exceptions import InvalidConfig, InvalidFileExtension, InvalidFilePathOrDir
from cbrlab.log import get_logger
from cbrlab.settings import Settings
from cbrlab.utils import companion_path, get_file_suffix, list_files

logger = get_logger(__name__)


@valid_file_path
def read_config(file_path: FilePath) -> ConfigDict:
    """Reads a scenario config document from a JSON file.

    Raises:
        InvalidFileExtension: If the file extension is not `.json`.
        InvalidConfig: If the document is not a JSON object.
    """
    if get_file_suffix(file_path, dot=False) != "json":
        raise InvalidFileExtension(f"config file {file_path} is not a json file")
    with open(file_path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"config file {file_path} is not valid json: {e}") from e
    if data is None:
        logger.warning(f"config file {file_path} is empty, using defaults")
        return {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"config file {file_path} must hold a json object")
    return data


@valid_file_path
def read_record(file_path: FilePath) -> RunRecord:
    with open(file_path) as f:
        doc = json.load(f)
    try:
        return RunRecord.from_dict(doc)
    except (KeyError, TypeError) as e:
        raise InvalidConfig(f"{file_path} is not a run record: missing {e}") from e


@valid_file_path
def read_summary(file_path: FilePath) -> Dict[str, Any]:
    """Read only the leading ``summary`` block of a record file."""
    with open(file_path, "rb") as f:
        for summary in ijson.items(f, "summary", use_float=True):
            return summary
    raise InvalidConfig(f"record {file_path} has no summary")


def is_record(file_path: FilePath) -> bool:
    """Whether a JSON file holds a run record, judged from its summary block."""
    try:
        summary = read_summary(file_path)
    except (InvalidConfig, ijson.JSONError):
        return False
    return isinstance(summary, dict) and "battery_steps" in summary


def _records_in(directory: FilePath) -> List[Path]:
    found = []
    for path in list_files(directory, "json", recursive=True):
        if is_record(path):
            found.append(path)
        else:
            logger.warning(f"skipping {path}: not a run record")
    return found


def record_paths(paths: Sequence[FilePath]) -> List[FilePath]:
    """Expand directories into their record files (recursively, sorted).

    Companion dumps and JSON files that are not run records, such as replay
    outputs or configs, are skipped.
    """
    out = []
    for path in paths:
        try:
            out.extend(_records_in(path) if _is_dir(path) else [path])
        except OSError as e:
            raise InvalidFilePathOrDir(f"cannot read {path}: {e}") from e
    return out


def _is_dir(path: FilePath) -> bool:
    return Path(path).is_dir()


def read_records(paths: Sequence[FilePath]) -> List[RunRecord]:
    records = [read_record(p) for p in record_paths(paths)]
    logger.info(f"{len(records)} records read")
    return records


@valid_file_path
def read_table(file_path: FilePath) -> pd.DataFrame:
    """CSV artifact without its ``#`` header lines."""
    return pd.read_csv(file_path, comment="#")


def _read_parquet(file_path: FilePath, batch_size: int = Settings.CHUNK_SIZE) -> Iterator[pd.DataFrame]:
    parquet_file = ParquetFile(str(file_path))
    for batch in parquet_file.iter_batches(batch_size=batch_size):
        yield batch.to_pandas()


@valid_file_path
def read_reservoir_states(file_path: FilePath, chunk_size: int = Settings.CHUNK_SIZE) -> pd.DataFrame:
    """All dumped reservoir-state rows, read batch by batch."""
    chunks = list(_read_parquet(file_path, chunk_size))
    if not chunks:
        return pd.DataFrame()
    return pd.concat(chunks, ignore_index=True)


def read_step_metrics(record_path: FilePath, chunk_size: int = Settings.CHUNK_SIZE) -> pd.DataFrame:
    """Per-step training metrics stored next to a record file."""
    return read_reservoir_states(companion_path(record_path, STEP_METRICS_TAG, "parquet"), chunk_size=chunk_size)
