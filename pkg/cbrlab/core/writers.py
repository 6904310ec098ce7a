import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional

import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from cbrlab.chunky import ChunkedRows
from cbrlab.decorators import mkdir_decorator
from cbrlab.dtypes import FilePath, Row
from cbrlab.log import get_logger
from cbrlab.settings import Settings
from cbrlab.utils import companion_path

logger = get_logger(__name__)

TRAJECTORY_TAG = "trajectories"
RESERVOIR_TAG = "reservoir"
STEP_METRICS_TAG = "metrics"


def _header_lines(header: Optional[Dict[str, Any]]) -> str:
    if not header:
        return ""
    return "".join(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n" for key in sorted(header))


def _remove(file_path: FilePath) -> None:
    path = Path(file_path)
    if path.exists():
        path.unlink()


@mkdir_decorator
def to_csv(
    file_path: FilePath,
    stream: ChunkedRows,
    header: Optional[Dict[str, Any]] = None,
    sep: str = ",",
    **kwargs: Any,
) -> int:
    """Writes a ChunkedRows stream to a CSV file.

    Every chunk is appended through ``pandas.DataFrame.to_csv``; only the
    first chunk writes the column header. ``header`` entries are written
    first as ``# key: <json>`` comment lines.

    Returns:
        Number of data rows written.
    """
    _remove(file_path)
    with open(file_path, "w", newline="") as f:
        f.write(_header_lines(header))
    rows = 0
    for chunk_idx, df in enumerate(stream.iter_as_df()):
        logger.debug(f"writing idx: {chunk_idx} with {len(df)} rows")
        df.to_csv(path_or_buf=file_path, sep=sep, mode="a", header=chunk_idx == 0, index=False, **kwargs)
        rows += len(df)
    logger.info(f"{rows} rows written to {file_path}")
    return rows


@mkdir_decorator
def to_parquet(file_path: FilePath, stream: ChunkedRows, header: Optional[Dict[str, Any]] = None, **kwargs: Any) -> int:
    """Writes a ChunkedRows stream to a Parquet file, one row group per chunk.

    ``header`` is stored as JSON in the schema metadata.
    """
    _remove(file_path)
    writer = None
    rows = 0
    metadata = {k.encode(): json.dumps(v, sort_keys=True).encode() for k, v in (header or {}).items()}
    try:
        for chunk_idx, df in enumerate(stream.iter_as_df()):
            table = pa.Table.from_pandas(df, preserve_index=False)
            if writer is None:
                schema = table.schema.with_metadata({**(table.schema.metadata or {}), **metadata})
                writer = pq.ParquetWriter(str(file_path), schema, **kwargs)
            logger.debug(f"writing idx: {chunk_idx} with {len(df)} rows")
            writer.write_table(table.cast(writer.schema))
            rows += len(df)
    finally:
        if writer is not None:
            writer.close()
    logger.info(f"{rows} rows written to {file_path}")
    return rows


@mkdir_decorator
def to_json(file_path: FilePath, stream: ChunkedRows, header: Optional[Dict[str, Any]] = None, **kwargs: Any) -> int:
    """Writes rows as ``{"header": ..., "rows": [...]}`` with sorted keys."""
    rows = [row for chunk in stream for row in chunk]
    with open(file_path, "w") as f:
        json.dump({"header": header or {}, "rows": rows}, f, sort_keys=True)
    logger.info(f"{len(rows)} rows written to {file_path}")
    return len(rows)


def get_exporter(file_suffix: str) -> Callable:
    """Gets a writer function for a given file suffix.

    Args:
        file_suffix: The file suffix, with or without the dot.

    Returns:
        Callable: The writer function.
    """
    file_suffix = file_suffix.lstrip(".")
    try:
        writer = exporters[file_suffix]
    except KeyError:
        logger.warning(
            f"couldn't find proper writer falling to default: {Settings.DEFAULT_EXPORT_FORMAT}"
        )
        writer = exporters[Settings.DEFAULT_EXPORT_FORMAT]
    return writer


def write_rows(
    file_path: FilePath,
    rows: Iterable[Row],
    header: Optional[Dict[str, Any]] = None,
    chunk_size: int = Settings.CHUNK_SIZE,
) -> int:
    """Write rows with the exporter matching the file suffix."""
    writer = get_exporter(Path(file_path).suffix)
    return writer(file_path, ChunkedRows(rows, chunk_size), header=header)


def write_frame(file_path: FilePath, df: pd.DataFrame, header: Optional[Dict[str, Any]] = None) -> int:
    return write_rows(file_path, df.to_dict(orient="records"), header=header)


@mkdir_decorator
def write_record_json(file_path: FilePath, doc: Dict[str, Any]) -> None:
    """Record JSON with sorted keys and the ``summary`` block first, so it
    can be read without parsing the parameter snapshots."""
    rest = {k: v for k, v in doc.items() if k != "summary"}
    body = json.dumps(rest, sort_keys=True)
    with open(file_path, "w") as f:
        f.write('{"summary": ')
        f.write(json.dumps(doc.get("summary", {}), sort_keys=True))
        f.write(", " + body[1:] if len(rest) else "}")


def write_record(file_path: FilePath, record, header: Optional[Dict[str, Any]] = None) -> Path:
    """Write a RunRecord and its companion dumps.

    Per-step training metrics go to ``<stem>.metrics.parquet``, trajectory
    rows to ``<stem>.trajectories.csv`` and reservoir states to
    ``<stem>.reservoir.parquet``, each only when the record holds any.
    """
    write_record_json(file_path, record.to_dict())
    logger.info(f"record of seed {record.seed} written to {file_path}")
    if record.step_metrics.get("step"):
        metrics_path = companion_path(file_path, STEP_METRICS_TAG, "parquet")
        to_parquet(metrics_path, ChunkedRows(record.step_rows()), header=header)
    trajectories = record.trajectory_rows()
    if trajectories:
        to_csv(companion_path(file_path, TRAJECTORY_TAG, "csv"), ChunkedRows(trajectories), header=header)
    states = record.reservoir_rows()
    if states:
        to_parquet(companion_path(file_path, RESERVOIR_TAG, "parquet"), ChunkedRows(states), header=header)
    return Path(file_path)


exporters = {
    "csv": to_csv,
    "json": to_json,
    "parquet": to_parquet,
}
