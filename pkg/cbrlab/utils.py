import os
from pathlib import Path
from typing import Any, List, Optional, Union

from cbrlab.dtypes import ConfigDict, FilePath


def set_dotted(config: ConfigDict, dotted_key: str, value: Any, sep: str = ".") -> ConfigDict:
    """Write ``value`` under a dotted path such as ``reservoir.n_units``,
    creating intermediate dictionaries.
    """
    keys = dotted_key.split(sep)
    current = config
    for key in keys[:-1]:
        current = current.setdefault(key, {})
    current[keys[-1]] = value
    return config


def deep_merge(base: ConfigDict, update: ConfigDict) -> ConfigDict:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_file_path(file_path: FilePath) -> Path:
    """Validate the file path if it exists.

    Parameters
    ----------
    file_path: The file path.

    Returns
    -------
    Path: The validated file path.

    Raises
    ------
    TypeError: If the file path is not a string or PathLike object.
    FileNotFoundError: If the file does not exist.

    """
    if not isinstance(file_path, (str, os.PathLike)):
        raise TypeError("path must be a string or PathLike object")
    file_path = Path(file_path)
    if file_path.exists() is False:
        raise FileNotFoundError(f"file {file_path} not exists")
    return file_path


def mkdir_if_not_exists(file_path: FilePath) -> None:
    """Create the parent directory of a file path if it does not exist.

    Parameters
    ----------
    file_path: The file path.

    """
    directory = Path(file_path).parent
    if directory.exists() is False:
        directory.mkdir(parents=True, exist_ok=True)


def get_file_suffix(path: FilePath, dot: bool = True) -> str:
    """
    Get the file suffix.

    Parameters
    ----------
    path: str
        The path to the file.
    dot: bool
        Whether to include the dot in the suffix.

    Returns
    -------
    str
        The file suffix.

    Raises
    ------
    TypeError
        If the path is not a string.
    """
    if not isinstance(path, (os.PathLike, str)):
        raise TypeError("path must be a string or os.PathLike")
    return Path(path).suffix if dot else Path(path).suffix[1:]


def add_missing_suffix(file_path: str, file_extension: str) -> str:
    """
    Add file extension to file path.

    Parameters
    ----------
    file_path: str
        The path to the file.
    file_extension: str
        The file extension to add.

    Returns
    -------
    str
        The file path with the extension added.
    """
    file_path = str(file_path)
    extension = file_extension if file_extension.startswith(".") else f".{file_extension}"
    if file_path.endswith(extension):
        return file_path
    return f"{file_path}{extension}"


def companion_path(file_path: FilePath, tag: str, suffix: str) -> Path:
    """Path of a file stored next to ``file_path``, e.g.
    ``run.json`` -> ``run.trajectories.csv``.
    """
    p = Path(file_path)
    suffix = suffix if suffix.startswith(".") else f".{suffix}"
    return Path(p.parent, f"{p.stem}.{tag}{suffix}")


def list_files(
    dir_path: FilePath,
    ext: str,
    recursive: bool = False,
    pattern: Optional[str] = None,
) -> List[Path]:
    """
    Get all paths matching the specified pattern in the specified directory.

    Parameters
    ----------
    dir_path: str
        The directory path.
    ext: str
        The file extension to filter by.
    recursive: bool
        Whether to search recursively.
    pattern: Optional[str]
        The glob pattern to match.

    Returns
    -------
    List[Path]
        A sorted list of paths matching the specified pattern.
    """
    pattern = "*" if pattern is None else pattern
    paths = Path(dir_path).rglob(pattern) if recursive else Path(dir_path).glob(pattern)
    files = [f.resolve() for f in paths if f.is_file()]
    ext = ext[1:] if ext.startswith(".") else ext
    return sorted(f for f in files if f.suffix[1:] == ext)


def build_file_name(file_format: str, *args: Union[str, int, float], sep: str = "_") -> str:
    """
    Build a file name from a file format and a list of arguments.

    Parameters
    ----------
    file_format : str
        The file format.
    *args : str
        The arguments to use in the file name.
    sep : str, optional
        The separator to use between the arguments. Defaults to "_".

    Returns
    -------
    str
        The built file name.
    """
    name = sep.join(str(v) for v in args)
    file_format = file_format[1:] if file_format.startswith(".") else file_format
    return f"{name}.{file_format}"
