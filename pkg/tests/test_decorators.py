import os
import shutil
from pathlib import Path

import pytest

from cbrlab.decorators import mkdir_decorator, valid_file_path


def test_mkdir_decorator(tmp_dir):
    @mkdir_decorator
    def some_func(file_path):
        return file_path

    p = os.path.join(tmp_dir, "file.json")
    assert some_func(p) == p
    assert os.path.exists(tmp_dir)
    shutil.rmtree(tmp_dir)


def test_valid_file_path_passes_a_path(small_config_json):
    @valid_file_path
    def some_func(file_path, suffix=None):
        return file_path, suffix

    file_path, suffix = some_func(small_config_json, suffix="json")
    assert isinstance(file_path, Path) and file_path.name == "small_config.json"
    assert suffix == "json"


def test_valid_file_path_rejects_missing_file(tmp_dir):
    @valid_file_path
    def some_func(file_path):
        return file_path

    with pytest.raises(FileNotFoundError):
        some_func(os.path.join(tmp_dir, "missing.json"))
