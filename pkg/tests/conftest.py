import json
import os

import pytest

from cbrlab.core.config import resolve_config, scenario_from_dict
from cbrlab.core.experiments import run_training
from cbrlab.numkit import derive_stream, make_stream
from tests import *


@pytest.fixture
def test_data_directory():
    return TEST_DATA_DIRECTORY


@pytest.fixture
def test_directory():
    return TEST_DIRECTORY


@pytest.fixture
def small_config_json():
    return os.path.join(TEST_DATA_DIRECTORY, "small_config.json")


@pytest.fixture
def small_doc(small_config_json):
    with open(small_config_json) as f:
        return resolve_config(json.load(f), environ={})


@pytest.fixture
def small_scenario(small_doc):
    return scenario_from_dict(small_doc)


@pytest.fixture
def small_record(small_scenario, small_doc):
    return run_training(small_scenario, 0, config=small_doc)


@pytest.fixture
def stream():
    return derive_stream(make_stream(7), "test")


@pytest.fixture
def tmp_dir(tmp_path):
    return str(tmp_path / "tmp")
