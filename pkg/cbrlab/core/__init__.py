from cbrlab.core.api import analyze, replay, sweep, train
from cbrlab.core.config import ScenarioConfig, resolve_config, scenario_from_dict
from cbrlab.core.experiments import (
    RunRecord,
    BatteryResult,
    run_training,
    run_test_battery,
    success_of,
)
from cbrlab.core.sweeps import SweepTable, get_grid, run_sweep
