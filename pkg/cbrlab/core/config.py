"""Scenario configuration: presets, JSON documents and environment overrides.

A config document is a nested dict with the sections ``run``, ``actor``,
``env``, ``td3`` and ``reservoir`` plus a top-level ``scenario`` naming the
preset it starts from. Values resolve in this order: preset, file, env vars
(``CBRLAB_CFG__<SECTION>__<KEY>=<json>``), explicit overrides.
"""
import dataclasses
import enum
import json
import os
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from cbrlab import __version__
from cbrlab.actors import ActorConfig
from cbrlab.dtypes import ConfigDict
from cbrlab.envs import GoalEnvConfig
from cbrlab.exceptions import InvalidConfig
from cbrlab.log import get_logger
from cbrlab.reservoir import ReservoirConfig
from cbrlab.settings import Settings
from cbrlab.td3 import Td3Hyper
from cbrlab.utils import deep_merge, set_dotted

logger = get_logger(__name__)

DEFAULT_SCENARIO = "goal"
SECTIONS = ("run", "actor", "env", "td3", "reservoir")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    total_steps: int = 20_000
    test_interval: int = 2_000
    seeds: Sequence[int] = tuple(range(Settings.DEFAULT_SEEDS))
    dump_trajectories: bool = False
    dump_reservoir: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.total_steps < 0:
            raise InvalidConfig(f"total_steps must be >= 0, got {self.total_steps}")
        if self.test_interval < 1:
            raise InvalidConfig(f"test_interval must be >= 1, got {self.test_interval}")
        if not self.seeds:
            raise InvalidConfig("seed list must be nonempty")
        if self.total_steps % self.test_interval:
            logger.warning(
                f"total_steps {self.total_steps} is not a multiple of test_interval "
                f"{self.test_interval}; a final battery runs at the last step"
            )


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    name: str = DEFAULT_SCENARIO
    run: RunConfig = dataclasses.field(default_factory=RunConfig)
    actor: ActorConfig = dataclasses.field(default_factory=ActorConfig)
    env: GoalEnvConfig = dataclasses.field(default_factory=GoalEnvConfig)
    td3: Td3Hyper = dataclasses.field(default_factory=Td3Hyper)
    reservoir: ReservoirConfig = dataclasses.field(default_factory=ReservoirConfig)


SCENARIOS: Dict[str, Callable[[], ConfigDict]] = {}


def register_scenario(name: str) -> Callable:
    """Register a preset; the function returns the overrides of the preset
    relative to the defaults."""

    def wrapper(func: Callable[[], ConfigDict]) -> Callable[[], ConfigDict]:
        if name in SCENARIOS:
            raise ValueError(f"scenario {name} already registered")
        SCENARIOS[name] = func
        return func

    return wrapper


@register_scenario("goal")
def _goal() -> ConfigDict:
    return {"run": {"total_steps": 20_000, "test_interval": 2_000}}


@register_scenario("goal-change")
def _goal_change() -> ConfigDict:
    return {
        "run": {"total_steps": 50_000, "test_interval": 5_000},
        "env": {"change_step": 20_001},
    }


@register_scenario("long-relearn")
def _long_relearn() -> ConfigDict:
    return {
        "run": {"total_steps": 200_001, "test_interval": 5_000},
        "env": {"change_step": 20_001},
    }


@register_scenario("flicker")
def _flicker() -> ConfigDict:
    return {
        "run": {"total_steps": 50_000, "test_interval": 5_000},
        "env": {"p_obs": 0.5},
        "reservoir": {"spectral_radius": 1.2},
        "td3": {"critic_sees_reservoir": True},
    }


@register_scenario("expanded")
def _expanded() -> ConfigDict:
    return {"env": to_plain(dataclasses.asdict(GoalEnvConfig().scaled(100.0)))}


@register_scenario("obs-noise")
def _obs_noise() -> ConfigDict:
    return {"env": {"obs_noise_std": 0.1}}


def to_plain(value: Any) -> Any:
    """JSON-ready copy: enums to values, tuples to lists."""
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    return value


def default_config() -> ConfigDict:
    """Every known key with its default value."""
    doc = {
        "scenario": DEFAULT_SCENARIO,
        "run": dataclasses.asdict(RunConfig()),
        "actor": dataclasses.asdict(ActorConfig()),
        "env": dataclasses.asdict(GoalEnvConfig()),
        "td3": dataclasses.asdict(Td3Hyper()),
        "reservoir": dataclasses.asdict(ReservoirConfig()),
    }
    # resolved per actor kind on construction
    doc["actor"]["exploration"] = None
    return to_plain(doc)


def _check_keys(doc: Mapping[str, Any], reference: Mapping[str, Any], prefix: str = "") -> None:
    for key, value in doc.items():
        dotted = f"{prefix}{key}"
        if key not in reference:
            raise InvalidConfig(f"unknown config key: {dotted}")
        if isinstance(reference[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"config key {dotted} must be a mapping")
            _check_keys(value, reference[key], f"{dotted}.")


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> ConfigDict:
    """Config overrides from ``CBRLAB_CFG__SECTION__KEY`` variables.

    Values are parsed as JSON and fall back to the raw string.
    """
    environ = os.environ if environ is None else environ
    prefix = Settings.CONFIG_ENV_PREFIX
    overrides: ConfigDict = {}
    for name in sorted(environ):
        if not name.startswith(prefix):
            continue
        dotted = ".".join(part.lower() for part in name[len(prefix) :].split("__"))
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_dotted(overrides, dotted, value)
    return overrides


def resolve_config(
    file_doc: Optional[ConfigDict] = None,
    environ: Optional[Mapping[str, str]] = None,
    overrides: Optional[ConfigDict] = None,
) -> ConfigDict:
    """Merge preset, file document, env overrides and explicit overrides.

    Raises
    ------
    InvalidConfig
        On unknown keys at any level or an unknown scenario name.
    """
    reference = default_config()
    layers = [file_doc or {}, env_overrides(environ), overrides or {}]
    for layer in layers:
        _check_keys(layer, reference)
    name = DEFAULT_SCENARIO
    for layer in layers:
        name = layer.get("scenario", name)
    if name not in SCENARIOS:
        raise InvalidConfig(f"unknown scenario {name!r}, known: {sorted(SCENARIOS)}")
    resolved = deep_merge(reference, SCENARIOS[name]())
    for layer in layers:
        resolved = deep_merge(resolved, layer)
    resolved["scenario"] = name
    scenario_from_dict(resolved)
    return resolved


def scenario_from_dict(doc: ConfigDict) -> ScenarioConfig:
    """Build a validated ``ScenarioConfig`` from a resolved document."""
    _check_keys(doc, default_config())
    try:
        return ScenarioConfig(
            name=doc.get("scenario", DEFAULT_SCENARIO),
            run=RunConfig(**doc.get("run", {})),
            actor=ActorConfig(**doc.get("actor", {})),
            env=GoalEnvConfig(**doc.get("env", {})),
            td3=Td3Hyper(**doc.get("td3", {})),
            reservoir=ReservoirConfig(**doc.get("reservoir", {})),
        )
    except InvalidConfig:
        raise
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"invalid config value: {e}") from e


def scenario_to_dict(scenario: ScenarioConfig) -> ConfigDict:
    doc = {"scenario": scenario.name}
    for section in SECTIONS:
        doc[section] = dataclasses.asdict(getattr(scenario, section))
    return to_plain(doc)


def with_values(doc: ConfigDict, values: Mapping[str, Any]) -> ConfigDict:
    """Copy of ``doc`` with dotted-key values applied, e.g.
    ``{"reservoir.spectral_radius": 2.2}``."""
    updated = json.loads(json.dumps(doc))
    for dotted, value in values.items():
        set_dotted(updated, dotted, to_plain(value))
    _check_keys(updated, default_config())
    return updated


def artifact_header(doc: ConfigDict) -> ConfigDict:
    """Resolved config and tool version, embedded in every output file."""
    return {"tool": "cbrlab", "version": __version__, "config": doc}


def known_scenarios() -> List[str]:
    return sorted(SCENARIOS)
