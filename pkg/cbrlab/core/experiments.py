import dataclasses
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from cbrlab import __version__
from cbrlab.actors import ActorConfig, ActorKind, ActorParams, Agent
from cbrlab.core.config import ScenarioConfig, scenario_to_dict
from cbrlab.dtypes import ConfigDict, Point, Row
from cbrlab.envs import OBS_DIM, GoalEnv, GoalEnvConfig, Phase, TerminalKind
from cbrlab.exceptions import InvalidConfig, NumericError
from cbrlab.exploration import GaussianNoiseSpec
from cbrlab.log import get_logger
from cbrlab.neural import MlpParams, ReadoutParams, pack_tensors, unpack_tensors
from cbrlab.numkit import RngStream, derive_stream, make_stream
from cbrlab.reservoir import ReservoirConfig, ReservoirParams, init_reservoir
from cbrlab.td3 import Experience, ReplayBuffer, create_learner, train_step

logger = get_logger(__name__)

N_ACTIONS = 2
STEP_COLUMNS = ("step", "critic_loss", "actor_objective", "episode_return", "episode_length")


@dataclasses.dataclass
class BatteryResult:
    """Outcome of the 16 deterministic test episodes at one training step.

    Failed episodes count as ``max_steps`` in ``steps``.
    """

    training_step: int
    goal: Point
    steps: List[int]
    reached: List[bool]
    trajectories: List[Row] = dataclasses.field(default_factory=list, repr=False)
    reservoir_states: List[Row] = dataclasses.field(default_factory=list, repr=False)

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.steps))

    @property
    def n_reached(self) -> int:
        return int(sum(self.reached))

    @property
    def all_reached(self) -> bool:
        return bool(self.reached) and all(self.reached)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "training_step": self.training_step,
            "goal": list(self.goal),
            "steps": list(self.steps),
            "reached": list(self.reached),
            "mean_steps": self.mean_steps,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "BatteryResult":
        return cls(
            training_step=int(doc["training_step"]),
            goal=tuple(doc["goal"]),
            steps=[int(s) for s in doc["steps"]],
            reached=[bool(r) for r in doc["reached"]],
        )


def snapshot_actor(params: ActorParams) -> Dict[str, Any]:
    if isinstance(params, ReadoutParams):
        return {"type": "readout", "n_features": params.n_features, "tensors": pack_tensors(params.tensors())}
    return {
        "type": "mlp",
        "activations": [a.value for a in params.activations],
        "tensors": pack_tensors(params.tensors()),
    }


def restore_actor(doc: Dict[str, Any]) -> ActorParams:
    tensors = unpack_tensors(doc["tensors"])
    if doc["type"] == "readout":
        return ReadoutParams(tensors[0], int(doc["n_features"]))
    return MlpParams(tensors[0::2], tensors[1::2], list(doc["activations"]))


@dataclasses.dataclass
class RunRecord:
    """Everything one seeded training run produced.

    ``reservoir`` is only filled when reservoir dumping is on; otherwise the
    reservoir is regenerated from ``(seed, config)``.
    ``step_metrics`` holds one value per training step in each of
    ``STEP_COLUMNS``; steps without a critic or actor update carry NaN there.
    It is written next to the record, not inside it.
    """

    seed: int
    config: ConfigDict
    batteries: List[BatteryResult]
    episodes: List[Row]
    actor: Dict[str, Any]
    failed: bool = False
    failure: Optional[str] = None
    reservoir: Optional[Dict[str, Any]] = None
    version: str = __version__
    step_metrics: Dict[str, List[float]] = dataclasses.field(default_factory=dict, repr=False)

    @property
    def final_battery(self) -> Optional[BatteryResult]:
        return self.batteries[-1] if self.batteries else None

    @property
    def success(self) -> bool:
        return success_of(self)

    def summary(self) -> Dict[str, Any]:
        final = self.final_battery
        return {
            "seed": self.seed,
            "success": self.success,
            "failed": self.failed,
            "failure": self.failure,
            "final_mean_steps": final.mean_steps if final else None,
            "final_reached": final.n_reached if final else None,
            "battery_steps": [b.training_step for b in self.batteries],
            "battery_means": [b.mean_steps for b in self.batteries],
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "summary": self.summary(),
            "seed": self.seed,
            "version": self.version,
            "config": self.config,
            "failed": self.failed,
            "failure": self.failure,
            "batteries": [b.to_dict() for b in self.batteries],
            "episodes": self.episodes,
            "actor": self.actor,
            "reservoir": self.reservoir,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RunRecord":
        return cls(
            seed=int(doc["seed"]),
            config=doc["config"],
            batteries=[BatteryResult.from_dict(b) for b in doc["batteries"]],
            episodes=list(doc.get("episodes", [])),
            actor=doc["actor"],
            failed=bool(doc.get("failed", False)),
            failure=doc.get("failure"),
            reservoir=doc.get("reservoir"),
            version=doc.get("version", __version__),
        )

    def step_rows(self) -> Iterator[Row]:
        columns = [self.step_metrics.get(c, []) for c in STEP_COLUMNS]
        for values in zip(*columns):
            yield dict(zip(STEP_COLUMNS, values))

    def trajectory_rows(self) -> List[Row]:
        return [row for b in self.batteries for row in b.trajectories]

    def reservoir_rows(self) -> List[Row]:
        return [row for b in self.batteries for row in b.reservoir_states]


def success_of(record: RunRecord) -> bool:
    """All 16 starts of the final battery reached the goal."""
    final = record.final_battery
    return not record.failed and final is not None and final.all_reached


@dataclasses.dataclass(frozen=True)
class AgentSnapshot:
    """Frozen policy for test batteries."""

    actor: ActorParams
    actor_cfg: ActorConfig
    reservoir_cfg: ReservoirConfig
    reservoir: Optional[ReservoirParams] = None


def build_reservoir(scenario: ScenarioConfig, seed: int) -> Optional[ReservoirParams]:
    """The run's fixed reservoir, a pure function of ``(seed, reservoir config)``."""
    if scenario.actor.kind is not ActorKind.CBRL_RESERVOIR:
        return None
    return init_reservoir(scenario.reservoir, derive_stream(make_stream(seed), "reservoir"))


def _state_row(battery: int, training_step: int, start: int, step: int, x: np.ndarray) -> Row:
    row = {"battery": battery, "training_step": training_step, "start": start, "step": step}
    row.update({f"x{j}": float(v) for j, v in enumerate(x)})
    return row


def run_test_battery(
    snapshot: AgentSnapshot,
    env_cfg: GoalEnvConfig,
    rng: RngStream,
    training_step: int = 0,
    battery_index: int = 0,
    dump_trajectories: bool = False,
    dump_reservoir: bool = False,
) -> BatteryResult:
    """Run the 16 test starts without start noise or action noise.

    The reservoir restarts from zero every episode, nothing is trained and
    the global step stays at ``training_step``.
    """
    explore = snapshot.actor_cfg.keep_noise_in_test
    steps, reached = [], []
    trajectories, states = [], []
    goal = None
    for i, start in enumerate(env_cfg.battery_starts()):
        stream = derive_stream(rng, f"start/{i}")
        agent = Agent(
            snapshot.actor_cfg,
            GaussianNoiseSpec(),
            snapshot.reservoir_cfg,
            snapshot.reservoir,
            derive_stream(stream, "agent"),
            N_ACTIONS,
        )
        env = GoalEnv(env_cfg, derive_stream(stream, "env"), phase=Phase.TEST)
        env.global_step = training_step
        u = env.reset(position=start)
        goal = env.state.goal
        x = agent.start_episode(u)
        kind = TerminalKind.NONE
        while not kind.ends_episode:
            if dump_reservoir and x is not None:
                states.append(_state_row(battery_index, training_step, i, env.state.episode_step, x))
            a = agent.act(snapshot.actor, u, x, explore)
            px, py = env.state.position
            u, r, kind = env.step(a)
            if dump_trajectories:
                trajectories.append(
                    {
                        "battery": battery_index,
                        "training_step": training_step,
                        "start": i,
                        "step": env.state.episode_step,
                        "x": px,
                        "y": py,
                        "a_x": float(a[0]),
                        "a_y": float(a[1]),
                        "r": r,
                    }
                )
            if not kind.ends_episode:
                x = agent.advance(u)
        success = kind is TerminalKind.GOAL
        reached.append(success)
        steps.append(env.state.episode_step if success else env_cfg.max_steps)
    result = BatteryResult(training_step, goal, steps, reached, trajectories, states)
    logger.info(
        f"battery {battery_index} at step {training_step}: mean {result.mean_steps:.1f} steps, "
        f"{result.n_reached}/{len(reached)} reached"
    )
    return result


def battery_schedule(total_steps: int, test_interval: int) -> List[int]:
    """Training steps after which a battery runs, starting with step 0."""
    schedule = list(range(0, total_steps + 1, test_interval))
    if schedule[-1] != total_steps:
        schedule.append(total_steps)
    return schedule


def run_training(scenario: ScenarioConfig, seed: int, config: Optional[ConfigDict] = None) -> RunRecord:
    """Interleaved act, store and train loop with periodic test batteries.

    Every random draw comes from a stream derived from ``seed``. A numeric
    failure ends the run early and marks the record failed.

    Parameters
    ----------
    scenario : ScenarioConfig
        Resolved scenario.
    seed : int
        Root seed of the run.
    config : dict, optional
        Resolved config document echoed into the record.
    """
    if scenario.reservoir.n_inputs != OBS_DIM:
        raise InvalidConfig(f"reservoir n_inputs must be {OBS_DIM}, got {scenario.reservoir.n_inputs}")
    run = scenario.run
    root = make_stream(seed)
    actor_cfg = scenario.actor
    n_features = scenario.reservoir.n_units if actor_cfg.kind.uses_features else 0
    reservoir = build_reservoir(scenario, seed)
    learner = create_learner(
        actor_cfg, scenario.td3, OBS_DIM, N_ACTIONS, n_features, derive_stream(root, "learner-init")
    )
    buffer = ReplayBuffer(scenario.td3.buffer_size)
    agent = Agent(actor_cfg, learner.smoothing, scenario.reservoir, reservoir, derive_stream(root, "agent"), N_ACTIONS)
    env = GoalEnv(scenario.env, derive_stream(root, "env"), phase=Phase.TRAIN)
    replay_rng = derive_stream(root, "replay")
    smoothing_rng = derive_stream(root, "smoothing")
    schedule = set(battery_schedule(run.total_steps, run.test_interval))
    logger.info(
        f"run seed={seed} scenario={scenario.name} actor={actor_cfg.kind.value} "
        f"g={scenario.reservoir.spectral_radius} steps={run.total_steps}"
    )

    def battery(index: int, step: int) -> BatteryResult:
        snapshot = AgentSnapshot(learner.actor, actor_cfg, scenario.reservoir, reservoir)
        return run_test_battery(
            snapshot,
            scenario.env,
            derive_stream(root, f"battery/{index}"),
            training_step=step,
            battery_index=index,
            dump_trajectories=run.dump_trajectories,
            dump_reservoir=run.dump_reservoir,
        )

    batteries = [battery(0, 0)]
    episodes: List[Row] = []
    failed, failure = False, None
    u = env.reset()
    x = agent.start_episode(u)
    episode_return, losses, objective = 0.0, [], None
    step_metrics: Dict[str, List[float]] = {c: [] for c in STEP_COLUMNS}
    try:
        for t in range(1, run.total_steps + 1):
            a = agent.act(learner.actor, u, x, explore=True)
            u_next, r, kind = env.step(a)
            x_next = agent.advance(u_next)
            terminal = kind is TerminalKind.GOAL or (
                kind is TerminalKind.TIMEOUT and not scenario.td3.bootstrap_timeouts
            )
            buffer.push(Experience(u, x, a, r, u_next, x_next, terminal))
            metrics = train_step(learner, buffer, replay_rng, smoothing_rng)
            step_loss, step_objective = float("nan"), float("nan")
            if metrics is not None:
                step_loss = metrics.critic_loss
                losses.append(step_loss)
                if metrics.actor_objective is not None:
                    objective = step_objective = metrics.actor_objective
            episode_return += r
            for column, value in zip(
                STEP_COLUMNS, (t, step_loss, step_objective, episode_return, env.state.episode_step)
            ):
                step_metrics[column].append(value)
            if kind.ends_episode:
                episodes.append(
                    {
                        "episode": len(episodes),
                        "end_step": t,
                        "length": env.state.episode_step,
                        "outcome": kind.value,
                        "return": episode_return,
                        "critic_loss": float(np.mean(losses)) if losses else None,
                        "actor_objective": objective,
                    }
                )
                logger.debug(f"episode {len(episodes)} ended at step {t}: {kind.value}, return {episode_return:.3f}")
                u = env.reset()
                x = agent.start_episode(u)
                episode_return, losses = 0.0, []
            else:
                u, x = u_next, x_next
            if t in schedule:
                batteries.append(battery(len(batteries), t))
    except NumericError as e:
        logger.warning(f"run seed={seed} failed at learner step {learner.step}: {e}")
        failed, failure = True, str(e)

    record = RunRecord(
        seed=seed,
        config=config if config is not None else scenario_to_dict(scenario),
        batteries=batteries,
        episodes=episodes,
        actor=snapshot_actor(learner.actor),
        failed=failed,
        failure=failure,
        reservoir=(
            {"tensors": pack_tensors([reservoir.w_rec, reservoir.w_in])}
            if reservoir is not None and run.dump_reservoir
            else None
        ),
        step_metrics=step_metrics,
    )
    logger.info(f"run seed={seed} finished: success={record.success}, episodes={len(episodes)}")
    return record


def replay_final_battery(
    record: RunRecord, scenario: ScenarioConfig, dump_trajectories: bool = False, dump_reservoir: bool = False
) -> BatteryResult:
    """Re-run the last battery of ``record`` from its actor snapshot.

    Uses the same derived streams as the recorded battery, so an intact record
    reproduces its final battery exactly.
    """
    if not record.batteries:
        raise InvalidConfig(f"record of seed {record.seed} has no battery to replay")
    index = len(record.batteries) - 1
    snapshot = AgentSnapshot(
        restore_actor(record.actor), scenario.actor, scenario.reservoir, build_reservoir(scenario, record.seed)
    )
    return run_test_battery(
        snapshot,
        scenario.env,
        derive_stream(make_stream(record.seed), f"battery/{index}"),
        training_step=record.batteries[index].training_step,
        battery_index=index,
        dump_trajectories=dump_trajectories,
        dump_reservoir=dump_reservoir,
    )
