"""Goal-reaching task on a walled square field.

The environment is a pure state machine: ``reset`` and ``step`` return new
``EnvState`` values and never mutate their inputs. ``GoalEnv`` wraps the
functions for rollout loops.
"""
import dataclasses
import enum
from typing import Optional, Sequence, Tuple

import numpy as np

from cbrlab.dtypes import ActionVector, Point, Vector
from cbrlab.exceptions import InvalidAction, InvalidConfig
from cbrlab.log import get_logger
from cbrlab.numkit import RngStream

logger = get_logger(__name__)

OBS_DIM = 5
COLLISION_REWARD = -0.01
GOAL_REWARD = 1.0


class Phase(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


class TerminalKind(str, enum.Enum):
    NONE = "none"
    GOAL = "goal"
    TIMEOUT = "timeout"

    @property
    def ends_episode(self) -> bool:
        return self is not TerminalKind.NONE


def _points(values) -> Tuple[Point, ...]:
    return tuple((float(p[0]), float(p[1])) for p in values)


@dataclasses.dataclass(frozen=True)
class GoalEnvConfig:
    """Field geometry, goal schedule and observability of the goal task.

    ``change_step = 0`` disables the goal change. ``p_obs < 1`` turns on
    flickering and ``obs_noise_std`` only applies in the test phase.
    """

    field_size: float = 20.0
    goal: Point = (15.0, 10.0)
    goal_radius: float = 2.0
    goal_after_change: Point = (5.0, 10.0)
    change_step: int = 0
    max_steps: int = 200
    starts: Sequence[Point] = ((2.0, 2.0), (2.0, 18.0), (18.0, 2.0), (18.0, 18.0))
    start_noise_std: float = 1.0
    test_starts: Sequence[Point] = (
        (2.0, 2.0),
        (2.0, 10.0),
        (2.0, 18.0),
        (10.0, 2.0),
        (10.0, 18.0),
        (18.0, 2.0),
        (18.0, 10.0),
        (18.0, 18.0),
    )
    test_shift: float = 0.002
    p_obs: float = 1.0
    obs_noise_std: float = 0.0

    def __post_init__(self) -> None:
        for name in ("goal", "goal_after_change"):
            object.__setattr__(self, name, _points([getattr(self, name)])[0])
        object.__setattr__(self, "starts", _points(self.starts))
        object.__setattr__(self, "test_starts", _points(self.test_starts))
        if self.field_size <= 0 or self.goal_radius <= 0 or self.max_steps < 1:
            raise InvalidConfig(f"invalid field geometry {self}")
        for gx, gy in (self.goal, self.goal_after_change):
            r = self.goal_radius
            if not (r <= gx <= self.field_size - r and r <= gy <= self.field_size - r):
                raise InvalidConfig(f"goal circle at {(gx, gy)} leaves the field")
        if not self.starts or not self.test_starts:
            raise InvalidConfig("start position lists must be nonempty")
        if not 0.0 <= self.p_obs <= 1.0:
            raise InvalidConfig(f"p_obs must be in [0, 1], got {self.p_obs}")
        if self.change_step < 0 or self.start_noise_std < 0 or self.obs_noise_std < 0:
            raise InvalidConfig(f"invalid env config {self}")

    @property
    def diagonal(self) -> float:
        return self.field_size * np.sqrt(2.0)

    def battery_starts(self) -> Tuple[Point, ...]:
        """The test starts followed by the same starts shifted by ``test_shift``."""
        shifted = tuple((x + self.test_shift, y + self.test_shift) for x, y in self.test_starts)
        return self.test_starts + shifted

    def scaled(self, field_size: float) -> "GoalEnvConfig":
        """Same task on a larger (or smaller) field.

        Starts and goal centres scale with the field; goal radius, action bound
        and the test shift do not.
        """
        k = field_size / self.field_size

        def scale(p: Point) -> Point:
            return (p[0] * k, p[1] * k)

        return dataclasses.replace(
            self,
            field_size=field_size,
            goal=scale(self.goal),
            goal_after_change=scale(self.goal_after_change),
            starts=tuple(scale(p) for p in self.starts),
            test_starts=tuple(scale(p) for p in self.test_starts),
        )


@dataclasses.dataclass(frozen=True)
class EnvState:
    position: Point
    goal: Point
    episode_step: int = 0
    global_step: int = 0
    phase: Phase = Phase.TRAIN


def goal_at(cfg: GoalEnvConfig, step: int) -> Point:
    """Goal centre in force at 1-based training step ``step``."""
    if cfg.change_step and step > cfg.change_step:
        return cfg.goal_after_change
    return cfg.goal


def goal_distance(position: Point, goal: Point) -> float:
    return float(np.hypot(position[0] - goal[0], position[1] - goal[1]))


def _clamp(cfg: GoalEnvConfig, value: float) -> float:
    return float(min(max(value, 0.0), cfg.field_size))


def reset(
    cfg: GoalEnvConfig,
    rng: RngStream,
    start_index: Optional[int] = None,
    position: Optional[Point] = None,
    global_step: int = 0,
    phase: Phase = Phase.TRAIN,
) -> Tuple[EnvState, Vector]:
    """Start an episode.

    Parameters
    ----------
    cfg : GoalEnvConfig
        Task definition.
    rng : RngStream
        Env stream: start choice, start noise, flicker and observation noise.
    start_index : int, optional
        Index into ``cfg.starts``; drawn uniformly when omitted.
    position : Point, optional
        Exact start without noise (test batteries). Overrides ``start_index``.
    global_step : int
        Completed training steps. A training episode observes the goal of the
        step it is about to take; a test episode keeps the goal in force.
    phase : Phase
        Train or test.

    Returns
    -------
    (EnvState, np.ndarray)
        Initial state and the first observation, which is never flickered out.
    """
    if position is None:
        if start_index is None:
            start_index = int(rng.integers(len(cfg.starts)))
        corner = cfg.starts[start_index]
        noise = rng.normal(cfg.start_noise_std, 2) if cfg.start_noise_std > 0 else np.zeros(2)
        position = (corner[0] + noise[0], corner[1] + noise[1])
    position = (_clamp(cfg, position[0]), _clamp(cfg, position[1]))
    st = EnvState(
        position=position,
        goal=goal_at(cfg, global_step + 1 if Phase(phase) is Phase.TRAIN else global_step),
        episode_step=0,
        global_step=global_step,
        phase=Phase(phase),
    )
    return st, observe(cfg, st, rng, st.phase)


def observe(cfg: GoalEnvConfig, st: EnvState, rng: RngStream, phase: Phase) -> Vector:
    """``[x/F, 1 - x/F, y/F, 1 - y/F, 1 - D_G/(2L)]``, zeroed with
    probability ``1 - p_obs`` after the first step of an episode.
    """
    x, y = st.position
    f = cfg.field_size
    u = np.array(
        [x / f, 1.0 - x / f, y / f, 1.0 - y / f, 1.0 - goal_distance(st.position, st.goal) / (2.0 * cfg.diagonal)]
    )
    if cfg.p_obs < 1.0 and st.episode_step > 0:
        if rng.random() >= cfg.p_obs:
            return np.zeros(OBS_DIM)
    if phase is Phase.TEST and cfg.obs_noise_std > 0:
        u = u + rng.normal(cfg.obs_noise_std, OBS_DIM)
    return u


def step(
    cfg: GoalEnvConfig, st: EnvState, a: ActionVector, rng: RngStream
) -> Tuple[EnvState, Vector, float, TerminalKind]:
    """Move by ``a``, clamp to the field, and score the step.

    Training steps advance the global counter and pick up the goal change;
    test steps leave it untouched.

    Raises
    ------
    InvalidAction
        If ``a`` is not a finite 2-vector inside ``[-1, 1]``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (2,) or not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0):
        raise InvalidAction(f"action must be a 2-vector in [-1, 1], got {a}")
    global_step, goal = st.global_step, st.goal
    if st.phase is Phase.TRAIN:
        global_step += 1
        goal = goal_at(cfg, global_step)
    raw = (st.position[0] + a[0], st.position[1] + a[1])
    position = (_clamp(cfg, raw[0]), _clamp(cfg, raw[1]))
    collided = position != raw
    episode_step = st.episode_step + 1
    if goal_distance(position, goal) < cfg.goal_radius:
        reward, kind = GOAL_REWARD, TerminalKind.GOAL
    else:
        reward = COLLISION_REWARD if collided else 0.0
        kind = TerminalKind.TIMEOUT if episode_step >= cfg.max_steps else TerminalKind.NONE
    new = dataclasses.replace(
        st, position=position, goal=goal, episode_step=episode_step, global_step=global_step
    )
    return new, observe(cfg, new, rng, new.phase), reward, kind


class GoalEnv:
    """Stateful wrapper holding the current ``EnvState`` of one rollout."""

    def __init__(self, cfg: GoalEnvConfig, rng: RngStream, phase: Phase = Phase.TRAIN):
        self.cfg = cfg
        self.rng = rng
        self.phase = Phase(phase)
        self.state: Optional[EnvState] = None
        self.global_step = 0

    def reset(self, start_index: Optional[int] = None, position: Optional[Point] = None) -> Vector:
        self.state, u = reset(
            self.cfg, self.rng, start_index, position, global_step=self.global_step, phase=self.phase
        )
        return u

    def step(self, a: ActionVector) -> Tuple[Vector, float, TerminalKind]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        previous_goal = self.state.goal
        self.state, u, reward, kind = step(self.cfg, self.state, a, self.rng)
        self.global_step = self.state.global_step
        if self.state.goal != previous_goal:
            logger.info(f"goal moved to {self.state.goal} at training step {self.global_step}")
        return u, reward, kind
