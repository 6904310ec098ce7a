import dataclasses
import enum
from typing import Optional, Tuple, Union

import numpy as np

from cbrlab.exceptions import InvalidConfig, NumericError
from cbrlab.log import get_logger
from cbrlab.numkit import RngStream

logger = get_logger(__name__)

Size = Union[int, Tuple[int, ...]]


class Exploration(str, enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    OU = "ou"


@dataclasses.dataclass(frozen=True)
class GaussianNoiseSpec:
    """Action noise std, target-smoothing std and the smoothing clip bound."""

    action_std: float = 0.5
    target_std: float = 0.2
    target_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.action_std < 0 or self.target_std < 0 or self.target_clip <= 0:
            raise InvalidConfig(f"invalid gaussian noise spec {self}")


def gaussian_action_noise(spec: GaussianNoiseSpec, rng: RngStream, size: Size = 2) -> np.ndarray:
    """I.i.d. ``N(0, action_std^2)``; unclipped, clamping happens after addition."""
    return rng.normal(spec.action_std, size)


def target_smoothing_noise(spec: GaussianNoiseSpec, rng: RngStream, size: Size = 2) -> np.ndarray:
    """``N(0, target_std^2)`` clamped to ``[-target_clip, target_clip]``."""
    return np.clip(rng.normal(spec.target_std, size), -spec.target_clip, spec.target_clip)


@dataclasses.dataclass(frozen=True)
class OuState:
    """Discretized Ornstein-Uhlenbeck process value and its parameters."""

    x: np.ndarray
    theta: float = 0.15
    sigma: float = 0.5
    dt: float = 0.01
    mu: float = 0.0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise InvalidConfig(f"OU time step must be positive, got {self.dt}")


def ou_step(s: OuState, rng: RngStream) -> OuState:
    """``X <- X + theta (mu - X) dt + sigma sqrt(dt) eps``.

    Raises
    ------
    NumericError
        When the process leaves the finite range (``theta * dt >= 2`` diverges).
    """
    eps = rng.normal(1.0, s.x.shape)
    x = s.x + s.theta * (s.mu - s.x) * s.dt + s.sigma * np.sqrt(s.dt) * eps
    if not np.all(np.isfinite(x)):
        logger.warning(f"OU process diverged (theta={s.theta}, dt={s.dt})")
        raise NumericError(f"OU process diverged at theta={s.theta}, dt={s.dt}")
    return dataclasses.replace(s, x=x)


class GaussianNoise:
    """Stateless action-noise process."""

    def __init__(self, spec: GaussianNoiseSpec, size: int = 2):
        self.spec = spec
        self.size = size

    def reset(self) -> None:
        pass

    def sample(self, rng: RngStream) -> np.ndarray:
        return gaussian_action_noise(self.spec, rng, self.size)


class OuNoise:
    """Temporally correlated action noise, restarted at ``mu`` every episode."""

    def __init__(self, size: int = 2, theta: float = 0.15, sigma: float = 0.5, dt: float = 0.01, mu: float = 0.0):
        self.size = size
        self.state = OuState(np.full(size, mu, dtype=np.float64), theta, sigma, dt, mu)

    def reset(self) -> None:
        self.state = dataclasses.replace(self.state, x=np.full(self.size, self.state.mu, dtype=np.float64))

    def sample(self, rng: RngStream) -> np.ndarray:
        self.state = ou_step(self.state, rng)
        return self.state.x.copy()


NoiseProcess = Union[GaussianNoise, OuNoise]


def make_noise(
    exploration: Exploration,
    spec: GaussianNoiseSpec,
    size: int = 2,
    ou_theta: float = 0.15,
    ou_sigma: float = 0.5,
    ou_dt: float = 0.01,
) -> Optional[NoiseProcess]:
    """Action-noise process for an exploration mode; ``None`` for ``NONE``."""
    exploration = Exploration(exploration)
    if exploration is Exploration.GAUSSIAN:
        return GaussianNoise(spec, size)
    if exploration is Exploration.OU:
        return OuNoise(size, theta=ou_theta, sigma=ou_sigma, dt=ou_dt)
    return None
