import dataclasses
import enum
from typing import Optional, Tuple, Union

import numpy as np

from cbrlab.dtypes import ActionVector, ReservoirState, Tensors, Vector
from cbrlab.exceptions import InvalidConfig
from cbrlab.exploration import Exploration, GaussianNoiseSpec, NoiseProcess, make_noise
from cbrlab.neural import (
    Activation,
    MlpParams,
    ReadoutParams,
    init_mlp,
    init_readout,
    mlp_backward,
    mlp_forward,
    readout_backward,
    readout_forward,
)
from cbrlab.numkit import RngStream
from cbrlab.reservoir import (
    ReservoirConfig,
    ReservoirParams,
    reservoir_step,
    reset_state,
)

ActorParams = Union[ReadoutParams, MlpParams]


class ActorKind(str, enum.Enum):
    CBRL_RESERVOIR = "cbrl-reservoir"
    MLP_PLAIN = "mlp-plain"
    MLP_NOISY = "mlp-noisy"
    RANDOM_LAYER = "random-layer"

    @property
    def uses_features(self) -> bool:
        """Whether experiences carry a reservoir state or random layer."""
        return self in (ActorKind.CBRL_RESERVOIR, ActorKind.RANDOM_LAYER)


@dataclasses.dataclass(frozen=True)
class ActorConfig:
    """Policy variant and its exploration source.

    ``exploration=None`` resolves to gaussian noise for ``mlp-noisy`` and to
    no external noise for every other kind.
    """

    kind: ActorKind = ActorKind.CBRL_RESERVOIR
    exploration: Optional[Exploration] = None
    action_noise_std: float = 0.5
    ou_theta: float = 0.15
    ou_sigma: float = 0.5
    ou_dt: float = 0.01
    random_scale: float = 1.0
    hidden_units: int = 256
    keep_noise_in_test: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ActorKind(self.kind))
        exploration = self.exploration
        if exploration is None:
            exploration = Exploration.GAUSSIAN if self.kind is ActorKind.MLP_NOISY else Exploration.NONE
        object.__setattr__(self, "exploration", Exploration(exploration))
        if self.kind is ActorKind.MLP_PLAIN and self.exploration is not Exploration.NONE:
            raise InvalidConfig("mlp-plain actor cannot use external exploration noise")
        if self.kind is ActorKind.MLP_NOISY and self.exploration is Exploration.NONE:
            raise InvalidConfig("mlp-noisy actor needs gaussian or ou exploration")
        if self.random_scale < 0:
            raise InvalidConfig(f"random_scale must be >= 0, got {self.random_scale}")
        if self.action_noise_std < 0 or self.hidden_units < 1:
            raise InvalidConfig(f"invalid actor config {self}")

    @property
    def explores_with_noise(self) -> bool:
        return self.exploration is not Exploration.NONE


def act_cbrl(readout: ReadoutParams, x: ReservoirState, u: Vector) -> ActionVector:
    """Reservoir readout action; no noise in any phase."""
    return readout_forward(readout, x, u)


def act_mlp(params: MlpParams, u: Vector, noise: Optional[Vector] = None) -> ActionVector:
    """``tanh``-MLP action plus optional noise, clamped to ``[-1, 1]``."""
    action, _ = mlp_forward(params, u)
    if noise is not None:
        action = action + np.asarray(noise, dtype=np.float64)
    return np.clip(action, -1.0, 1.0)


def act_random_layer(
    readout: ReadoutParams, rng: RngStream, u: Vector, s: float
) -> Tuple[ActionVector, np.ndarray]:
    """Readout action over a fresh ``Uniform[-s, s]`` layer.

    Returns the layer so it can be stored in place of a reservoir state.
    """
    layer = draw_random_layer(rng, readout.n_features, s)
    return readout_forward(readout, layer, u), layer


def draw_random_layer(rng: RngStream, n_units: int, s: float) -> np.ndarray:
    if s < 0:
        raise ValueError(f"random layer scale must be >= 0, got {s}")
    if s == 0:
        return np.zeros(n_units)
    return rng.uniform(-s, s, n_units)


def init_actor_params(
    cfg: ActorConfig, n_inputs: int, n_actions: int, n_features: int, rng: RngStream
) -> ActorParams:
    """Trainable actor part: readout for feature kinds, ``tanh`` MLP otherwise."""
    if cfg.kind.uses_features:
        return init_readout(n_actions, n_features, n_inputs, rng)
    return init_mlp(
        (n_inputs, cfg.hidden_units, n_actions),
        (Activation.TANH, Activation.TANH),
        rng,
    )


def policy_forward(params: ActorParams, u: Vector, x: Optional[Vector]) -> np.ndarray:
    """Noise-free actor output for a vector or a batch."""
    if isinstance(params, ReadoutParams):
        return readout_forward(params, x, u)
    return mlp_forward(params, u)[0]


def policy_backward(
    params: ActorParams, u: Vector, x: Optional[Vector], action_grad: Vector
) -> Tensors:
    """Gradients w.r.t. ``params.tensors()`` for a given dLoss/dAction."""
    if isinstance(params, ReadoutParams):
        return [readout_backward(params, x, u, action_grad)]
    _, cache = mlp_forward(params, u)
    grads, _ = mlp_backward(params, cache, action_grad)
    return grads.tensors()


class Agent:
    """Rollout-side policy: owns the reservoir state (or random-layer stream)
    and the action-noise process of one rollout.

    Parameters
    ----------
    cfg : ActorConfig
        Policy variant.
    noise_spec : GaussianNoiseSpec
        Gaussian action-noise parameters.
    reservoir_cfg : ReservoirConfig
        Reservoir shape; ``n_units`` also sizes the random layer.
    reservoir : ReservoirParams, optional
        Fixed reservoir for ``cbrl-reservoir``.
    rng : RngStream
        Stream for random layers and action noise.
    n_actions : int
        Action dimension.
    """

    def __init__(
        self,
        cfg: ActorConfig,
        noise_spec: GaussianNoiseSpec,
        reservoir_cfg: ReservoirConfig,
        reservoir: Optional[ReservoirParams],
        rng: RngStream,
        n_actions: int = 2,
    ):
        if cfg.kind is ActorKind.CBRL_RESERVOIR and reservoir is None:
            raise InvalidConfig("cbrl-reservoir actor needs reservoir parameters")
        self.cfg = cfg
        self.reservoir_cfg = reservoir_cfg
        self.reservoir = reservoir
        self.rng = rng
        self.noise: Optional[NoiseProcess] = make_noise(
            cfg.exploration,
            dataclasses.replace(noise_spec, action_std=cfg.action_noise_std),
            n_actions,
            ou_theta=cfg.ou_theta,
            ou_sigma=cfg.ou_sigma,
            ou_dt=cfg.ou_dt,
        )
        self.state: Optional[ReservoirState] = None

    def start_episode(self, u: Vector) -> Optional[np.ndarray]:
        """Reset the reservoir to zero and the noise process, then take in
        the first observation."""
        if self.noise is not None:
            self.noise.reset()
        if self.cfg.kind is ActorKind.CBRL_RESERVOIR:
            self.state = reset_state(self.reservoir_cfg)
        return self.advance(u)

    def advance(self, u: Vector) -> Optional[np.ndarray]:
        """Feature vector for observation ``u``: the next reservoir state,
        a fresh random layer, or ``None`` for MLP actors."""
        kind = self.cfg.kind
        if kind is ActorKind.CBRL_RESERVOIR:
            self.state = reservoir_step(self.reservoir, self.reservoir_cfg, self.state, u)
            return self.state
        if kind is ActorKind.RANDOM_LAYER:
            return draw_random_layer(self.rng, self.reservoir_cfg.n_units, self.cfg.random_scale)
        return None

    def act(self, params: ActorParams, u: Vector, x: Optional[np.ndarray], explore: bool) -> ActionVector:
        """Action for ``(u, x)``; external noise only when ``explore``."""
        noise = None
        if explore and self.noise is not None:
            noise = self.noise.sample(self.rng)
        if isinstance(params, MlpParams):
            return act_mlp(params, u, noise)
        action = act_cbrl(params, x, u)
        if noise is not None:
            action = np.clip(action + noise, -1.0, 1.0)
        return action
