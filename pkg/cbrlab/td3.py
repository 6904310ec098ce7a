import dataclasses
import hashlib
from typing import List, Optional, Sequence

import numpy as np

from cbrlab.actors import ActorParams, init_actor_params, policy_backward, policy_forward, ActorConfig
from cbrlab.dtypes import Tensors, Vector
from cbrlab.exceptions import DimensionError, InsufficientExperience, InvalidConfig, NumericError
from cbrlab.exploration import GaussianNoiseSpec, target_smoothing_noise
from cbrlab.log import get_logger
from cbrlab.neural import (
    Activation,
    AdamState,
    MlpParams,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from cbrlab.numkit import RngStream

logger = get_logger(__name__)


@dataclasses.dataclass(frozen=True)
class Experience:
    """One transition ``(u, x, a, r, u', x', terminal)``; ``x``/``x'`` are
    ``None`` for MLP actors."""

    u: Vector
    x: Optional[Vector]
    a: Vector
    r: float
    u_next: Vector
    x_next: Optional[Vector]
    terminal: bool


@dataclasses.dataclass
class Batch:
    u: np.ndarray
    x: Optional[np.ndarray]
    a: np.ndarray
    r: np.ndarray
    u_next: np.ndarray
    x_next: Optional[np.ndarray]
    terminal: np.ndarray

    def __len__(self) -> int:
        return self.r.shape[0]


class ReplayBuffer:
    """FIFO ring buffer of experiences stored column-wise.

    Storage grows geometrically up to ``capacity`` so a buffer of 10**6 costs
    only what the run actually fills.
    """

    def __init__(self, capacity: int = 10**6):
        if capacity < 1:
            raise InvalidConfig(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._columns = {}
        self._allocated = 0
        self._idx = 0
        self.size = 0
        self.has_features: Optional[bool] = None

    def __len__(self) -> int:
        return self.size

    def ready(self, n: int) -> bool:
        return self.size >= n

    def _values(self, e: Experience):
        return {
            "u": e.u,
            "x": e.x,
            "a": e.a,
            "r": e.r,
            "u_next": e.u_next,
            "x_next": e.x_next,
            "terminal": e.terminal,
        }

    def _grow(self, values) -> None:
        new_size = min(self.capacity, max(1024, 2 * self._allocated))
        for name, value in values.items():
            if value is None:
                continue
            shape = np.shape(value)
            dtype = np.bool_ if name == "terminal" else np.float64
            column = np.zeros((new_size,) + shape, dtype=dtype)
            if name in self._columns:
                column[: self._allocated] = self._columns[name]
            self._columns[name] = column
        self._allocated = new_size

    def _check_shapes(self, values) -> None:
        shapes = {name: np.shape(value) for name, value in values.items() if value is not None}
        if shapes["u"] != shapes["u_next"] or shapes.get("x") != shapes.get("x_next"):
            raise DimensionError(f"current and next items differ in shape: {shapes}")
        for name, shape in shapes.items():
            if name in self._columns and self._columns[name].shape[1:] != shape:
                raise DimensionError(
                    f"{name} has shape {shape}, buffer stores {self._columns[name].shape[1:]}"
                )

    def push(self, e: Experience) -> None:
        """Append ``e``, evicting the oldest experience at capacity."""
        has_features = e.x is not None
        if (e.x_next is not None) != has_features:
            raise DimensionError("experience needs both x and x_next or neither")
        if self.has_features is None:
            self.has_features = has_features
        elif has_features != self.has_features:
            raise DimensionError("experience features must be present for all items or none")
        values = self._values(e)
        self._check_shapes(values)
        if self._idx >= self._allocated:
            self._grow(values)
        for name, value in values.items():
            if value is not None:
                self._columns[name][self._idx] = value
        self._idx = (self._idx + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def items(self) -> List[Experience]:
        """Contents from oldest to newest."""
        start = self._idx if self.size == self.capacity else 0
        order = [(start + i) % self.capacity for i in range(self.size)]
        return [self._experience(i) for i in order]

    def _experience(self, i: int) -> Experience:
        c = self._columns
        return Experience(
            u=c["u"][i].copy(),
            x=c["x"][i].copy() if self.has_features else None,
            a=c["a"][i].copy(),
            r=float(c["r"][i]),
            u_next=c["u_next"][i].copy(),
            x_next=c["x_next"][i].copy() if self.has_features else None,
            terminal=bool(c["terminal"][i]),
        )

    def gather(self, indices: np.ndarray) -> Batch:
        c = self._columns
        return Batch(
            u=c["u"][indices],
            x=c["x"][indices] if self.has_features else None,
            a=c["a"][indices],
            r=c["r"][indices],
            u_next=c["u_next"][indices],
            x_next=c["x_next"][indices] if self.has_features else None,
            terminal=c["terminal"][indices],
        )


def push(buffer: ReplayBuffer, e: Experience) -> None:
    buffer.push(e)


def sample(buffer: ReplayBuffer, n: int, rng: RngStream) -> Batch:
    """``n`` uniform draws with replacement from the current contents.

    Raises
    ------
    InsufficientExperience
        While the buffer holds fewer than ``n`` experiences.
    """
    if not buffer.ready(n):
        raise InsufficientExperience(f"buffer holds {len(buffer)} experiences, batch needs {n}")
    return buffer.gather(rng.integers(len(buffer), n))


@dataclasses.dataclass(frozen=True)
class Td3Hyper:
    gamma: float = 0.95
    tau: float = 0.05
    policy_delay: int = 2
    batch_size: int = 64
    buffer_size: int = 10**6
    critic_lr: float = 5e-4
    actor_lr: Optional[float] = None
    target_noise_std: float = 0.2
    target_noise_clip: float = 1.0
    critic_sees_reservoir: bool = False
    bootstrap_timeouts: bool = True
    critic_hidden: Sequence[int] = (32, 32)

    def __post_init__(self) -> None:
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidConfig(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidConfig(f"tau must be in (0, 1], got {self.tau}")
        if self.policy_delay < 1 or self.batch_size < 1 or self.buffer_size < 1:
            raise InvalidConfig(f"policy_delay, batch_size and buffer_size must be >= 1: {self}")
        if self.critic_lr < 0 or (self.actor_lr is not None and self.actor_lr < 0):
            raise InvalidConfig("learning rates must be >= 0")


def default_actor_lr(cfg: ActorConfig) -> float:
    """Readout actors learn at 5e-4, MLP actors at 1.6e-5."""
    return 5e-4 if cfg.kind.uses_features else 1.6e-5


@dataclasses.dataclass
class Td3Learner:
    actor: ActorParams
    critics: List[MlpParams]
    target_actor: ActorParams
    target_critics: List[MlpParams]
    actor_opt: AdamState
    critic_opts: List[AdamState]
    hyper: Td3Hyper
    smoothing: GaussianNoiseSpec
    n_actions: int
    step: int = 0

    def tensors(self) -> Tensors:
        """Every online and target tensor, for hashing and snapshots."""
        out = list(self.actor.tensors()) + list(self.target_actor.tensors())
        for net in self.critics + self.target_critics:
            out.extend(net.tensors())
        return out


def critic_input(u: np.ndarray, x: Optional[np.ndarray], a: np.ndarray, sees_reservoir: bool) -> np.ndarray:
    """``[u; a]`` or ``[u; x; a]`` rows."""
    parts = [u, x, a] if sees_reservoir else [u, a]
    return np.concatenate(parts, axis=-1)


def create_learner(
    actor_cfg: ActorConfig,
    hyper: Td3Hyper,
    n_inputs: int,
    n_actions: int,
    n_features: int,
    rng: RngStream,
) -> Td3Learner:
    """Online actor and twin critics with exact target copies.

    Target smoothing is on only when the actor explores with external noise.
    """
    if hyper.critic_sees_reservoir and not actor_cfg.kind.uses_features:
        raise InvalidConfig(f"{actor_cfg.kind.value} actor has no reservoir state for the critic")
    actor = init_actor_params(actor_cfg, n_inputs, n_actions, n_features, rng)
    critic_in = n_inputs + n_actions + (n_features if hyper.critic_sees_reservoir else 0)
    sizes = (critic_in,) + hyper.critic_hidden + (1,)
    activations = [Activation.RELU] * len(hyper.critic_hidden) + [Activation.LINEAR]
    critics = [init_mlp(sizes, activations, rng) for _ in range(2)]
    actor_lr = default_actor_lr(actor_cfg) if hyper.actor_lr is None else hyper.actor_lr
    smoothing = GaussianNoiseSpec(
        action_std=actor_cfg.action_noise_std,
        target_std=hyper.target_noise_std if actor_cfg.explores_with_noise else 0.0,
        target_clip=hyper.target_noise_clip,
    )
    return Td3Learner(
        actor=actor,
        critics=critics,
        target_actor=actor.copy(),
        target_critics=[c.copy() for c in critics],
        actor_opt=init_adam(actor.tensors(), actor_lr),
        critic_opts=[init_adam(c.tensors(), hyper.critic_lr) for c in critics],
        hyper=hyper,
        smoothing=smoothing,
        n_actions=n_actions,
    )


def critic_targets(learner: Td3Learner, batch: Batch, rng: RngStream) -> np.ndarray:
    """Clipped double-Q regression targets.

    The target actor reads the stored next reservoir state ``x'``; terminal
    items bootstrap nothing.
    """
    hyper = learner.hyper
    next_actions = policy_forward(learner.target_actor, batch.u_next, batch.x_next)
    if learner.smoothing.target_std > 0:
        noise = target_smoothing_noise(learner.smoothing, rng, next_actions.shape)
        next_actions = np.clip(next_actions + noise, -1.0, 1.0)
    q_in = critic_input(batch.u_next, batch.x_next, next_actions, hyper.critic_sees_reservoir)
    q1 = mlp_forward(learner.target_critics[0], q_in)[0][:, 0]
    q2 = mlp_forward(learner.target_critics[1], q_in)[0][:, 0]
    bootstrap = np.where(batch.terminal, 0.0, hyper.gamma * np.minimum(q1, q2))
    return batch.r + bootstrap


def update_critics(learner: Td3Learner, batch: Batch, targets: np.ndarray) -> float:
    """One Adam step per critic on the mean squared error to ``targets``.

    Returns
    -------
    float
        Pre-update loss of the first critic.
    """
    q_in = critic_input(batch.u, batch.x, batch.a, learner.hyper.critic_sees_reservoir)
    n = len(batch)
    losses = []
    for critic, opt in zip(learner.critics, learner.critic_opts):
        out, cache = mlp_forward(critic, q_in)
        diff = out[:, 0] - targets
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise NumericError(f"non-finite critic loss at learner step {learner.step}")
        grads, _ = mlp_backward(critic, cache, (2.0 / n) * diff[:, None])
        adam_step(opt, critic.tensors(), grads.tensors())
        losses.append(loss)
    return losses[0]


def ascend_actor(
    learner: Td3Learner, u: np.ndarray, x: Optional[np.ndarray], action_grad: np.ndarray
) -> None:
    """Adam ascent on the actor along dJ/dAction (critics untouched)."""
    grads = policy_backward(learner.actor, u, x, action_grad)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError(f"non-finite actor gradient at learner step {learner.step}")
    adam_step(learner.actor_opt, learner.actor.tensors(), [-g for g in grads])


def update_actor(learner: Td3Learner, batch: Batch) -> float:
    """Deterministic policy gradient step on ``mean Q1(s, mu(s))``.

    Returns
    -------
    float
        The objective before the update.
    """
    sees = learner.hyper.critic_sees_reservoir
    actions = policy_forward(learner.actor, batch.u, batch.x)
    q_in = critic_input(batch.u, batch.x, actions, sees)
    q, cache = mlp_forward(learner.critics[0], q_in)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise NumericError(f"non-finite actor objective at learner step {learner.step}")
    n = len(batch)
    _, input_grad = mlp_backward(learner.critics[0], cache, np.full_like(q, 1.0 / n))
    ascend_actor(learner, batch.u, batch.x, input_grad[:, -learner.n_actions :])
    return objective


def polyak(learner: Td3Learner, tau: float) -> None:
    """``theta' <- tau * theta + (1 - tau) * theta'`` for every target tensor."""
    pairs = list(zip(learner.actor.tensors(), learner.target_actor.tensors()))
    for online, target in zip(learner.critics, learner.target_critics):
        pairs.extend(zip(online.tensors(), target.tensors()))
    for online, target in pairs:
        target[...] = tau * online + (1.0 - tau) * target


@dataclasses.dataclass(frozen=True)
class StepMetrics:
    step: int
    critic_loss: float
    actor_objective: Optional[float]


def train_step(
    learner: Td3Learner, buffer: ReplayBuffer, replay_rng: RngStream, smoothing_rng: RngStream
) -> Optional[StepMetrics]:
    """Sample, fit the critics, and on every ``policy_delay``-th step update
    the actor and the targets. Returns ``None`` while the buffer is too small.
    """
    hyper = learner.hyper
    if not buffer.ready(hyper.batch_size):
        return None
    batch = sample(buffer, hyper.batch_size, replay_rng)
    targets = critic_targets(learner, batch, smoothing_rng)
    loss = update_critics(learner, batch, targets)
    learner.step += 1
    objective = None
    if learner.step % hyper.policy_delay == 0:
        objective = update_actor(learner, batch)
        polyak(learner, hyper.tau)
    return StepMetrics(learner.step, loss, objective)


def params_digest(learner: Td3Learner) -> str:
    """SHA-256 over every online and target tensor."""
    h = hashlib.sha256()
    for t in learner.tensors():
        h.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
    return h.hexdigest()
