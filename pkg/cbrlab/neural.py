"""Small fixed-architecture networks with hand-written backpropagation.

All functions accept a single vector or a batch (rows are samples). Parameter
gradients of a batch are summed over rows; callers scale by ``1/N`` through
``output_grad``.
"""
import dataclasses
import enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cbrlab.dtypes import Tensors, Vector
from cbrlab.exceptions import DimensionError, NumericError
from cbrlab.numkit import RngStream

# largest float below 1.0; keeps readout actions inside the open interval
_ACTION_BOUND = float(np.nextafter(1.0, 0.0))


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    LINEAR = "linear"


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(kind: Activation, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if kind is Activation.TANH:
        return 1.0 - h * h
    return np.ones_like(z)


def _as_batch(values: Vector, width: int, what: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(values, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != width:
        raise DimensionError(f"{what}: expected width {width}, got shape {arr.shape}")
    return batch, single


@dataclasses.dataclass
class MlpParams:
    """Layer list of (weight, bias) with one activation tag per layer.

    Weights have shape ``(out, in)``.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[Activation]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations) > 0):
            raise DimensionError("weights, biases and activations must have equal nonzero length")
        self.activations = [Activation(a) for a in self.activations]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                    f"{self.weights[i - 1].shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self) -> Tensors:
        """Parameters in optimizer order ``[W0, b0, W1, b1, ...]`` (views)."""
        out: Tensors = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclasses.dataclass
class MlpCache:
    inputs: np.ndarray
    pre: List[np.ndarray]
    post: List[np.ndarray]
    single: bool


def init_mlp(
    sizes: Sequence[int], activations: Sequence[Activation], rng: RngStream
) -> MlpParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases.

    Parameters
    ----------
    sizes : Sequence[int]
        Layer widths including input and output, e.g. ``(7, 32, 32, 1)``.
    activations : Sequence[Activation]
        One tag per weight layer.
    rng : RngStream
        Initialization stream.
    """
    if len(sizes) - 1 != len(activations):
        raise DimensionError("need one activation per weight layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return MlpParams(weights, biases, list(activations))


def mlp_forward(p: MlpParams, inputs: Vector) -> Tuple[np.ndarray, MlpCache]:
    """Network output and the activation record needed by ``mlp_backward``."""
    batch, single = _as_batch(inputs, p.input_dim, "mlp input")
    h = batch
    pre, post = [], []
    for w, b, kind in zip(p.weights, p.biases, p.activations):
        z = h @ w.T + b
        h = _activate(kind, z)
        pre.append(z)
        post.append(h)
    out = h[0] if single else h
    return out, MlpCache(inputs=batch, pre=pre, post=post, single=single)


@dataclasses.dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def tensors(self) -> Tensors:
        out: Tensors = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def mlp_backward(
    p: MlpParams, cache: MlpCache, output_grad: Vector
) -> Tuple[MlpGrads, np.ndarray]:
    """Gradients of a scalar loss w.r.t. all parameters and the input.

    Parameters
    ----------
    p : MlpParams
        Parameters used in the matching forward call.
    cache : MlpCache
        Record returned by ``mlp_forward``.
    output_grad : Vector
        dLoss/dOutput with the same shape as the forward output.

    Returns
    -------
    (MlpGrads, np.ndarray)
        Parameter gradients (summed over the batch) and dLoss/dInput.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if cache.single else g
    if g.shape != cache.post[-1].shape:
        raise DimensionError(f"output grad {g.shape} does not match cache {cache.post[-1].shape}")
    n_layers = len(p.weights)
    w_grads: List[Optional[np.ndarray]] = [None] * n_layers
    b_grads: List[Optional[np.ndarray]] = [None] * n_layers
    for i in reversed(range(n_layers)):
        dz = g * _activation_grad(p.activations[i], cache.pre[i], cache.post[i])
        layer_input = cache.post[i - 1] if i > 0 else cache.inputs
        w_grads[i] = dz.T @ layer_input
        b_grads[i] = dz.sum(axis=0)
        g = dz @ p.weights[i]
    input_grad = g[0] if cache.single else g
    return MlpGrads(w_grads, b_grads), input_grad


@dataclasses.dataclass
class ReadoutParams:
    """Trained linear readout ``W_out`` of shape ``(N_o, N_x + N_i)``.

    The first ``n_features`` columns read the reservoir (or random layer),
    the remaining columns are the bypass from the observation.
    """

    w_out: np.ndarray
    n_features: int

    def __post_init__(self) -> None:
        if self.w_out.ndim != 2 or not 0 <= self.n_features <= self.w_out.shape[1]:
            raise DimensionError(f"bad readout shape {self.w_out.shape} for {self.n_features} features")

    @property
    def n_outputs(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w_out.shape[1] - self.n_features

    def tensors(self) -> Tensors:
        return [self.w_out]

    def copy(self) -> "ReadoutParams":
        return ReadoutParams(self.w_out.copy(), self.n_features)


def init_readout(n_outputs: int, n_features: int, n_inputs: int, rng: RngStream) -> ReadoutParams:
    bound = 1.0 / np.sqrt(n_features + n_inputs)
    return ReadoutParams(rng.uniform(-bound, bound, (n_outputs, n_features + n_inputs)), n_features)


def _readout_inputs(p: ReadoutParams, x: Vector, u: Vector) -> Tuple[np.ndarray, bool]:
    xb, single = _as_batch(x, p.n_features, "readout reservoir input")
    ub, _ = _as_batch(u, p.n_inputs, "readout bypass input")
    if xb.shape[0] != ub.shape[0]:
        raise DimensionError(f"batch sizes differ: {xb.shape[0]} vs {ub.shape[0]}")
    return np.concatenate([xb, ub], axis=1), single


def readout_forward(p: ReadoutParams, x: Vector, u: Vector) -> np.ndarray:
    """``tanh(W_out [x; u])``, strictly inside (-1, 1)."""
    c, single = _readout_inputs(p, x, u)
    z = np.clip(np.tanh(c @ p.w_out.T), -_ACTION_BOUND, _ACTION_BOUND)
    return z[0] if single else z


def readout_backward(p: ReadoutParams, x: Vector, u: Vector, action_grad: Vector) -> np.ndarray:
    """Gradient of a scalar loss through the tanh readout w.r.t. ``W_out``."""
    c, single = _readout_inputs(p, x, u)
    g = np.asarray(action_grad, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != (c.shape[0], p.n_outputs):
        raise DimensionError(f"action grad {g.shape} does not match {(c.shape[0], p.n_outputs)}")
    a = np.tanh(c @ p.w_out.T)
    return (g * (1.0 - a * a)).T @ c


@dataclasses.dataclass
class AdamState:
    lr: float
    m: List[np.ndarray]
    v: List[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def init_adam(params: Tensors, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        m=[np.zeros_like(t) for t in params],
        v=[np.zeros_like(t) for t in params],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(s: AdamState, params: Tensors, grads: Tensors) -> Tensors:
    """One bias-corrected Adam descent step, applied to ``params`` in place.

    Raises
    ------
    NumericError
        If any gradient is non-finite; nothing is updated in that case.
    """
    if len(params) != len(grads) or len(params) != len(s.m):
        raise DimensionError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, s.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient rejected by Adam")
    s.step += 1
    correction1 = 1.0 - s.beta1**s.step
    correction2 = 1.0 - s.beta2**s.step
    for p, g, m, v in zip(params, grads, s.m, s.v):
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * g * g
        p -= s.lr * (m / correction1) / (np.sqrt(v / correction2) + s.eps)
    return params


def pack_tensors(tensors: Tensors) -> List[Dict[str, Any]]:
    """Shape-headed flat float64 arrays for serialization."""
    return [{"shape": list(t.shape), "data": t.ravel().tolist()} for t in tensors]


def unpack_tensors(packed: List[Dict[str, Any]]) -> Tensors:
    return [np.asarray(item["data"], dtype=np.float64).reshape(item["shape"]) for item in packed]
