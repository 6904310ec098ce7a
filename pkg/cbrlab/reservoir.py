import dataclasses

import numpy as np

from cbrlab.dtypes import ReservoirState, Vector
from cbrlab.exceptions import DimensionError, InvalidConfig, ReservoirInitError
from cbrlab.log import get_logger
from cbrlab.numkit import RngStream, estimate_spectral_radius

logger = get_logger(__name__)


@dataclasses.dataclass(frozen=True)
class ReservoirConfig:
    """Echo state network shape and chaoticity.

    ``spectral_radius`` is the scale ``g`` applied to the unit-radius
    recurrent matrix.
    """

    n_units: int = 256
    n_inputs: int = 5
    connectivity: float = 0.1
    spectral_radius: float = 2.2
    input_scale: float = 0.5

    def __post_init__(self) -> None:
        if self.n_units < 1 or self.n_inputs < 1:
            raise InvalidConfig(f"reservoir needs n_units >= 1 and n_inputs >= 1, got {self}")
        if not 0.0 <= self.connectivity <= 1.0:
            raise InvalidConfig(f"connectivity must be in [0, 1], got {self.connectivity}")
        if self.spectral_radius < 0.0:
            raise InvalidConfig(f"spectral_radius must be >= 0, got {self.spectral_radius}")
        if self.input_scale < 0.0:
            raise InvalidConfig(f"input_scale must be >= 0, got {self.input_scale}")


@dataclasses.dataclass(frozen=True)
class ReservoirParams:
    w_rec: np.ndarray
    w_in: np.ndarray

    def __post_init__(self) -> None:
        self.w_rec.setflags(write=False)
        self.w_in.setflags(write=False)


def _draw_recurrent(cfg: ReservoirConfig, rng: RngStream) -> np.ndarray:
    w = rng.uniform(-1.0, 1.0, (cfg.n_units, cfg.n_units))
    mask = rng.random((cfg.n_units, cfg.n_units)) < cfg.connectivity
    return w * mask


def init_reservoir(cfg: ReservoirConfig, rng: RngStream) -> ReservoirParams:
    """Sparse random recurrent matrix normalized to unit spectral radius
    and a uniform input matrix.

    Parameters
    ----------
    cfg : ReservoirConfig
        Reservoir shape.
    rng : RngStream
        Fresh stream dedicated to reservoir construction.

    Raises
    ------
    ReservoirInitError
        If two consecutive draws have zero spectral radius.
    """
    for attempt in range(2):
        w = _draw_recurrent(cfg, rng)
        radius = estimate_spectral_radius(w)
        if radius > 0.0:
            break
        logger.warning(
            f"reservoir draw {attempt} has zero spectral radius "
            f"(n_units={cfg.n_units}, connectivity={cfg.connectivity})"
        )
    else:
        raise ReservoirInitError(
            f"could not draw a reservoir with nonzero spectral radius for {cfg}"
        )
    w_in = rng.uniform(-cfg.input_scale, cfg.input_scale, (cfg.n_units, cfg.n_inputs))
    logger.debug(f"reservoir drawn: {cfg.n_units} units, raw radius {radius:.4f}")
    return ReservoirParams(w_rec=w / radius, w_in=w_in)


def reservoir_step(
    params: ReservoirParams, cfg: ReservoirConfig, x_prev: ReservoirState, u: Vector
) -> ReservoirState:
    """``x = tanh(g * W_rec @ x_prev + W_in @ u)``."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x_prev.shape != (cfg.n_units,) or u.shape != (cfg.n_inputs,):
        raise DimensionError(
            f"reservoir step expects x{(cfg.n_units,)} and u{(cfg.n_inputs,)}, "
            f"got x{x_prev.shape} and u{u.shape}"
        )
    return np.tanh(cfg.spectral_radius * (params.w_rec @ x_prev) + params.w_in @ u)


def reset_state(cfg: ReservoirConfig) -> ReservoirState:
    return np.zeros(cfg.n_units)
