import dataclasses
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from cbrlab.dtypes import Matrix, Row, Vector
from cbrlab.exceptions import DimensionError, ScheduleMismatch
from cbrlab.log import get_logger
from cbrlab.neural import ReadoutParams
from cbrlab.numkit import RngStream, make_stream
from cbrlab.reservoir import ReservoirConfig, ReservoirParams, reservoir_step

logger = get_logger(__name__)

DIVERGENCE_FLOOR = -20.0


@dataclasses.dataclass(frozen=True)
class WeightStats:
    """Per action unit mean ``|w|`` of the reservoir block and the bypass block."""

    reservoir_mean_abs: np.ndarray
    bypass_mean_abs: np.ndarray

    @property
    def bypass_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.bypass_mean_abs / self.reservoir_mean_abs

    def rows(self, **labels) -> List[Row]:
        return [
            {**labels, "unit": i, "reservoir_mean_abs": float(r), "bypass_mean_abs": float(b)}
            for i, (r, b) in enumerate(zip(self.reservoir_mean_abs, self.bypass_mean_abs))
        ]


def weight_stats(readout: ReadoutParams) -> WeightStats:
    w = np.abs(readout.w_out)
    n = readout.n_features
    reservoir = w[:, :n].mean(axis=1) if n else np.zeros(readout.n_outputs)
    bypass = w[:, n:].mean(axis=1) if readout.n_inputs else np.zeros(readout.n_outputs)
    return WeightStats(reservoir, bypass)


@dataclasses.dataclass(frozen=True)
class PcaResult:
    """Principal axes of a state cloud.

    ``components`` has orthonormal rows sorted by explained variance;
    ``projected`` holds the fitted states in input order.
    """

    components: Matrix
    explained_variance: np.ndarray
    mean: Vector
    total_variance: float
    projected: Matrix

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def explained_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def project(self, states) -> Matrix:
        """Project a time-ordered trajectory; row order is preserved."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.mean.shape[0]:
            raise DimensionError(f"states have width {states.shape[1]}, PCA was fitted on {self.mean.shape[0]}")
        return (states - self.mean) @ self.components.T

    def is_orthonormal(self, tol: float = 1e-8) -> bool:
        gram = self.components @ self.components.T
        return bool(np.max(np.abs(gram - np.eye(self.k))) < tol)


def pca_fit(states, k: int = 2) -> PcaResult:
    """Mean-centred PCA through a thin SVD.

    Parameters
    ----------
    states : array-like
        One state per row, e.g. every reservoir state recorded during test
        batteries.
    k : int
        Number of components kept.

    Raises
    ------
    DimensionError
        If ``k`` exceeds the state dimension or fewer than ``k + 1`` states
        are given.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D state matrix, got shape {x.shape}")
    n, dim = x.shape
    if k < 1 or k > dim:
        raise DimensionError(f"k must be in [1, {dim}], got {k}")
    if n < k + 1:
        raise DimensionError(f"need at least {k + 1} states for {k} components, got {n}")
    mean = x.mean(axis=0)
    centred = x - mean
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:k].copy()
    # sign convention: largest-magnitude loading positive
    signs = np.sign(components[np.arange(k), np.argmax(np.abs(components), axis=1)])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    variances = s**2 / (n - 1)
    total = float(np.sum(centred**2) / (n - 1))
    return PcaResult(
        components=components,
        explained_variance=variances[:k],
        mean=mean,
        total_variance=total,
        projected=centred @ components.T,
    )


def _inputs_for(inputs, length: int, n_inputs: int) -> np.ndarray:
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim == 1:
        u = np.broadcast_to(u, (length, u.shape[0]))
    if u.shape[0] < length or u.shape[1] != n_inputs:
        raise DimensionError(f"need {length} inputs of width {n_inputs}, got {u.shape}")
    return u


def divergence_probe(
    params: ReservoirParams,
    cfg: ReservoirConfig,
    inputs,
    delta0: float = 1e-8,
    horizon: int = 100,
    washout: int = 100,
    n_perturbations: int = 10,
    rng: Optional[RngStream] = None,
) -> float:
    """Finite-time Lyapunov proxy of the driven reservoir.

    A reference rollout is washed out from a random state; each perturbed
    copy starts ``delta0`` away, is stepped alongside it under the same
    inputs and renormalised back to ``delta0`` every step. The mean log growth
    per step is returned, floored at ``DIVERGENCE_FLOOR``.

    Parameters
    ----------
    inputs : array-like
        One input vector (held constant) or a sequence of at least
        ``washout + horizon`` vectors.
    """
    if delta0 <= 0 or horizon < 1 or n_perturbations < 1:
        raise ValueError("delta0, horizon and n_perturbations must be positive")
    rng = make_stream(0) if rng is None else rng
    u = _inputs_for(inputs, washout + horizon, cfg.n_inputs)
    x = rng.uniform(-0.5, 0.5, cfg.n_units)
    for t in range(washout):
        x = reservoir_step(params, cfg, x, u[t])
    start = x
    rates = []
    for _ in range(n_perturbations):
        direction = rng.normal(1.0, cfg.n_units)
        x, y = start, start + delta0 * direction / np.linalg.norm(direction)
        log_growth = 0.0
        for t in range(washout, washout + horizon):
            x = reservoir_step(params, cfg, x, u[t])
            y = reservoir_step(params, cfg, y, u[t])
            d = float(np.linalg.norm(y - x))
            if d == 0.0:
                log_growth += DIVERGENCE_FLOOR
                y = x + delta0 * direction / np.linalg.norm(direction)
                continue
            log_growth += np.log(d / delta0)
            y = x + (y - x) * (delta0 / d)
        rates.append(log_growth / horizon)
    rate = max(float(np.mean(rates)), DIVERGENCE_FLOOR)
    logger.debug(f"divergence probe at g={cfg.spectral_radius}: {rate:.4f} per step")
    return rate


def aggregate_curves(records: Sequence) -> pd.DataFrame:
    """Across-seed mean and population std of battery means.

    ``records`` are run records (anything with ``seed`` and ``batteries``
    whose items carry ``training_step`` and ``mean_steps``). The lowest seed is
    the representative curve, so record order never matters. Failed runs stop
    early, so they are left out of the curve and counted in ``failed_seeds``.

    Raises
    ------
    ScheduleMismatch
        If the complete records were tested at different training steps, or
        every run failed.
    """
    if not records:
        raise ValueError("no records to aggregate")
    failed = [r.seed for r in records if getattr(r, "failed", False)]
    if failed:
        logger.warning(f"leaving failed seeds {sorted(failed)} out of the curves")
    ordered = sorted((r for r in records if not getattr(r, "failed", False)), key=lambda r: r.seed)
    if not ordered:
        raise ScheduleMismatch(f"every run failed (seeds {sorted(failed)}), no curve to aggregate")
    schedule = [b.training_step for b in ordered[0].batteries]
    for record in ordered[1:]:
        other = [b.training_step for b in record.batteries]
        if other != schedule:
            raise ScheduleMismatch(
                f"seed {record.seed} was tested at {other}, seed {ordered[0].seed} at {schedule}"
            )
    means = np.array([[b.mean_steps for b in r.batteries] for r in ordered], dtype=np.float64)
    return pd.DataFrame(
        {
            "battery": np.arange(len(schedule)),
            "training_step": schedule,
            "mean_steps": means.mean(axis=0),
            "std_steps": means.std(axis=0, ddof=0),
            "representative_seed": ordered[0].seed,
            "representative_steps": means[0],
            "seeds": len(ordered),
            "failed_seeds": len(failed),
        }
    )
