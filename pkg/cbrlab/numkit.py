import dataclasses
import hashlib
from typing import Optional, Tuple, Union

import numpy as np

from cbrlab.dtypes import Matrix
from cbrlab.exceptions import DimensionError
from cbrlab.log import get_logger
from cbrlab.settings import Settings

logger = get_logger(__name__)

Shape = Union[int, Tuple[int, ...], None]

_RESIDUAL_TOL = 1e-9


def _label_words(label: str) -> Tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


@dataclasses.dataclass(frozen=True)
class RngStream:
    """Deterministic random stream backed by a counter-based Philox generator.

    A stream is fully determined by ``seed`` and ``path``; derived streams
    only extend the path, so they never depend on how much of the parent
    has been consumed.
    """

    seed: int
    path: Tuple[int, ...] = ()
    _generator: np.random.Generator = dataclasses.field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        object.__setattr__(self, "_generator", np.random.Generator(np.random.Philox(sequence)))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Shape = None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, scale: float = 1.0, size: Shape = None) -> np.ndarray:
        return self._generator.normal(0.0, scale, size)

    def random(self, size: Shape = None) -> np.ndarray:
        return self._generator.random(size)

    def integers(self, high: int, size: Shape = None) -> np.ndarray:
        return self._generator.integers(0, high, size)


def make_stream(seed: int) -> RngStream:
    """Root stream of a run."""
    return RngStream(int(seed))


def derive_stream(root: RngStream, label: str) -> RngStream:
    """Derive a child stream for ``label``.

    Parameters
    ----------
    root : RngStream
        Parent stream.
    label : str
        Purpose of the child stream, e.g. ``"env"`` or ``"battery/3"``.

    Returns
    -------
    RngStream
        Deterministic child; distinct labels give independent streams.
    """
    if not label:
        raise ValueError("stream label must be nonempty")
    return RngStream(root.seed, root.path + _label_words(label))


def as_matrix(values) -> Matrix:
    """Validate and convert ``values`` to a 2-D float64 matrix with finite entries."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def _power_iteration(
    m: Matrix, max_iter: int, tol: float, start: np.ndarray
) -> Optional[float]:
    x = start / np.linalg.norm(start)
    previous = None
    for _ in range(max_iter):
        y = m @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            return None
        estimate = float(x @ y)
        x_next = y / y_norm
        if previous is not None and abs(estimate - previous) <= tol * max(abs(estimate), 1.0):
            residual = np.linalg.norm(m @ x_next - estimate * x_next)
            if residual <= _RESIDUAL_TOL * abs(estimate):
                return abs(estimate)
        previous = estimate
        x = x_next
    return None


def estimate_spectral_radius(
    m: Matrix,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> float:
    """Magnitude of the largest-magnitude eigenvalue of a square matrix.

    Power iteration with a Rayleigh-quotient estimate and a residual check.
    Dominant complex-conjugate or ``±λ`` pairs never converge under power
    iteration; those fall back to a dense eigensolver.

    Parameters
    ----------
    m : Matrix
        Square matrix with finite entries.
    max_iter : int, optional
        Iteration cap, ``Settings.POWER_ITERATION_MAX_ITER`` by default.
    tol : float, optional
        Relative tolerance between successive estimates.

    Returns
    -------
    float
        The spectral radius, 0 for the zero matrix.

    Raises
    ------
    DimensionError
        If ``m`` is not square.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {m.shape}")
    if not np.any(m):
        return 0.0
    max_iter = Settings.POWER_ITERATION_MAX_ITER if max_iter is None else max_iter
    tol = Settings.POWER_ITERATION_TOL if tol is None else tol

    # fixed start vector keeps the estimate a pure function of m
    start = np.linspace(1.0, 2.0, m.shape[0])
    radius = _power_iteration(m, max_iter, tol, start)
    if radius is not None:
        return radius
    logger.debug(f"power iteration did not converge for {m.shape}, using dense eigensolver")
    return float(np.max(np.abs(np.linalg.eigvals(m))))
