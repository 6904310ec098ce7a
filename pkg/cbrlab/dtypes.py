import os
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np


FilePath = Union[str, os.PathLike]
Vector = np.ndarray
Matrix = np.ndarray
ReservoirState = np.ndarray
ActionVector = np.ndarray
Point = Tuple[float, float]
ConfigDict = Dict[str, Any]
Tensors = List[np.ndarray]
Row = Dict[str, Any]
AxisValues = Sequence[float]
