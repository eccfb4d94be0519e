from collections.abc import Sequence
from typing import Literal

import numpy as np
from numpy.typing import NDArray

type FloatArray = NDArray[np.float64]
type ComplexArray = NDArray[np.complex128]
type JonesMatrix = NDArray[np.complex128]  # 2x2
type JonesVector = NDArray[np.complex128]  # (2,)

type Distances = Sequence[float]
type EstimationMode = Literal["local_estimation", "conventional"]
type Direction = Literal["forward", "backward"]
