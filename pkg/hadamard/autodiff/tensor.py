from typing import Any

import numpy as np
from numpy.typing import NDArray

from hadamard.domain.exceptions import InvalidExtentError, NonFiniteValueError

Tensor = NDArray[np.float64]


def as_tensor(value: Any) -> Tensor:
    """Copy ``value`` into a read-only float64 array with positive extents and finite entries.

    Scalars become shape ``(1,)``.
    """
    array = np.array(value, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1)
    if any(extent <= 0 for extent in array.shape):
        raise InvalidExtentError(f"Tensor extents must be positive, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteValueError()
    array.setflags(write=False)
    return array
