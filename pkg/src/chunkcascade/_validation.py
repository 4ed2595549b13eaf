"""Small input checks shared across modules."""

from __future__ import annotations

import math
from numbers import Real

import numpy as np


def check_probability(value, name: str) -> float:
    """Return ``value`` as a float, raising ``ValueError`` unless it lies in [0, 1]."""
    if isinstance(value, bool) or not isinstance(value, (Real, np.floating, np.integer)):
        raise ValueError(f"{name} must be a real number in [0, 1], got {value!r}")
    value = float(value)
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")
    return value


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_bool_grid(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be boolean")
        arr = arr.astype(bool)
    return arr


def safe_ratio(num: float, den: float) -> float | None:
    """``num / den`` or ``None`` (undefined) when the denominator is zero."""
    if den == 0:
        return None
    return num / den
