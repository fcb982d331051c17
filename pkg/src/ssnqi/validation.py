"""Input validation helpers shared by the simulators and estimators."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class DataError(ValueError):
    """Frame data that cannot be analysed (shape, format, empty illumination)."""


def check_stack_array(counts, *, allow_float: bool = True) -> np.ndarray:
    """Validate a (n_frames, height, width) array of nonnegative finite counts.

    Integer input keeps an int64 dtype; real input (e.g. after flat-fielding)
    is returned as float64.
    """
    arr = np.asarray(counts)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"expected a (frames, height, width) array, got shape {arr.shape}")
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.int64, copy=False)
    elif allow_float:
        arr = check_array(arr, allow_nd=True, dtype=np.float64, ensure_all_finite=True,
                          ensure_min_samples=1, ensure_min_features=1)
    else:
        raise DataError(f"integer counts required, got dtype {arr.dtype}")
    if arr.size == 0:
        raise DataError("empty frame stack")
    if arr.min() < 0:
        raise DataError("counts must be nonnegative")
    return arr


def check_probability(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_nonnegative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite number >= 0, got {value!r}")
    return float(value)


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return float(value)


def check_seed(seed) -> int:
    if not isinstance(seed, numbers.Integral) or isinstance(seed, bool) or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
    if seed >= 2**64:
        raise ValueError("seed must fit in 64 bits")
    return int(seed)


def check_same_frame_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise DataError(f"{what}: frame shapes {a.shape[-2:]} and {b.shape[-2:]} differ")
