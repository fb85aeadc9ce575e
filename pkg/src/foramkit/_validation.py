"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np

from .exceptions import ConfigError


def as_unit_float(image, name="image"):
    """Return ``image`` as float64 scaled to [0, 1].

    8- and 16-bit integer inputs are divided by their full-scale value; float
    inputs must already lie in [0, 1].
    """
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    if arr.dtype == bool:
        return arr.astype(np.float64)
    if np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64, copy=False)
        if arr.size and (not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError(f"{name}: float values must lie in [0, 1]")
        return arr
    raise TypeError(f"{name}: unsupported dtype {arr.dtype}; expected uint8, uint16 or float")


def check_gray_image(image, name="image"):
    arr = as_unit_float(image, name)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: expected a 2-D grayscale image, got shape {arr.shape}")
    return arr


def check_rgb_image(image, name="image"):
    arr = as_unit_float(image, name)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name}: expected an (H, W, 3) RGB image, got shape {arr.shape}")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ConfigError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_probability(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be a probability in [0, 1], got {value!r}")
    return float(value)


def check_interval(value, name, lower_exclusive=None):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (low, high) pair, got {value!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must satisfy low <= high, got {value!r}")
    if lower_exclusive is not None and lo <= lower_exclusive:
        raise ConfigError(f"{name} lower bound must exceed {lower_exclusive}, got {lo}")
    return (lo, hi)
