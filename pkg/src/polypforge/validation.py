"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NotFittedError
from .manifest import ImageTile


def as_pixel_array(X) -> np.ndarray:
    """Coerce tiles or an array to a (N, H, W, 3) uint8 batch."""
    if isinstance(X, np.ndarray):
        arr = X
    elif len(X) > 0 and isinstance(X[0], ImageTile):
        arr = np.stack([t.pixels for t in X], axis=0)
    else:
        arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) pixels, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty pixel batch")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got dtype {arr.dtype}")
    return arr


def as_label_array(y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    if len(arr) != n:
        raise ValueError(f"{n} samples but {len(arr)} labels")
    return arr


def check_is_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first")


def check_fraction(value: float, field: str) -> float:
    """A fraction in (0, 1]; used for alpha and friends."""
    value = float(value)
    if not 0.0 < value <= 1.0:
        raise ConfigError(field, f"must lie in (0, 1], got {value}")
    return value


def check_positive_int(value, field: str, minimum: int = 1) -> int:
    try:
        ivalue = int(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f"must be an integer, got {value!r}") from None
    if ivalue < minimum:
        raise ConfigError(field, f"must be at least {minimum}, got {ivalue}")
    return ivalue
