"""Input validation helpers shared by the model and the estimator."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_feature_array(x, channels: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a [batch, time, frequency, channel] feature array."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D [batch, time, freq, channel], got shape {x.shape}")
    if channels is not None and x.shape[3] != channels:
        raise ShapeError(f"{name} has {x.shape[3]} channels, expected {channels}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_roll_array(y, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Validate a (possibly batched) binary event-roll array."""
    y = np.asarray(y)
    if y.ndim not in (2, 3):
        raise ShapeError(f"{name} must be [time, class] or [batch, time, class], got {y.shape}")
    if n_classes is not None and y.shape[-1] != n_classes:
        raise ShapeError(f"{name} has {y.shape[-1]} classes, expected {n_classes}")
    if y.size and not np.isin(np.unique(y), (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return y


def check_same_leading(x: np.ndarray, y: np.ndarray, axis: int = 0) -> None:
    if x.shape[axis] != y.shape[axis]:
        raise ShapeError(f"inconsistent lengths along axis {axis}: {x.shape} vs {y.shape}")
