"""Input validation helpers for the array-facing estimator API."""

from __future__ import annotations

import numpy as np

from .data import TARGET_SIDE
from .errors import DomainError, ShapeError
from .tensor import DTYPE


def check_images(x, channels: int | None = None) -> np.ndarray:
    """Coerce to float32 [N,C,90,90] in [0,1]; [N,90,90] means 1 channel."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4:
        raise ShapeError(
            f"expected images [N,C,{TARGET_SIDE},{TARGET_SIDE}] or "
            f"[N,{TARGET_SIDE},{TARGET_SIDE}], got {x.shape}")
    if x.shape[1] not in (1, 3):
        raise ShapeError(f"channel count must be 1 or 3, got {x.shape[1]}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(
            f"expected {channels}-channel images, got {x.shape[1]}")
    if x.shape[2:] != (TARGET_SIDE, TARGET_SIDE):
        raise ShapeError(
            f"images must be {TARGET_SIDE}x{TARGET_SIDE}, got {x.shape[2:]}")
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(x)):
        raise DomainError("images contain non-finite values")
    if x.min() < 0 or x.max() > 1:
        raise DomainError(
            f"pixel values must lie in [0,1], got range "
            f"[{x.min():.4g}, {x.max():.4g}]")
    return x


def check_labels(y, n: int, num_classes: int = 3) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"labels must be shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(y)
        if not np.all(rounded == y):
            raise DomainError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise DomainError(
            f"labels must lie in 0..{num_classes - 1}, got range "
            f"[{y.min()}, {y.max()}]")
    return y
