"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numpy as np


class URGRError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(URGRError, ValueError):
    pass


class NotFound(URGRError, LookupError):
    pass


class TrainingDiverged(URGRError, RuntimeError):
    pass


def check_image(img, *, name="img", channels=None, copy=False) -> np.ndarray:
    """Validate an image array and return it as float64 ``(H, W, C)``.

    2-D inputs are promoted to a single channel. Values must be finite and
    lie in ``[0, 1]``.
    """
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidArgument(f"{name} must be rank-3 (H, W, C), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgument(f"{name} has an empty spatial dimension: {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise InvalidArgument(f"{name} must have {channels} channels, got {arr.shape[2]}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise InvalidArgument(f"{name} must be a float array in [0, 1], got dtype {arr.dtype}")
    arr = arr.astype(np.float64, copy=copy)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgument(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")


def check_image_batch(X, *, name="X", channels=3) -> np.ndarray:
    """Validate a stack of images ``(N, H, W, C)`` with values in ``[0, 1]``."""
    arr = np.asarray(X)
    if arr.ndim == 3 and channels == 3 and arr.shape[-1] == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise InvalidArgument(f"{name} must have shape (N, H, W, C), got {arr.shape}")
    if len(arr) == 0:
        raise InvalidArgument(f"{name} is empty")
    if arr.shape[-1] != channels:
        raise InvalidArgument(f"{name} must have {channels} channels, got {arr.shape[-1]}")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgument(f"{name} values must be finite and lie in [0, 1]")
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0
