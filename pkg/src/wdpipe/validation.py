"""Argument-checking helpers used at public API boundaries."""

import numpy as np

from .errors import ShapeError


def as_image(image, channels=(1, 3), name="image") -> np.ndarray:
    """Coerce to a float64 channels-first array and check the channel count."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be a 3-d channels-first array, got shape {arr.shape}")
    if arr.shape[0] not in channels:
        raise ShapeError(
            f"{name} must have a channel count in {tuple(channels)}, got {arr.shape[0]}"
        )
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeError(f"{name} spatial dims must be positive, got {arr.shape}")
    return arr


def check_pixel_range(arr: np.ndarray, name="image") -> None:
    """Raw images must carry values in [0, 255]."""
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if lo < 0 or hi > 255:
        raise ValueError(f"{name} values must lie in [0, 255], got range [{lo}, {hi}]")


def check_finite(arr: np.ndarray, name="array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def as_frame_batch(frames, name="X") -> list[np.ndarray]:
    """Accept a 4-d array or a sequence of frames; return a list of images."""
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        return [as_image(frames[i], name=f"{name}[{i}]") for i in range(frames.shape[0])]
    return [as_image(f, name=f"{name}[{i}]") for i, f in enumerate(frames)]
