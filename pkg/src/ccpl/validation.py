"""Input validation helpers shared by the whole package.

Images are numpy arrays. Two kinds are accepted everywhere:

* integer arrays (normally uint8) holding quantized intensities in [0, 255];
* float arrays holding continuous intensities on the same 0..255 scale.

Float images exist so that the model-fitting objective can run on an
unquantized intensity path; every pipeline function preserves the kind of
image it was given (integer in, integer out).
"""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatchError

__all__ = [
    "as_float_image",
    "check_rgb_image",
    "check_gray_image",
    "check_same_shape",
    "check_feature_pair",
    "is_quantized",
]


def check_rgb_image(img) -> np.ndarray:
    """Validate an RGB image and return it as an ndarray (dtype untouched)."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    return arr


def check_gray_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) grayscale image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    return arr


def as_float_image(img) -> np.ndarray:
    """RGB image as float64, validated."""
    return check_rgb_image(img).astype(np.float64, copy=False)


def is_quantized(img) -> bool:
    """True when the array holds integer intensities (the quantized kind)."""
    return np.issubdtype(np.asarray(img).dtype, np.integer)


def check_same_shape(a, b) -> None:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def check_feature_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Validate two feature vectors and return them as 1-D float64 arrays."""
    fa = np.asarray(a, dtype=np.float64).ravel()
    fb = np.asarray(b, dtype=np.float64).ravel()
    if fa.size != fb.size:
        raise DimensionMismatchError(
            f"feature dimension mismatch: {fa.size} vs {fb.size}"
        )
    if fa.size == 0:
        raise ValueError("feature vectors must be non-empty")
    return fa, fb
