"""Focal optical density (FOD) maps for single stain channels.

A stain channel isolated by :func:`ccpl.separation.isolate_channel` is
reduced to grayscale, converted to scalar optical density, then passed
through a thresholded power transform: values ``od**exponent`` are kept when
they exceed the threshold and set to zero otherwise. The power emphasizes
strongly stained regions (tumor membrane in DAB, dense chromatin in H); the
threshold removes background noise.

Grayscale uses BT.601 luma weights and is kept real-valued; re-quantizing to
8 bits before the log would add a second rounding error to the loss
pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .separation import DEFAULT_I0, OD_INTENSITY_FLOOR, default_stain_matrix, isolate_channel
from .validation import check_gray_image, check_rgb_image

__all__ = ["LUMA_WEIGHTS", "FodParams", "to_grayscale", "gray_to_od", "compute_fod", "channel_fod"]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FodParams:
    """Threshold and exponent of the focal transform for one stain channel."""

    channel: str = "D"
    threshold: float = 0.15
    exponent: float = 1.8

    def __post_init__(self):
        if self.channel not in ("H", "D"):
            raise ValueError(f"FOD channel must be 'H' or 'D', got {self.channel!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.exponent <= 0:
            raise ValueError("exponent must be positive")


def to_grayscale(img) -> np.ndarray:
    """BT.601 luma, ``0.299 R + 0.587 G + 0.114 B``, as float64."""
    arr = check_rgb_image(img).astype(np.float64, copy=False)
    return arr @ np.asarray(LUMA_WEIGHTS)


def gray_to_od(gray, i0: float = DEFAULT_I0) -> np.ndarray:
    """Scalar optical density of a grayscale image."""
    if i0 <= 0:
        raise ValueError("reference intensity i0 must be positive")
    arr = check_gray_image(gray).astype(np.float64, copy=False)
    return -np.log10(np.maximum(arr, OD_INTENSITY_FLOOR) / i0)


def compute_fod(od, params: FodParams) -> np.ndarray:
    """Apply the focal transform: ``od**exponent`` where that exceeds the
    threshold, zero elsewhere (strict inequality, so the boundary maps to 0).
    """
    arr = np.asarray(od, dtype=np.float64)
    if arr.size and arr.min() < 0:
        raise ValueError("optical densities must be nonnegative")
    powered = np.power(arr, params.exponent)
    return np.where(powered > params.threshold, powered, 0.0)


def channel_fod(img, params: FodParams, matrix=None, i0: float = DEFAULT_I0) -> np.ndarray:
    """FOD map of one stain channel of an RGB image.

    Composition of isolate -> grayscale -> OD -> focal transform; equal to
    calling the four steps by hand.
    """
    if matrix is None:
        matrix = default_stain_matrix()
    isolated = isolate_channel(img, params.channel, matrix, i0)
    return compute_fod(gray_to_od(to_grayscale(isolated), i0), params)
