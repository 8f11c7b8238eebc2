"""PNG image input/output.

Input is restricted to 8-bit RGB PNG: one decode path keeps fixtures
bit-exact. Everything else is rejected with :class:`InputFormatError`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import InputFormatError
from .validation import check_rgb_image

__all__ = ["load_rgb_png", "save_rgb_png", "save_gray16_png"]


def load_rgb_png(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as a (H, W, 3) uint8 array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise InputFormatError(f"{path}: expected PNG, found {im.format or 'unknown'}")
            if im.mode != "RGB":
                raise InputFormatError(f"{path}: expected 8-bit RGB, found mode {im.mode}")
            return np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except InputFormatError:
        raise
    except Exception as exc:  # PIL raises various decode errors
        raise InputFormatError(f"{path}: cannot decode as PNG ({exc})") from exc


def save_rgb_png(img, path) -> None:
    arr = check_rgb_image(img)
    if arr.dtype != np.uint8:
        raise ValueError("save_rgb_png expects a quantized uint8 image")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_gray16_png(values, path) -> None:
    """Save a 2-D uint16 array as a 16-bit grayscale PNG."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ValueError("save_gray16_png expects a 2-D uint16 array")
    Image.fromarray(arr, mode="I;16").save(path, format="PNG")
