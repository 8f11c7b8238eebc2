"""Stain separation for IHC images.

Intensities and optical densities follow Beer-Lambert: ``od = -log10(I/i0)``,
so per-stain optical densities add linearly and an image decomposes into
hematoxylin / eosin / DAB concentrations through a 3x3 stain matrix whose
rows are the unit OD vectors of the three stains.

Conventions fixed here and relied on throughout the package:

* reference intensity ``i0`` defaults to 255;
* intensities are floored at 0.5 of a level before the log, which keeps OD
  finite at intensity 0 while leaving nonzero levels essentially untouched;
* ``od_to_rgb`` rounds half-up, so results are bit-stable across platforms;
* concentrations from :func:`separate_stains` are signed (deconvolution noise
  can be negative); :func:`isolate_channel` clamps the kept channel at zero
  before recomposing, because negative concentrations recompose to
  intensities above ``i0``.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import SingularMatrixError
from .validation import check_rgb_image, is_quantized

__all__ = [
    "RUIFROK_HED_RGB",
    "DEFAULT_I0",
    "OD_INTENSITY_FLOOR",
    "CHANNELS",
    "channel_index",
    "default_stain_matrix",
    "normalize_stain_matrix",
    "check_stain_matrix",
    "load_stain_matrix",
    "stain_matrix_inverse",
    "rgb_to_od",
    "od_to_rgb",
    "od_to_intensity",
    "separate_stains",
    "compose",
    "isolate_channel",
]

DEFAULT_I0 = 255.0

# Intensity floor applied before the log (in 8-bit levels).
OD_INTENSITY_FLOOR = 0.5

# Ruifrok-Johnston H-E-DAB stain vectors (rows: H, E, D; columns: R, G, B).
# The de-facto default in histopathology tooling; row-normalized at load.
RUIFROK_HED_RGB = np.array(
    [
        [0.650, 0.704, 0.286],
        [0.072, 0.990, 0.105],
        [0.268, 0.570, 0.776],
    ]
)

CHANNELS = ("H", "E", "D")
_CHANNEL_INDEX = {"H": 0, "E": 1, "D": 2}

_MAX_CONDITION = 100.0


def channel_index(channel: str) -> int:
    """Row index of a stain channel given as 'H', 'E' or 'D'."""
    try:
        return _CHANNEL_INDEX[channel.upper()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown stain channel {channel!r}, expected one of {CHANNELS}")


def normalize_stain_matrix(matrix) -> np.ndarray:
    """Return a copy of ``matrix`` with rows scaled to unit Euclidean norm."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"stain matrix must be 3x3, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(m)):
        raise SingularMatrixError("stain matrix has a zero or non-finite row")
    return m / norms


def check_stain_matrix(matrix) -> np.ndarray:
    """Validate row norms and conditioning; returns the matrix as float64."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"stain matrix must be 3x3, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < 0.99) or np.any(norms > 1.01):
        raise ValueError(
            f"stain matrix rows must be unit vectors (norms {norms}); "
            "call normalize_stain_matrix first"
        )
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) >= _MAX_CONDITION:
        raise SingularMatrixError("stain matrix is singular or ill-conditioned")
    return m


def default_stain_matrix() -> np.ndarray:
    return normalize_stain_matrix(RUIFROK_HED_RGB)


def load_stain_matrix(path) -> np.ndarray:
    """Load a stain matrix override from a JSON file.

    The file holds a ``"stain_matrix"`` key with a 3x3 row-major array,
    rows in H, E, D order. Rows are normalized to unit length.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "stain_matrix" not in doc:
        raise ValueError(f"{path}: no 'stain_matrix' key")
    return check_stain_matrix(normalize_stain_matrix(doc["stain_matrix"]))


def stain_matrix_inverse(matrix) -> np.ndarray:
    """Inverse used by deconvolution, with the conditioning check applied."""
    m = check_stain_matrix(matrix)
    return np.linalg.inv(m)


def rgb_to_od(img, i0: float = DEFAULT_I0) -> np.ndarray:
    """Convert intensities to optical densities, ``-log10(max(I, 0.5)/i0)``.

    Accepts quantized or continuous images; output is float64 and
    nonnegative whenever intensities do not exceed ``i0``.
    """
    if i0 <= 0:
        raise ValueError("reference intensity i0 must be positive")
    arr = check_rgb_image(img).astype(np.float64, copy=False)
    return -np.log10(np.maximum(arr, OD_INTENSITY_FLOOR) / i0)


def od_to_intensity(od, i0: float = DEFAULT_I0) -> np.ndarray:
    """Continuous inverse of the OD transform (no rounding, no clamping)."""
    return i0 * np.power(10.0, -np.asarray(od, dtype=np.float64))


def od_to_rgb(od, i0: float = DEFAULT_I0) -> np.ndarray:
    """Convert optical densities back to a quantized 8-bit image.

    Rounds half-up and clamps to [0, 255].
    """
    inten = od_to_intensity(od, i0)
    return np.clip(np.floor(inten + 0.5), 0.0, 255.0).astype(np.uint8)


def separate_stains(img, matrix=None, i0: float = DEFAULT_I0) -> np.ndarray:
    """Decompose an RGB image into per-pixel (c_H, c_E, c_D) concentrations.

    Solves ``od = M^T c`` exactly per pixel. Concentrations are signed;
    callers that recompose should clamp (see :func:`isolate_channel`).
    """
    if matrix is None:
        matrix = default_stain_matrix()
    inv = stain_matrix_inverse(matrix)
    od = rgb_to_od(img, i0)
    return od @ inv


def compose(concentrations, matrix=None, i0: float = DEFAULT_I0) -> np.ndarray:
    """Forward model: concentrations -> OD -> quantized RGB image."""
    if matrix is None:
        matrix = default_stain_matrix()
    m = check_stain_matrix(matrix)
    conc = np.asarray(concentrations, dtype=np.float64)
    if conc.ndim < 1 or conc.shape[-1] != 3:
        raise ValueError(f"concentrations must have a trailing axis of 3, got {conc.shape}")
    return od_to_rgb(conc @ m, i0)


def isolate_channel(img, channel: str, matrix=None, i0: float = DEFAULT_I0) -> np.ndarray:
    """Reconstruct the image as if only one stain were present.

    Separates stains, keeps the requested channel clamped at >= 0, zeroes
    the other two, and recomposes. A quantized input yields a quantized
    uint8 image; a float input stays on the continuous intensity path.
    """
    if matrix is None:
        matrix = default_stain_matrix()
    m = check_stain_matrix(matrix)
    k = channel_index(channel)
    conc = separate_stains(img, m, i0)
    od = np.maximum(conc[..., k, None], 0.0) * m[k]
    if is_quantized(img):
        return od_to_rgb(od, i0)
    return od_to_intensity(od, i0)
