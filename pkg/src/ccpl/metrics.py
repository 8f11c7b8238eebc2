"""Full-reference image quality metrics and the Frechet feature distance.

PSNR and PCC operate on all channels jointly; SSIM follows the original
single-channel definition and is evaluated on BT.601 luma with the standard
11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03, dynamic range 255),
averaged over valid window positions only. ``1 - ssim`` doubles as the
structural term of the fitting objective.

The Frechet distance is computed between caller-supplied feature sets (this
package does not ship a network): Gaussians are fitted with the unbiased
covariance estimator and the matrix square root uses a symmetric
eigendecomposition with negative eigenvalues clamped to zero, which keeps
rank-deficient small sets well-defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .exceptions import (
    DimensionMismatchError,
    ImageTooSmallError,
    TooFewSamplesError,
    ZeroVarianceError,
)
from .features import FeatureSet
from .fod import to_grayscale
from .validation import check_same_shape

__all__ = [
    "MetricsReport",
    "mse",
    "psnr",
    "ssim",
    "ssim_kernel",
    "windowed",
    "ssim_from_moments",
    "pcc",
    "frechet_distance",
]

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_DYNAMIC_RANGE = 255.0

_EIG_CLAMP = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    """One pair's metric values; ``psnr`` is ``math.inf`` for identical images."""

    psnr: float
    ssim: float
    pcc: float
    frechet: float | None = None


def mse(a, b) -> float:
    """Mean squared error over all channels and pixels."""
    check_same_shape(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are equal."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(_DYNAMIC_RANGE**2 / err))


def ssim_kernel() -> np.ndarray:
    """The normalized 11-tap Gaussian (sigma 1.5) used by :func:`ssim`."""
    x = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-window local sums over the last two axes, valid region only.

    Separable correlation; keeping only the interior makes the padding mode
    irrelevant. Accepts (H, W) or batched (..., H, W) arrays.
    """
    r = kernel.size // 2
    out = correlate1d(img, kernel, axis=-2, mode="constant")
    out = correlate1d(out, kernel, axis=-1, mode="constant")
    return out[..., r:-r, r:-r]


def ssim_from_moments(mu_x, mu_y, var_x, var_y, cov_xy) -> np.ndarray:
    """SSIM map means from windowed moments; batched over leading axes."""
    c1 = (_SSIM_K1 * _DYNAMIC_RANGE) ** 2
    c2 = (_SSIM_K2 * _DYNAMIC_RANGE) ** 2
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return ssim_map.mean(axis=(-2, -1))


def ssim(a, b) -> float:
    """Mean structural similarity between two RGB images on the luma channel."""
    check_same_shape(a, b)
    x = to_grayscale(a)
    y = to_grayscale(b)
    if min(x.shape) < _SSIM_WINDOW:
        raise ImageTooSmallError(
            f"image sides {x.shape} are smaller than the {_SSIM_WINDOW}px SSIM window"
        )
    kernel = ssim_kernel()
    mu_x = windowed(x, kernel)
    mu_y = windowed(y, kernel)
    # E[x^2] - mu^2 form; x == y makes numerator and denominator bitwise equal
    var_x = windowed(x * x, kernel) - mu_x * mu_x
    var_y = windowed(y * y, kernel) - mu_y * mu_y
    cov_xy = windowed(x * y, kernel) - mu_x * mu_y
    return float(ssim_from_moments(mu_x, mu_y, var_x, var_y, cov_xy))


def pcc(a, b) -> float:
    """Pearson correlation over flattened all-channel intensities."""
    check_same_shape(a, b)
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx == 0.0 or ny == 0.0:
        raise ZeroVarianceError("Pearson correlation needs non-constant images")
    return float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))


def _as_feature_matrix(fs) -> np.ndarray:
    if isinstance(fs, FeatureSet):
        return fs.features.astype(np.float64)
    arr = np.asarray(fs, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected an (n, dim) feature matrix, got shape {arr.shape}")
    return arr


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Square root of a (nearly) PSD symmetric matrix by eigendecomposition."""
    sym = (mat + mat.T) / 2.0
    w, v = np.linalg.eigh(sym)
    w = np.where(w < _EIG_CLAMP, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a, b) -> float:
    """Frechet distance between the Gaussian fits of two feature sets.

    ``||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`` with
    unbiased covariances. Accepts FeatureSet objects or raw (n, dim) arrays.
    """
    fa = _as_feature_matrix(a)
    fb = _as_feature_matrix(b)
    if fa.shape[1] != fb.shape[1]:
        raise DimensionMismatchError(
            f"feature dimensions differ: {fa.shape[1]} vs {fb.shape[1]}"
        )
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise TooFewSamplesError("need at least two samples per set to fit a covariance")

    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(fa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(fb, rowvar=False))

    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)

    diff = mu_a - mu_b
    dist = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    # clamping makes the exact value nonnegative; drop float residue
    return max(dist, 0.0)
