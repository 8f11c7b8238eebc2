"""Image feature vectors and the feature-distillation loss.

Real deployments extract embeddings with a pathology foundation model; this
package only consumes such features. Two sources are supported:

* feature files written by :func:`save_features` (any dimension, e.g.
  1536-dim tiles exported elsewhere);
* :func:`toy_extract`, a deterministic 46-dim summary extractor used by the
  CLI and the fitting objective, so the whole pipeline runs with no model.

The distillation loss blends a cosine term (scale-free direction agreement)
with a squared-L2 term.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagicError,
    DimensionMismatchError,
    ManifestMismatchError,
    TruncatedFileError,
)
from .fod import to_grayscale
from .validation import check_feature_pair, check_rgb_image

__all__ = [
    "TOY_FEATURE_DIM",
    "FdConfig",
    "FeatureSet",
    "toy_extract",
    "cosine_similarity",
    "feature_distillation_loss",
    "save_features",
    "load_features",
]

TOY_FEATURE_DIM = 46

_MAGIC = b"CCF1"
_N_INTENSITY_BINS = 8
_POOL_GRID = 4


@dataclass(frozen=True)
class FdConfig:
    """Weight of the cosine term in the distillation loss (rest goes to L2)."""

    cosine_weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.cosine_weight <= 1.0:
            raise ValueError("cosine_weight must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """A batch of feature vectors with their image identifiers."""

    features: np.ndarray  # (n, dim) float32
    ids: tuple[str, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-D (n, dim) array, got {feats.shape}")
        if feats.shape[1] < 1:
            raise ValueError("feature dimension must be positive")
        if len(self.ids) != feats.shape[0]:
            raise ValueError("identifier list length must match the feature count")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _pool_bounds(length: int, cells: int) -> tuple[np.ndarray, np.ndarray]:
    # Floor-spaced cell boundaries; images narrower than the grid repeat
    # edge rows/cols so every cell stays nonempty.
    edges = (np.arange(cells + 1) * length) // cells
    starts = np.minimum(edges[:-1], length - 1)
    ends = np.maximum(edges[1:], starts + 1)
    return starts, ends


def toy_extract(img) -> np.ndarray:
    """Deterministic 46-dim feature vector of an RGB image.

    Concatenates, in fixed order: per-channel means (3), per-channel
    population standard deviations (3), per-channel 8-bin intensity
    histograms each normalized to sum 1 (24), and a 4x4 average-pooled
    BT.601 luma divided by 255 (16).
    """
    arr = check_rgb_image(img).astype(np.float64, copy=False)
    n_pixels = arr.shape[0] * arr.shape[1]

    means = arr.mean(axis=(0, 1))
    stds = arr.std(axis=(0, 1))

    # 8 bins of width 32 over the 8-bit range; float intensities bin by floor
    bin_idx = np.clip(np.floor(arr / 32.0).astype(np.intp), 0, _N_INTENSITY_BINS - 1)
    hists = [
        np.bincount(bin_idx[..., c].ravel(), minlength=_N_INTENSITY_BINS) / n_pixels
        for c in range(3)
    ]

    luma = to_grayscale(arr) / 255.0
    rs, re = _pool_bounds(arr.shape[0], _POOL_GRID)
    cs, ce = _pool_bounds(arr.shape[1], _POOL_GRID)
    pooled = np.empty((_POOL_GRID, _POOL_GRID))
    for i in range(_POOL_GRID):
        for j in range(_POOL_GRID):
            pooled[i, j] = luma[rs[i] : re[i], cs[j] : ce[j]].mean()

    return np.concatenate([means, stds, *hists, pooled.ravel()])


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two feature vectors, in [-1, 1].

    Returns 0 when either vector has zero norm, so downstream losses stay
    finite instead of propagating NaN.
    """
    fa, fb = check_feature_pair(a, b)
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(fa @ fb / (na * nb), -1.0, 1.0))


def feature_distillation_loss(f_g, f_r, cfg: FdConfig | None = None) -> tuple[float, dict]:
    """Blend of ``1 - cos`` and squared L2 between two feature vectors.

    Returns the blended loss and a breakdown with both terms.
    """
    cfg = cfg or FdConfig()
    fa, fb = check_feature_pair(f_g, f_r)
    l_cos = 1.0 - cosine_similarity(fa, fb)
    diff = fa - fb
    l_l2 = float(diff @ diff)
    beta = cfg.cosine_weight
    return beta * l_cos + (1.0 - beta) * l_l2, {"cosine": l_cos, "l2": l_l2}


def save_features(fs: FeatureSet, path) -> None:
    """Write a feature set: binary matrix plus a JSON identifier manifest.

    Layout: magic ``CCF1``, u32-le count, u32-le dim, then count*dim
    little-endian float32 values row-major. The manifest lives next to the
    file at ``<path>.json`` and holds the ordered identifier array.
    """
    path = Path(path)
    payload = fs.features.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", fs.count, fs.dim))
        fh.write(payload)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(list(fs.ids), fh)


def load_features(path) -> FeatureSet:
    """Read a feature set written by :func:`save_features`."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(_MAGIC) or blob[: len(_MAGIC)] != _MAGIC:
        raise BadMagicError(f"{path}: not a feature file (bad magic)")
    header_end = len(_MAGIC) + 8
    if len(blob) < header_end:
        raise TruncatedFileError(f"{path}: header cut short")
    n, dim = struct.unpack("<II", blob[len(_MAGIC) : header_end])
    if dim == 0:
        raise ValueError(f"{path}: feature dimension 0 in header")
    expected = header_end + 4 * n * dim
    if len(blob) != expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for {n}x{dim} features, found {len(blob)}"
        )
    feats = np.frombuffer(blob, dtype="<f4", offset=header_end).reshape(n, dim)

    manifest_path = Path(str(path) + ".json")
    if not manifest_path.exists():
        raise ManifestMismatchError(f"{manifest_path}: manifest file missing")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    if not isinstance(ids, list) or len(ids) != n:
        raise ManifestMismatchError(
            f"{manifest_path}: manifest lists {len(ids) if isinstance(ids, list) else '?'} "
            f"identifiers for {n} features"
        )
    return FeatureSet(features=feats.copy(), ids=tuple(ids))
