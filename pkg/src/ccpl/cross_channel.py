"""Nucleus-membrane cross-channel correlation and consistency loss.

The correlation of an image blends the squared L2 distance and the cosine
dissimilarity between its hematoxylin-channel and DAB-channel features into
one nonnegative scalar. The consistency loss then compares the correlation
of a generated image with that of the real image, again as an L2 term plus a
cosine term.

Cosine similarity between two nonnegative scalars is degenerate: it is 1
whenever both are positive (or both zero), so in that regime the loss
reduces exactly to the weighted squared difference. The zero-case convention
(exactly one correlation zero -> cosine 0) is fixed here so the loss stays
total. ``vector_mode`` keeps per-coordinate correlation vectors instead and
reduces only inside the final loss; it is a non-canonical variant, off by
default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import cosine_similarity, toy_extract
from .separation import DEFAULT_I0, default_stain_matrix, isolate_channel
from .validation import check_feature_pair, check_same_shape

__all__ = [
    "NmccConfig",
    "channel_correlation",
    "scalar_cosine",
    "cross_channel_consistency_loss",
    "reduce_correlation",
    "nmcc_loss",
]


@dataclass(frozen=True)
class NmccConfig:
    """Weights of the L2 terms inside the correlation and the loss."""

    l2_weight: float = 0.5  # L2 share inside the per-image correlation
    consistency_l2_weight: float = 0.5  # L2 share in the final loss
    vector_mode: bool = False

    def __post_init__(self):
        for name in ("l2_weight", "consistency_l2_weight"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def channel_correlation(f_h, f_d, cfg: NmccConfig | None = None):
    """Correlation between the H-channel and D-channel features of one image.

    Scalar mode returns ``w * ||f_H - f_D||^2 + (1 - w) * (1 - cos)``; vector
    mode returns the per-coordinate analogue with the cosine complement
    broadcast to every coordinate.
    """
    cfg = cfg or NmccConfig()
    fh, fd = check_feature_pair(f_h, f_d)
    w = cfg.l2_weight
    cos_term = 1.0 - cosine_similarity(fh, fd)
    if cfg.vector_mode:
        return w * (fh - fd) ** 2 + (1.0 - w) * cos_term
    diff = fh - fd
    return w * float(diff @ diff) + (1.0 - w) * cos_term


def scalar_cosine(a: float, b: float) -> float:
    """Cosine similarity of two scalars: their sign agreement.

    1 when both are nonzero with the same sign or both are zero, 0 when
    exactly one is zero, -1 for opposite signs.
    """
    if a == 0.0 and b == 0.0:
        return 1.0
    if a == 0.0 or b == 0.0:
        return 0.0
    return 1.0 if a * b > 0 else -1.0


def cross_channel_consistency_loss(r_g, r_r, cfg: NmccConfig | None = None) -> float:
    """Consistency loss between generated and real channel correlations.

    With scalar correlations both positive, the cosine term vanishes and the
    loss is exactly ``w * (R_g - R_r)^2``.
    """
    cfg = cfg or NmccConfig()
    w = cfg.consistency_l2_weight
    if cfg.vector_mode:
        rg, rr = check_feature_pair(r_g, r_r)
        diff = rg - rr
        return w * float(diff @ diff) + (1.0 - w) * (1.0 - cosine_similarity(rg, rr))
    rg, rr = float(r_g), float(r_r)
    return w * (rg - rr) ** 2 + (1.0 - w) * (1.0 - scalar_cosine(rg, rr))


def reduce_correlation(r) -> float:
    """Scalar summary of a correlation: itself, or the sum in vector mode."""
    if isinstance(r, np.ndarray):
        return float(r.sum())
    return float(r)


def nmcc_loss(
    gen,
    real,
    extractor=toy_extract,
    matrix=None,
    cfg: NmccConfig | None = None,
    i0: float = DEFAULT_I0,
) -> tuple[float, dict]:
    """Cross-channel consistency loss between two RGB images.

    Isolates the H and D channels of both images, extracts features with
    ``extractor``, computes both correlations and their consistency loss.
    The breakdown carries the generated and real correlations.
    """
    cfg = cfg or NmccConfig()
    check_same_shape(gen, real)
    if matrix is None:
        matrix = default_stain_matrix()
    corr = {}
    for name, img in (("r_gen", gen), ("r_real", real)):
        f_h = extractor(isolate_channel(img, "H", matrix, i0))
        f_d = extractor(isolate_channel(img, "D", matrix, i0))
        corr[name] = channel_correlation(f_h, f_d, cfg)
    loss = cross_channel_consistency_loss(corr["r_gen"], corr["r_real"], cfg)
    return loss, corr
