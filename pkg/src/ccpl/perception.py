"""Dual-channel perception loss over FOD statistics.

A FOD map is summarized by three statistics: its global mean, per-block
means over a fixed grid partition, and a histogram whose bins accumulate the
FOD values falling in them (not counts) divided by the pixel count. The
channel-level loss is the squared difference of the global means plus the
mean squared difference of block means plus the mean squared difference of
histogram bins. The dual loss blends the hematoxylin and DAB channel losses
with a convex weight.

Zero-FOD background pixels take part in every mean and land in bin 0; the
loss therefore also penalizes staining where the reference has none.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigMismatchError, DimensionMismatchError, DimensionTooSmallError
from .fod import FodParams, channel_fod
from .separation import DEFAULT_I0, default_stain_matrix
from .validation import check_gray_image

__all__ = [
    "DcpConfig",
    "ChannelStats",
    "block_starts",
    "bin_edges",
    "weighted_bin_sums",
    "channel_stats",
    "channel_perception_loss",
    "dual_perception_loss",
]


@dataclass(frozen=True)
class DcpConfig:
    """Block partition, histogram binning and channel weighting."""

    block_grid: tuple[int, int] = (8, 8)
    n_bins: int = 32
    hist_range: tuple[float, float] = (0.0, 2.0**1.8)
    h_weight: float = 0.1  # weight of the H channel in the dual loss

    def __post_init__(self):
        rows, cols = self.block_grid
        if rows < 1 or cols < 1:
            raise ValueError("block grid must have at least one row and column")
        if self.n_bins < 1:
            raise ValueError("need at least one histogram bin")
        lo, hi = self.hist_range
        if not lo < hi:
            raise ValueError("histogram range must satisfy lo < hi")
        if not 0.0 <= self.h_weight <= 1.0:
            raise ValueError("h_weight must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """The (global mean, block means, histogram) triple of one FOD map."""

    global_mean: float
    block_means: np.ndarray
    hist: np.ndarray
    bin_edges: np.ndarray
    block_grid: tuple[int, int]


def block_starts(length: int, blocks: int) -> np.ndarray:
    """Start offsets of equal blocks of ``length // blocks`` pixels.

    Remainder pixels are folded into the last block of the axis.
    """
    base = length // blocks
    if base == 0:
        raise DimensionTooSmallError(
            f"cannot split {length} pixels into {blocks} nonempty blocks"
        )
    return np.arange(blocks) * base


def bin_edges(cfg: DcpConfig) -> np.ndarray:
    lo, hi = cfg.hist_range
    return np.linspace(lo, hi, cfg.n_bins + 1)


def weighted_bin_sums(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-bin sums of the values themselves (not counts).

    Bin i covers ``edges[i] <= v < edges[i+1]``; the last bin is closed at
    the top; values outside the range contribute nothing. ``values`` may be
    (n,) or batched (B, n); the result is (n_bins,) or (B, n_bins).
    """
    flat = values.reshape(-1)
    n_bins = edges.size - 1
    idx = np.searchsorted(edges, flat, side="right") - 1
    inside = (flat >= edges[0]) & (flat <= edges[-1])
    np.clip(idx, 0, n_bins - 1, out=idx)
    weights = np.where(inside, flat, 0.0)
    if values.ndim == 2:
        batch = values.shape[0]
        offsets = np.repeat(np.arange(batch) * n_bins, values.shape[1])
        sums = np.bincount(idx + offsets, weights=weights, minlength=batch * n_bins)
        return sums.reshape(batch, n_bins)
    return np.bincount(idx, weights=weights, minlength=n_bins)


def channel_stats(fod, cfg: DcpConfig) -> ChannelStats:
    """Summary statistics of a FOD map under the given partition/binning."""
    arr = check_gray_image(fod).astype(np.float64, copy=False)
    h, w = arr.shape
    rows, cols = cfg.block_grid
    rstarts = block_starts(h, rows)
    cstarts = block_starts(w, cols)

    row_sums = np.add.reduceat(arr, rstarts, axis=0)
    sums = np.add.reduceat(row_sums, cstarts, axis=1)
    rsizes = np.diff(np.append(rstarts, h))
    csizes = np.diff(np.append(cstarts, w))
    block_means = sums / np.outer(rsizes, csizes)

    edges = bin_edges(cfg)
    return ChannelStats(
        global_mean=float(arr.mean()),
        block_means=block_means.ravel(),
        hist=weighted_bin_sums(arr.ravel(), edges) / arr.size,
        bin_edges=edges,
        block_grid=cfg.block_grid,
    )


def channel_perception_loss(g: ChannelStats, r: ChannelStats) -> float:
    """Squared-difference loss between two stat triples (symmetric, >= 0)."""
    if g.block_grid != r.block_grid or g.hist.size != r.hist.size:
        raise ConfigMismatchError("channel statistics use different partitions")
    if not np.array_equal(g.bin_edges, r.bin_edges):
        raise ConfigMismatchError("channel statistics use different histogram edges")
    loss = (g.global_mean - r.global_mean) ** 2
    loss += float(np.mean((g.block_means - r.block_means) ** 2))
    loss += float(np.mean((g.hist - r.hist) ** 2))
    return loss


def dual_perception_loss(
    gen,
    real,
    cfg: DcpConfig | None = None,
    fod_h: FodParams | None = None,
    fod_d: FodParams | None = None,
    matrix=None,
    i0: float = DEFAULT_I0,
) -> tuple[float, dict]:
    """Dual-channel perception loss between a generated and a real image.

    Returns the blended loss ``h_weight * L_H + (1 - h_weight) * L_D`` and a
    breakdown dict with the two channel losses.
    """
    cfg = cfg or DcpConfig()
    fod_h = fod_h or FodParams(channel="H")
    fod_d = fod_d or FodParams(channel="D")
    if matrix is None:
        matrix = default_stain_matrix()
    gen_a, real_a = np.asarray(gen), np.asarray(real)
    if gen_a.shape != real_a.shape:
        raise DimensionMismatchError(f"image shapes differ: {gen_a.shape} vs {real_a.shape}")

    losses = {}
    for name, params in (("h", fod_h), ("d", fod_d)):
        s_gen = channel_stats(channel_fod(gen_a, params, matrix, i0), cfg)
        s_real = channel_stats(channel_fod(real_a, params, matrix, i0), cfg)
        losses[name] = channel_perception_loss(s_gen, s_real)
    total = cfg.h_weight * losses["h"] + (1.0 - cfg.h_weight) * losses["d"]
    return total, losses
