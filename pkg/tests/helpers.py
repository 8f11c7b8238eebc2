"""Shared synthetic fixtures for the test suite."""

import numpy as np

import ccpl
from ccpl.fit import AffineOdModel


def blob_concentrations(shape, rng):
    """Stain concentration field that looks like an IHC patch: hematoxylin
    nuclei blobs, DAB membrane blobs, faint eosin background."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    c = np.zeros((h, w, 3))
    for _ in range(6):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(3, 8)
        c[..., 0] += rng.uniform(0.4, 0.9) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
    for _ in range(4):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(5, 12)
        c[..., 2] += rng.uniform(0.3, 0.8) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
    c[..., 1] = 0.05
    return c


def synthetic_ihc(shape, rng):
    """Quantized RGB patch composed from :func:`blob_concentrations`."""
    return ccpl.compose(blob_concentrations(shape, rng))


def checkerboard():
    """Fixed 8x8 two-color checkerboard with 2x2 cells (golden fixture)."""
    a_col = (200, 30, 60)
    b_col = (10, 220, 140)
    img = np.zeros((8, 8, 3), np.uint8)
    for r in range(8):
        for c in range(8):
            img[r, c] = a_col if ((r // 2) + (c // 2)) % 2 == 0 else b_col
    return img


FIT_TRUE_MODEL = AffineOdModel(
    np.array([[0.9, 0.05, 0.0], [0.0, 1.1, 0.05], [0.05, 0.0, 0.95]]),
    np.array([0.02, 0.0, 0.04]),
)


def fit_fixture_pairs(n_pairs=5, shape=(64, 64), seed=42):
    """Source patches plus targets produced by the known transfer model."""
    rng = np.random.default_rng(seed)
    sources = [synthetic_ihc(shape, rng) for _ in range(n_pairs)]
    return [(src, ccpl.apply_model(FIT_TRUE_MODEL, src)) for src in sources]
