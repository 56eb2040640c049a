"""Deterministic image features: 8x8 box-average pooling plus color histograms.

The extractor ("hist-pool-v1") maps any RGB8 image to 216 numbers:

- 192 pooled values: the image is box-averaged onto an 8x8 grid per channel.
  Grid cell (r, c) covers the continuous pixel region
  y in [r*h/8, (r+1)*h/8), x in [c*w/8, (c+1)*w/8); pixels contribute with
  fractional coverage, so images smaller than the grid still average cleanly.
  Values are scaled to [0, 1]. Order: channel-major (all 64 red cells
  row-major, then green, then blue).
- 24 histogram values: per channel, an 8-bin histogram over pixel value
  (bin = value // 32), each channel normalized to sum 1. Order: red bins
  0..7, then green, then blue.

The concatenated 216-vector is L2-normalized. The output is a pure function
of the image bytes: byte-identical inputs give bit-identical features.
"""

from __future__ import annotations

import numpy as np

from .image import ImageBlob

EXTRACTOR_ID = "hist-pool-v1"
GRID = 8
HIST_BINS = 8
FEATURE_DIM = GRID * GRID * 3 + HIST_BINS * 3  # 216


def _coverage_weights(size: int) -> np.ndarray:
    """(GRID, size) fractional-overlap weights; each row sums to 1."""
    cell = size / GRID
    weights = np.zeros((GRID, size), dtype=np.float64)
    for g in range(GRID):
        lo, hi = g * cell, (g + 1) * cell
        first, last = int(np.floor(lo)), min(int(np.ceil(hi)), size)
        for px in range(first, last):
            overlap = min(hi, px + 1) - max(lo, px)
            if overlap > 0:
                weights[g, px] = overlap / cell
    return weights


def extract_features(blob: ImageBlob) -> np.ndarray:
    """216-dim L2-normalized feature vector for one image."""
    h, w = blob.height, blob.width
    img = np.frombuffer(blob.pixels, dtype=np.uint8).reshape(h, w, 3).astype(np.float64)

    rows = _coverage_weights(h)
    cols = _coverage_weights(w)
    pooled = np.empty((3, GRID, GRID), dtype=np.float64)
    for ch in range(3):
        pooled[ch] = rows @ img[:, :, ch] @ cols.T
    pool_block = (pooled / 255.0).reshape(-1)

    hist_block = np.empty((3, HIST_BINS), dtype=np.float64)
    bins = np.frombuffer(blob.pixels, dtype=np.uint8).reshape(-1, 3) >> 5
    for ch in range(3):
        hist_block[ch] = np.bincount(bins[:, ch], minlength=HIST_BINS)
    hist_block /= h * w

    vec = np.concatenate([pool_block, hist_block.reshape(-1)])
    return vec / np.linalg.norm(vec)
