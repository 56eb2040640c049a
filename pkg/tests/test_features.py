import math

import numpy as np
import pytest

from coml.features import FEATURE_DIM, GRID, HIST_BINS, extract_features
from coml.image import ImageBlob, solid_color

from conftest import make_image


def reference_features(blob: ImageBlob) -> list[float]:
    """Pure-Python second implementation of the extractor formula."""
    w, h = blob.width, blob.height
    px = blob.pixels

    def pixel(y, x, ch):
        return px[3 * (y * w + x) + ch]

    pool = []
    cell_h, cell_w = h / GRID, w / GRID
    for ch in range(3):
        for r in range(GRID):
            for c in range(GRID):
                y0, y1 = r * cell_h, (r + 1) * cell_h
                x0, x1 = c * cell_w, (c + 1) * cell_w
                acc = 0.0
                for y in range(int(math.floor(y0)), min(int(math.ceil(y1)), h)):
                    wy = min(y1, y + 1) - max(y0, y)
                    if wy <= 0:
                        continue
                    for x in range(int(math.floor(x0)), min(int(math.ceil(x1)), w)):
                        wx = min(x1, x + 1) - max(x0, x)
                        if wx <= 0:
                            continue
                        acc += wy * wx * pixel(y, x, ch)
                pool.append(acc / (cell_h * cell_w) / 255.0)
    hist = []
    for ch in range(3):
        counts = [0] * HIST_BINS
        for y in range(h):
            for x in range(w):
                counts[pixel(y, x, ch) >> 5] += 1
        hist.extend(c / (w * h) for c in counts)
    vec = pool + hist
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def test_uniform_midgray_pool_constant_hist_one_bin():
    blob = solid_color(32, 32, (128, 128, 128))
    vec = extract_features(blob)
    pool, hist = vec[:192], vec[192:]
    assert np.allclose(pool, pool[0])
    # value 128 lands in bin 4 of every channel
    expected_hist = np.zeros(24)
    expected_hist[[4, 12, 20]] = hist[4]
    assert np.allclose(hist, expected_hist)
    assert hist[4] > 0


def test_mirror_preserves_histogram_block(rng):
    blob = make_image(rng, 17, 9)
    arr = np.frombuffer(blob.pixels, dtype=np.uint8).reshape(9, 17, 3)
    mirrored = ImageBlob(17, 9, np.ascontiguousarray(arr[:, ::-1, :]).tobytes())
    a = extract_features(blob)
    b = extract_features(mirrored)
    # mirroring permutes pooled cells (same value multiset, same overall norm)
    # and leaves the histogram block untouched
    assert np.allclose(a[192:], b[192:], atol=1e-12)
    assert not np.allclose(a[:192], b[:192])


def test_matches_independent_reference_64x64(rng):
    blob = make_image(rng, 64, 64)
    mine = extract_features(blob)
    ref = np.array(reference_features(blob))
    assert np.allclose(mine, ref, atol=1e-12)


@pytest.mark.parametrize("size", [(1, 1), (5, 7), (13, 9), (8, 8), (31, 2)])
def test_matches_reference_odd_sizes(size, rng):
    w, h = size
    blob = make_image(rng, w, h)
    assert np.allclose(extract_features(blob), np.array(reference_features(blob)), atol=1e-12)


def test_unit_norm_and_finite(rng):
    for _ in range(20):
        blob = make_image(rng, rng.randrange(1, 40), rng.randrange(1, 40))
        vec = extract_features(blob)
        assert vec.shape == (FEATURE_DIM,)
        assert np.isfinite(vec).all()
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-9


def test_bit_identical_on_identical_bytes(rng):
    blob = make_image(rng, 24, 24)
    clone = ImageBlob(24, 24, bytes(blob.pixels))
    a, b = extract_features(blob), extract_features(clone)
    assert a.tobytes() == b.tobytes()
