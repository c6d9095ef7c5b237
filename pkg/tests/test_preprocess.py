import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blcb.errors import ConfigError
from blcb.preprocess import (
    PreprocessConfig,
    clahe,
    clip_histogram,
    gamma_correct,
    gcn,
    preprocess_gray,
    preprocess_image,
    tile_edges,
    tile_luts,
)

unit_images = arrays(np.float64, st.tuples(st.integers(8, 20), st.integers(8, 20)),
                     elements=st.floats(0, 1))


def gcn_oracle(values):
    """Scalar-loop z-score followed by min-max rescaling."""
    n = len(values)
    mean = sum(values) / n
    std = (sum((v - mean) ** 2 for v in values) / n) ** 0.5
    z = [(v - mean) / max(std, 1e-8) for v in values]
    lo, hi = min(z), max(z)
    return [(v - lo) / (hi - lo) for v in z]


def test_gcn_examples():
    assert not gcn(np.full((3, 3), 0.7)).any()
    assert gcn(np.array([[0.2, 0.8]])).tolist() == [[0.0, 1.0]]
    out = gcn(np.array([[0.0, 0.5, 1.0]]))
    assert np.allclose(out, [[0.0, 0.5, 1.0]], atol=1e-15)
    z = (np.array([0.0, 0.5, 1.0]) - 0.5) / np.std([0.0, 0.5, 1.0])
    assert np.allclose(z, [-1.2247449, 0, 1.2247449])


def test_gcn_matches_scalar_oracle(rng):
    x = rng.random((5, 6))
    assert np.allclose(gcn(x).ravel(), gcn_oracle(list(x.ravel())), atol=1e-12)


def test_tile_edges_cover_image():
    e = tile_edges(565, 8)
    assert e[0] == 0 and e[-1] == 565 and np.all(np.diff(e) > 0)


def test_clahe_constant_image():
    out = clahe(np.full((32, 32), 0.3), PreprocessConfig())
    assert np.all(out == out[0, 0])


def test_clahe_two_levels_is_plain_equalization():
    img = np.full((16, 16), 0.25)
    img[:, 8:] = 0.75
    cfg = PreprocessConfig(clahe_tiles=(1, 1), clahe_clip=np.inf)
    out = clahe(img, cfg)
    # direct histogram equalization: CDF at each level
    levels = np.floor(img * 256).astype(int)
    cdf = np.cumsum(np.bincount(levels.ravel(), minlength=256)) / img.size
    assert np.allclose(out, cdf[levels])
    assert np.allclose(out[:, :8], 0.5) and np.allclose(out[:, 8:], 1.0)


def test_clip_histogram_respects_limit(rng):
    cfg = PreprocessConfig(clahe_tiles=(3, 4))
    img = rng.random((30, 41)) ** 3
    luts, idx, re, ce = tile_luts(img, cfg)
    for i in range(3):
        for j in range(4):
            tile = idx[re[i]:re[i + 1], ce[j]:ce[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(float)
            limit = cfg.clahe_clip * n / 256
            excess = np.maximum(hist - limit, 0).sum()
            clipped = clip_histogram(hist, limit)
            assert clipped.max() <= limit + excess / 256 + 1e-12
            assert clipped.sum() == pytest.approx(n)
            assert np.allclose(luts[i, j], np.clip(np.cumsum(clipped) / n, 0, 1))


def test_clahe_tile_grid_too_large():
    with pytest.raises(ConfigError):
        clahe(np.zeros((4, 4)), PreprocessConfig(clahe_tiles=(8, 8)))


def test_clahe_interpolation_at_tile_centres(rng):
    """At a tile centre pixel the output equals that tile's own LUT."""
    cfg = PreprocessConfig(clahe_tiles=(2, 2))
    img = rng.random((20, 20))
    luts, idx, _, _ = tile_luts(img, cfg)
    out = clahe(img, cfg)
    # centres of a 10-pixel tile sit at 4.5; pixel (0,0) is clamped to tile (0,0)
    assert out[0, 0] == pytest.approx(luts[0, 0, idx[0, 0]])
    assert out[19, 19] == pytest.approx(luts[1, 1, idx[19, 19]])


def test_gamma_examples():
    x = np.array([0.0, 0.25, 1.0])
    assert np.array_equal(gamma_correct(x, 1.0), x)
    assert gamma_correct(x, 2.0)[1] == pytest.approx(0.0625)
    assert gamma_correct(x, 0.3)[[0, 2]].tolist() == [0.0, 1.0]
    with pytest.raises(ConfigError):
        gamma_correct(x, 0)


def test_black_rgb_stays_black():
    assert not preprocess_image(np.zeros((32, 32, 3), np.uint8)).any()


def test_stage_order_matters(rng):
    cfg = PreprocessConfig()
    img = rng.random((40, 40))
    right = preprocess_gray(img, cfg)
    swapped = clahe(gamma_correct(gcn(img), cfg.gamma), cfg)
    assert not np.allclose(right, swapped)
    digest = hashlib.sha256(np.round(right, 12).tobytes()).hexdigest()
    assert digest == hashlib.sha256(np.round(preprocess_gray(img, cfg), 12).tobytes()).hexdigest()


def test_config_validation():
    for bad in (dict(gcn_epsilon=0), dict(clahe_tiles=(0, 2)), dict(clahe_clip=0.5),
                dict(clahe_bins=1), dict(gamma=-1)):
        with pytest.raises(ConfigError):
            PreprocessConfig(**bad).validate()


@settings(max_examples=40, deadline=None)
@given(unit_images)
def test_every_stage_preserves_unit_range(img):
    cfg = PreprocessConfig()
    for out in (gcn(img), clahe(img, cfg), gamma_correct(img, 0.8), preprocess_gray(img, cfg)):
        assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1


@settings(max_examples=40, deadline=None)
@given(unit_images)
def test_gcn_spans_unit_interval(img):
    out = gcn(img)
    if img.max() > img.min():
        assert out.min() == 0 and out.max() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.floats(0.1, 5))
def test_gamma_monotone(values, gamma):
    x = np.sort(np.array(values))
    assert np.all(np.diff(gamma_correct(x, gamma)) >= 0)
