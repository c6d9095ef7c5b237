import numpy as np
import pytest

from blcb.errors import ConfigError, DimensionError
from blcb.metrics import confusion
from blcb.morphology import cross, erode
from blcb.nn.model import ModelConfig, build_model
from blcb.pipeline import FN_COLOR, FP_COLOR, TP_COLOR, overlay, postprocess, segment, segment_preprocessed


def tiny_model(seed=0):
    return build_model(ModelConfig(base_filters=2, fc_sizes=(4,), seed=seed))


def constant_model(p):
    m = tiny_model()
    out = next(l for l in m.layers if l.name == "out.dense")
    out.params["weight"][:] = 0
    out.params["bias"][:] = [0.0, np.log(p / (1 - p))]
    return m


def test_constant_model_gives_constant_map(rng):
    res = segment_preprocessed(constant_model(0.7), rng.random((9, 11)))
    assert res.prob_map.shape == (9, 11)
    assert np.allclose(res.prob_map, 0.7, atol=1e-6)
    # all-True mask loses its one-pixel border to the cross erosion (background outside)
    expect = np.zeros((9, 11), bool)
    expect[1:-1, 1:-1] = True
    assert np.array_equal(res.mask, expect)
    assert not segment_preprocessed(constant_model(0.3), rng.random((9, 11))).mask.any()


def test_prob_map_matches_direct_window(rng):
    m = tiny_model(1)
    img = rng.random((7, 6))
    res = segment_preprocessed(m, img, erosion_passes=0)
    padded = np.pad(img, ((32, 31), (32, 31)), mode="symmetric")
    for r, c in [(0, 0), (3, 2), (6, 5)]:
        win = padded[r:r + 64, c:c + 64]
        assert res.prob_map[r, c] == pytest.approx(m.forward(win[None])[0, 1], abs=1e-6)


def test_threshold_and_erosion(rng):
    m = tiny_model(2)
    img = rng.random((8, 8))
    raw = segment_preprocessed(m, img, erosion_passes=0)
    t = float(np.median(raw.prob_map))
    res = segment_preprocessed(m, img, threshold=t, erosion_passes=2)
    assert np.array_equal(res.mask, erode(erode(raw.prob_map >= t, cross(1)), cross(1)))
    assert set(res.timings) == {"extract", "predict", "postprocess"}


@pytest.mark.parametrize("kw", [dict(threshold=0.0), dict(threshold=1.0), dict(erosion_passes=-1)])
def test_bad_arguments(rng, kw):
    with pytest.raises(ConfigError):
        segment_preprocessed(tiny_model(), rng.random((4, 4)), **kw)


def test_segment_rgb_adds_preprocess_timing(rng):
    res = segment(tiny_model(), (rng.random((16, 16, 3)) * 255).astype(np.uint8))
    assert list(res.timings)[0] == "preprocess"
    assert res.mask.dtype == bool


def test_postprocess_default_is_one_cross_erosion(rng):
    m = rng.random((10, 10)) < 0.7
    assert np.array_equal(postprocess(m), erode(m, cross(1)))
    assert np.array_equal(postprocess(m, passes=0), m)


def test_overlay_colors_match_confusion(rng):
    img = (rng.random((20, 16, 3)) * 255).astype(np.uint8)
    mask, gt = rng.random((20, 16)) < 0.4, rng.random((20, 16)) < 0.3
    out = overlay(img, mask, gt)
    c = confusion(mask, gt)

    def count(color):
        return int(np.all(out == color, axis=2).sum())

    # dimmed pixels never exceed 127, so they cannot collide with a pure 255 colour
    assert out[~mask & ~gt].max() <= 127
    assert (count(TP_COLOR), count(FP_COLOR), count(FN_COLOR)) == (c.tp, c.fp, c.fn)
    assert np.array_equal(out[~mask & ~gt], (img[~mask & ~gt] * 0.5).astype(np.uint8))


def test_overlay_without_gt_and_gray_float(rng):
    mask = rng.random((5, 5)) < 0.5
    out = overlay(rng.random((5, 5)), mask)
    assert out.shape == (5, 5, 3) and out.dtype == np.uint8
    assert np.all(out[mask] == TP_COLOR)
    with pytest.raises(DimensionError):
        overlay(np.zeros((5, 4)), mask)
