"""End-to-end segmentation of one image and overlay rendering."""
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .morphology import cross, erode
from .nn.train import predict_proba
from .patching import extract_dense, reassemble
from .preprocess import PreprocessConfig, preprocess_image

DIM = 0.5
TP_COLOR = (0, 255, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 0, 255)


@dataclass
class SegmentationResult:
    prob_map: np.ndarray
    mask: np.ndarray
    threshold: float
    timings: dict = field(default_factory=dict)


def postprocess(binary, se=None, passes=1):
    se = se if se is not None else cross(1)
    out = np.asarray(binary, dtype=bool)
    for _ in range(passes):
        out = erode(out, se)
    return out


def segment_preprocessed(model, gray, threshold=0.5, post_se=None, erosion_passes=1,
                         batch_size=256, jobs=1, pad_mode="reflect"):
    """Classify every pixel of an already preprocessed ``[0, 1]`` image."""
    if not 0 < threshold < 1:
        raise ConfigError("eval.threshold must be in (0, 1)")
    if erosion_passes < 0:
        raise ConfigError("eval.erosion_passes must be >= 0")
    timings = {}
    t = time.perf_counter()
    h, w = gray.shape
    patches = extract_dense(gray, patch=model.cfg.input_size, pad_mode=pad_mode)
    timings["extract"] = time.perf_counter() - t
    t = time.perf_counter()
    probs = predict_proba(model, patches, batch_size=batch_size, jobs=jobs)
    timings["predict"] = time.perf_counter() - t
    t = time.perf_counter()
    prob_map = np.clip(reassemble(patches, w, h, probs), 0.0, 1.0)
    mask = postprocess(prob_map >= threshold, post_se, erosion_passes)
    timings["postprocess"] = time.perf_counter() - t
    return SegmentationResult(prob_map, mask, threshold, timings)


def segment(model, img, pre=None, threshold=0.5, post_se=None, erosion_passes=1,
            batch_size=256, jobs=1, pad_mode="reflect"):
    """RGB fundus image -> vessel probability map and post-processed mask."""
    t = time.perf_counter()
    gray = preprocess_image(img, pre or PreprocessConfig())
    elapsed = time.perf_counter() - t
    res = segment_preprocessed(model, gray, threshold, post_se, erosion_passes,
                               batch_size, jobs, pad_mode)
    res.timings = {"preprocess": elapsed, **res.timings}
    return res


def overlay(img, mask, gt=None):
    """Colour-coded mask over the dimmed source image.

    With ``gt``: true positives green, false positives red, false negatives
    blue.  Without: mask pixels green.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    mask = np.asarray(mask, dtype=bool)
    if img.shape[:2] != mask.shape or (gt is not None and np.shape(gt) != mask.shape):
        raise DimensionError("overlay inputs must share height and width")
    if img.dtype != np.uint8:
        img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    out = (img.astype(np.float64) * DIM).astype(np.uint8)
    if gt is None:
        out[mask] = TP_COLOR
        return out
    gt = np.asarray(gt, dtype=bool)
    out[mask & gt] = TP_COLOR
    out[mask & ~gt] = FP_COLOR
    out[~mask & gt] = FN_COLOR
    return out
