"""Green-channel enhancement chain: GCN -> CLAHE -> gamma correction."""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .imageio import extract_channel


@dataclass
class PreprocessConfig:
    gcn_epsilon: float = 1e-8
    clahe_tiles: tuple = (8, 8)
    clahe_clip: float = 2.0
    clahe_bins: int = 256
    gamma: float = 0.8

    def __post_init__(self):
        self.clahe_tiles = tuple(int(t) for t in self.clahe_tiles)

    def validate(self):
        if not self.gcn_epsilon > 0:
            raise ConfigError("preprocess.gcn_epsilon must be > 0")
        if len(self.clahe_tiles) != 2 or min(self.clahe_tiles) < 1:
            raise ConfigError("preprocess.clahe_tiles must be two counts >= 1")
        if not self.clahe_clip >= 1.0:
            raise ConfigError("preprocess.clahe_clip must be >= 1.0")
        if self.clahe_bins < 2:
            raise ConfigError("preprocess.clahe_bins must be >= 2")
        if not self.gamma > 0:
            raise ConfigError("preprocess.gamma must be > 0")
        return self

    def to_dict(self):
        d = asdict(self)
        d["clahe_tiles"] = list(self.clahe_tiles)
        return d


def gcn(img, epsilon=1e-8):
    """Global contrast normalization followed by a min-max rescale to [0, 1].

    A constant image has no contrast to normalize and maps to all zeros.
    """
    x = np.asarray(img, dtype=np.float64)
    z = (x - x.mean()) / max(x.std(), epsilon)
    lo, hi = z.min(), z.max()
    if hi == lo:
        return np.zeros_like(x)
    return np.clip((z - lo) / (hi - lo), 0.0, 1.0)


def tile_edges(length, tiles):
    """Boundaries splitting ``length`` pixels into ``tiles`` near-equal runs."""
    return np.floor(np.arange(tiles + 1) * length / tiles + 0.5).astype(int)


def clip_histogram(hist, limit):
    """Clip every bin at ``limit`` and spread the excess evenly over all bins."""
    hist = np.asarray(hist, dtype=np.float64)
    if not np.isfinite(limit):
        return hist.copy()
    excess = np.maximum(hist - limit, 0.0).sum()
    return np.minimum(hist, limit) + excess / hist.size


def tile_luts(img, cfg):
    """Per-tile equalization lookup tables, shape ``(rows, cols, bins)``.

    Also returns the bin index image and the tile edges used.
    """
    h, w = img.shape
    rows, cols = cfg.clahe_tiles
    if rows > h or cols > w:
        raise ConfigError(
            f"CLAHE tile grid {rows}x{cols} is larger than the {h}x{w} image")
    bins = cfg.clahe_bins
    idx = np.minimum((np.clip(img, 0.0, 1.0) * bins).astype(np.int64), bins - 1)
    re, ce = tile_edges(h, rows), tile_edges(w, cols)
    luts = np.empty((rows, cols, bins))
    for i in range(rows):
        for j in range(cols):
            tile = idx[re[i]:re[i + 1], ce[j]:ce[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins)
            clipped = clip_histogram(hist, cfg.clahe_clip * n / bins)
            luts[i, j] = np.cumsum(clipped) / n
    return np.clip(luts, 0.0, 1.0), idx, re, ce


def _interp_axis(length, edges):
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(length, dtype=np.float64)
    i0 = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 1)
    i1 = np.minimum(i0 + 1, len(centers) - 1)
    span = centers[i1] - centers[i0]
    with np.errstate(invalid="ignore", divide="ignore"):
        wgt = np.where(span > 0, (pos - centers[i0]) / np.where(span > 0, span, 1), 0.0)
    return i0, i1, np.clip(wgt, 0.0, 1.0)


def clahe(img, cfg):
    """Contrast-limited adaptive histogram equalization on a [0, 1] image.

    Each pixel is remapped through the four nearest tile LUTs with bilinear
    weights; pixels outside the outermost tile centres use the edge tiles.
    A constant image is returned unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    luts, idx, re, ce = tile_luts(img, cfg)
    if img.max() == img.min():
        return img.copy()
    h, w = img.shape
    r0, r1, wr = _interp_axis(h, re)
    c0, c1, wc = _interp_axis(w, ce)
    r0, r1, wr = r0[:, None], r1[:, None], wr[:, None]
    c0, c1, wc = c0[None, :], c1[None, :], wc[None, :]
    top = (1 - wc) * luts[r0, c0, idx] + wc * luts[r0, c1, idx]
    bottom = (1 - wc) * luts[r1, c0, idx] + wc * luts[r1, c1, idx]
    return np.clip((1 - wr) * top + wr * bottom, 0.0, 1.0)


def gamma_correct(img, gamma):
    if not gamma > 0:
        raise ConfigError("gamma must be > 0")
    return np.power(np.clip(img, 0.0, 1.0), gamma)


def preprocess_gray(green, cfg):
    return gamma_correct(clahe(gcn(green, cfg.gcn_epsilon), cfg), cfg.gamma)


def preprocess_image(img, cfg=None):
    """RGB fundus image -> enhanced green channel in [0, 1]."""
    cfg = (cfg or PreprocessConfig()).validate()
    return preprocess_gray(extract_channel(img, "green"), cfg)
