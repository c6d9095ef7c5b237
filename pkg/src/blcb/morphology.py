"""Binary morphology and thick/thin vessel segregation.

Out-of-bounds pixels read as background (False) unless stated otherwise.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class StructuringElement:
    data: np.ndarray
    anchor: tuple

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2 or not data.any():
            raise ConfigError("structuring element needs at least one set cell")
        r, c = self.anchor
        if not (0 <= r < data.shape[0] and 0 <= c < data.shape[1]):
            raise ConfigError(f"anchor {self.anchor} outside {data.shape} element")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "anchor", (int(r), int(c)))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def offsets(self):
        """``(dr, dc)`` of every set cell relative to the anchor."""
        rr, cc = np.nonzero(self.data)
        return np.stack([rr - self.anchor[0], cc - self.anchor[1]], axis=1)

    def reflected(self):
        h, w = self.data.shape
        return StructuringElement(self.data[::-1, ::-1].copy(),
                                  (h - 1 - self.anchor[0], w - 1 - self.anchor[1]))

    def __eq__(self, other):
        return (isinstance(other, StructuringElement) and self.anchor == other.anchor
                and np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.tobytes(), self.data.shape, self.anchor))


def box(radius=1):
    n = 2 * radius + 1
    return StructuringElement(np.ones((n, n), bool), (radius, radius))


def cross(radius=1):
    n = 2 * radius + 1
    data = np.zeros((n, n), bool)
    data[radius, :] = True
    data[:, radius] = True
    return StructuringElement(data, (radius, radius))


def disk(radius=1):
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return StructuringElement(yy ** 2 + xx ** 2 <= radius ** 2, (radius, radius))


SHAPES = {"box": box, "cross": cross, "disk": disk}


def make_se(shape="box", radius=1):
    if shape not in SHAPES:
        raise ConfigError(f"unknown structuring element {shape!r}; choose from {sorted(SHAPES)}")
    if radius < 0:
        raise ConfigError("structuring element radius must be >= 0")
    return SHAPES[shape](radius)


def erode(mask, se, border_value=False):
    """True where every set SE cell, anchored at the pixel, lands on a set pixel."""
    return kernels.binary_erode(np.asarray(mask, bool), se.offsets(), border_value)


def dilate(mask, se):
    """True where the reflected SE, anchored at the pixel, hits a set pixel."""
    return kernels.binary_dilate(np.asarray(mask, bool), se.offsets())


def opening(mask, se):
    return dilate(erode(mask, se), se)


def segregate_vessels(gt, se=None):
    """Split a vessel mask into ``(thick, thin)``.

    ``thick`` is the opening of ``gt``; ``thin`` is what the opening removed.
    """
    se = se if se is not None else box(1)
    gt = np.asarray(gt, dtype=bool)
    thick = opening(gt, se)
    return thick, gt & ~thick
