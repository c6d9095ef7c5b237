"""PNG decoding/encoding and the three in-memory image representations.

Images are plain numpy arrays:

* RGB image   -- ``uint8`` array of shape ``(height, width, 3)``
* gray image  -- ``float64`` array of shape ``(height, width)`` with values in [0, 1]
* binary mask -- ``bool`` array of shape ``(height, width)``

Only 8-bit PNG is read.  DRIVE (.tif/.gif) and STARE (.ppm) files have to be
converted beforehand, e.g. with ``PIL.Image.open(src).save(dst)``.
"""
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError

CHANNELS = {"red": 0, "green": 1, "blue": 2}
MASK_THRESHOLD = 127

_MODE_PROBLEMS = {
    "1": "1-bit depth",
    "P": "palette",
    "PA": "palette with alpha",
    "LA": "alpha channel",
    "RGBA": "alpha channel",
    "I": "32-bit integer depth",
    "I;16": "16-bit depth",
    "I;16B": "16-bit depth",
    "F": "floating-point samples",
    "CMYK": "CMYK colour",
}


def _open_png(path):
    try:
        img = Image.open(path)
        fmt = img.format
        img.load()
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise DecodeError(f"{path}: not a decodable PNG ({exc})") from exc
    except OSError as exc:
        raise DecodeError(f"{path}: corrupt or truncated PNG ({exc})") from exc
    if fmt != "PNG":
        raise DecodeError(f"{path}: unsupported format {fmt}; convert to 8-bit PNG first")
    return img


def load_png(path):
    """Decode an 8-bit RGB or grayscale PNG into an ``(H, W, 3)`` uint8 array."""
    img = _open_png(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
        return np.repeat(arr[:, :, None], 3, axis=2)
    if img.mode == "RGB":
        return np.array(img, dtype=np.uint8)
    problem = _MODE_PROBLEMS.get(img.mode, f"mode {img.mode}")
    raise DecodeError(f"{path}: unsupported PNG feature: {problem}")


def extract_channel(img, channel="green"):
    """Pick one colour channel and scale it to [0, 1]."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {sorted(CHANNELS)}, got {channel!r}")
    return img[:, :, CHANNELS[channel]].astype(np.float64) / 255.0


def load_mask_png(path):
    """Read a ground-truth style mask: a pixel is set iff its luminance exceeds 127."""
    img = _open_png(path)
    if img.mode == "1":
        img = img.convert("L")
    if img.mode == "RGB":
        img = img.convert("L")
    if img.mode != "L":
        problem = _MODE_PROBLEMS.get(img.mode, f"mode {img.mode}")
        raise DecodeError(f"{path}: unsupported PNG feature: {problem}")
    return np.asarray(img, dtype=np.uint8) > MASK_THRESHOLD


def _check_dir(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory does not exist: {parent}")


def save_mask_png(mask, path):
    _check_dir(path)
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def to_bytes(img):
    """Quantize a [0, 1] image to 8 bits, rounding half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_gray_png(img, path):
    _check_dir(path)
    Image.fromarray(to_bytes(img), mode="L").save(path, format="PNG")


def save_rgb_png(img, path):
    _check_dir(path)
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def save_prob_png16(prob, path):
    """Write a probability map as 16-bit grayscale, value ``round(65535 * p)``."""
    _check_dir(path)
    data = np.floor(np.clip(prob, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(data).save(path, format="PNG")


def load_prob_png16(path):
    img = _open_png(path)
    if img.mode not in ("I;16", "I"):
        raise DecodeError(f"{path}: expected a 16-bit probability map, got mode {img.mode}")
    return np.asarray(img, dtype=np.float64) / 65535.0


def load_gray_png(path):
    """Read an 8-bit grayscale PNG back as a [0, 1] float image."""
    img = _open_png(path)
    if img.mode != "L":
        problem = _MODE_PROBLEMS.get(img.mode, f"mode {img.mode}")
        raise DecodeError(f"{path}: expected 8-bit grayscale, found {problem}")
    return np.asarray(img, dtype=np.float64) / 255.0
