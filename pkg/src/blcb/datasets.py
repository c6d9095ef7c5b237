"""Dataset indexes for DRIVE/STARE-style layouts and a synthetic fundus generator.

Expected layouts (all images PNG-converted)::

    DRIVE/
      training/{images,1st_manual,mask}/       21_training.png, 21_manual1.png, 21_training_mask.png
      test/{images,1st_manual,2nd_manual,mask}/ 01_test.png, 01_manual1.png, 01_manual2.png, 01_test_mask.png
    STARE/
      images/im0001.png  labels-ah/im0001.ah.png  labels-vk/im0001.vk.png

The first listed annotation of an entry is the gold standard.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DatasetError
from .morphology import box, dilate
from .imageio import (_open_png, load_gray_png, load_mask_png, load_png, save_gray_png,
                      save_mask_png, save_rgb_png)

log = logging.getLogger(__name__)

DRIVE_SPLITS = {"train": ("training", range(21, 41)), "test": ("test", range(1, 21))}
STARE_IDS = ("0001", "0002", "0003", "0004", "0005", "0044", "0077", "0081", "0082",
             "0139", "0162", "0163", "0235", "0236", "0239", "0240", "0255", "0291",
             "0319", "0324")
STARE_SHAPE = (605, 700)


@dataclass
class DatasetEntry:
    image_id: str
    image: str
    gts: list
    fov: str = None
    extra: dict = field(default_factory=dict)

    @property
    def gold(self):
        return self.gts[0]

    def load_image(self):
        return load_png(self.image)

    def load_gt(self, which=0):
        return load_mask_png(self.gts[which])

    def load_fov(self):
        return None if self.fov is None else load_mask_png(self.fov)


@dataclass
class DatasetIndex:
    name: str
    split: str
    entries: list
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self):
        return [e.image_id for e in self.entries]

    def get(self, image_id):
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)

    def to_dict(self):
        return {"name": self.name, "split": self.split, "warnings": list(self.warnings),
                "entries": [asdict(e) for e in self.entries]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["split"], [DatasetEntry(**e) for e in d["entries"]],
                   list(d.get("warnings", [])))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _require(paths, what):
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        shown = "\n  ".join(missing[:10])
        more = f"\n  ... and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise DatasetError(f"{what}: {len(missing)} file(s) missing:\n  {shown}{more}")


def load_drive(root, split="train"):
    """Index one DRIVE split; every expected file must be present."""
    if split not in DRIVE_SPLITS:
        raise ConfigError(f"dataset.split must be one of {sorted(DRIVE_SPLITS)} for DRIVE")
    sub, numbers = DRIVE_SPLITS[split]
    base = os.path.join(root, sub)
    if not os.path.isdir(base):
        raise DatasetError(f"DRIVE root {root!r} has no '{sub}/' directory "
                           f"(expected {sub}/images, {sub}/1st_manual, {sub}/mask)")
    tag = "training" if split == "train" else "test"
    entries, needed = [], []
    for n in numbers:
        iid = f"{n:02d}"
        image = os.path.join(base, "images", f"{iid}_{tag}.png")
        gts = [os.path.join(base, "1st_manual", f"{iid}_manual1.png")]
        if split == "test":
            gts.append(os.path.join(base, "2nd_manual", f"{iid}_manual2.png"))
        fov = os.path.join(base, "mask", f"{iid}_{tag}_mask.png")
        needed += [image, *gts, fov]
        entries.append(DatasetEntry(iid, image, gts, fov))
    _require(needed, f"DRIVE {split} split")
    return DatasetIndex("drive", split, entries)


def load_stare(root, split="all"):
    """Index STARE; a missing second annotation is tolerated, wrong sizes are warned."""
    if split != "all":
        raise ConfigError("STARE has no official split; use dataset.split = all")
    if not os.path.isdir(os.path.join(root, "images")):
        raise DatasetError(f"STARE root {root!r} has no 'images/' directory")
    entries, warnings, needed = [], [], []
    for sid in STARE_IDS:
        image = os.path.join(root, "images", f"im{sid}.png")
        ah = os.path.join(root, "labels-ah", f"im{sid}.ah.png")
        vk = os.path.join(root, "labels-vk", f"im{sid}.vk.png")
        needed += [image, ah]
        gts = [ah] + ([vk] if os.path.isfile(vk) else [])
        if len(gts) == 1:
            warnings.append(f"im{sid}: second annotation missing, using one gt")
        entries.append(DatasetEntry(f"im{sid}", image, gts))
    _require(needed, "STARE")
    for e in entries:
        with _open_png(e.image) as img:
            shape = (img.height, img.width)
        if shape != STARE_SHAPE:
            warnings.append(f"{e.image_id}: size {shape[0]}x{shape[1]}, "
                            f"expected {STARE_SHAPE[0]}x{STARE_SHAPE[1]}")
    for w in warnings:
        log.warning(w)
    return DatasetIndex("stare", split, entries, warnings)


# ---------------------------------------------------------------- synthetic

@dataclass
class SynthConfig:
    height: int = 128
    width: int = 128
    thin_widths: tuple = (1.0, 2.0)
    thick_widths: tuple = (4.0, 6.0)
    n_thin: int = 8
    n_thick: int = 4
    noise: float = 0.06
    fov_radius: float = 0.36
    background: float = 0.45
    thin_contrast: float = 0.22
    thick_contrast: float = 0.3

    def validate(self):
        if self.height < 32 or self.width < 32:
            raise ConfigError("synthetic images must be at least 32x32")
        for lo, hi in (self.thin_widths, self.thick_widths):
            if not 0 < lo <= hi:
                raise ConfigError("synthetic line widths must satisfy 0 < low <= high")
        if self.noise < 0:
            raise ConfigError("synthetic noise must be >= 0")
        if self.n_thin < 0 or self.n_thick < 0:
            raise ConfigError("synthetic vessel counts must be >= 0")
        return self

    def to_dict(self):
        d = asdict(self)
        d["thin_widths"] = list(self.thin_widths)
        d["thick_widths"] = list(self.thick_widths)
        return d


WIDTH_NONE, WIDTH_THIN, WIDTH_THICK = 0, 1, 2
SPLIT_CODES = {"all": 0, "train": 1, "test": 2}


def _bezier(rng, h, w, cy, cx, radius):
    """Smooth cubic curve with its end points inside the FOV."""
    ang = rng.uniform(0, 2 * np.pi, 4)
    rad = radius * np.sqrt(rng.uniform(0.05, 1.0, 4))
    pts = np.stack([cy + rad * np.sin(ang), cx + rad * np.cos(ang)], axis=1)
    length = np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    t = np.linspace(0, 1, max(int(length * 4), 8))[:, None]
    return ((1 - t) ** 3 * pts[0] + 3 * (1 - t) ** 2 * t * pts[1]
            + 3 * (1 - t) * t ** 2 * pts[2] + t ** 3 * pts[3])


def _stroke(dist, curve, width):
    """Lower ``dist`` to the distance from each pixel to ``curve`` near the curve."""
    h, w = dist.shape
    reach = int(np.ceil(width / 2)) + 1
    dy, dx = np.mgrid[-reach:reach + 2, -reach:reach + 2]
    base = np.floor(curve).astype(np.int64)
    yy = base[:, 0, None] + dy.ravel()[None, :]
    xx = base[:, 1, None] + dx.ravel()[None, :]
    d = np.hypot(yy - curve[:, 0, None], xx - curve[:, 1, None])
    ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    np.minimum.at(dist, (yy[ok], xx[ok]), d[ok])


def synth_sample(cfg, seed):
    """One synthetic fundus image.

    Returns ``(rgb uint8, gt bool, fov bool, widths uint8)`` where
    ``widths`` labels each vessel pixel thin (1) or thick (2).  Thin
    strokes stop one pixel short of any vessel drawn before them.
    """
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    h, w = cfg.height, cfg.width
    cy, cx = (h - 1) / 2, (w - 1) / 2
    radius = cfg.fov_radius * min(h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    fov = np.hypot(yy - cy, xx - cx) <= radius
    thick = np.zeros((h, w), bool)
    thin = np.zeros((h, w), bool)
    for kind, count, (lo, hi) in (("thick", cfg.n_thick, cfg.thick_widths),
                                  ("thin", cfg.n_thin, cfg.thin_widths)):
        for _ in range(count):
            width = rng.uniform(lo, hi)
            curve = _bezier(rng, h, w, cy, cx, radius)
            dist = np.full((h, w), np.inf)
            _stroke(dist, curve, width)
            drawn = (dist < width / 2) & fov
            if kind == "thick":
                thick |= drawn
            else:
                # keep a one-pixel gap to earlier vessels so every stroke
                # stays a separate component of known width
                thin |= drawn & ~dilate(thick | thin, box(1))
    gt = thick | thin
    widths = np.where(thick, WIDTH_THICK, np.where(thin, WIDTH_THIN, WIDTH_NONE)).astype(np.uint8)
    # slow illumination gradient + pixel noise inside the FOV, black outside
    grad = 0.08 * ((yy - cy) * rng.normal() + (xx - cx) * rng.normal()) / max(h, w)
    green = cfg.background + grad + cfg.noise * rng.standard_normal((h, w))
    green = green + cfg.thick_contrast * thick + cfg.thin_contrast * thin
    green = np.where(fov, np.clip(green, 0.02, 1.0), 0.0)
    rgb = np.stack([np.clip(0.6 + 0.4 * green, 0, 1) * fov, green, 0.4 * green], axis=2)
    rgb = np.floor(rgb * 255 + 0.5).astype(np.uint8)
    return rgb, gt, fov, widths


def make_synthetic(count, out_dir=None, cfg=None, seed=0, split="all"):
    """Generate ``count`` synthetic images; with ``out_dir``, write them as PNGs.

    Image ``i`` of a split depends only on ``(seed, split, i)``.  Without
    ``out_dir`` the entries carry the arrays in ``extra["arrays"]``.
    """
    cfg = (cfg or SynthConfig()).validate()
    if split not in SPLIT_CODES:
        raise ConfigError(f"synthetic split must be one of {sorted(SPLIT_CODES)}")
    entries = []
    if out_dir is not None:
        for sub in ("images", "gt", "fov", "widths"):
            os.makedirs(os.path.join(out_dir, split, sub), exist_ok=True)
    for i in range(count):
        iid = f"{split}_{i:03d}"
        rgb, gt, fov, widths = synth_sample(cfg, [seed, SPLIT_CODES[split], i])
        if out_dir is None:
            entries.append(DatasetEntry(iid, None, [None], None,
                                        {"arrays": (rgb, gt, fov, widths)}))
            continue
        d = os.path.join(out_dir, split)
        paths = {k: os.path.join(d, k, f"{iid}.png") for k in ("images", "gt", "fov", "widths")}
        save_rgb_png(rgb, paths["images"])
        save_mask_png(gt, paths["gt"])
        save_mask_png(fov, paths["fov"])
        save_gray_png(widths / 2.0, paths["widths"])
        entries.append(DatasetEntry(iid, paths["images"], [paths["gt"]], paths["fov"],
                                    {"widths": paths["widths"]}))
    return DatasetIndex("synthetic", split, entries)


def load_width_labels(path):
    """Read a widths PNG written by :func:`make_synthetic` (0 none, 1 thin, 2 thick)."""
    return np.rint(load_gray_png(path) * 2).astype(np.uint8)


def load_synthetic(root, split):
    """Re-index a directory previously written by :func:`make_synthetic`."""
    d = os.path.join(root, split, "images")
    if not os.path.isdir(d):
        raise DatasetError(f"no synthetic split {split!r} under {root!r} (run 'synth')")
    entries = []
    for name in sorted(os.listdir(d)):
        if not name.endswith(".png"):
            continue
        iid = name[:-4]
        p = {k: os.path.join(root, split, k, name) for k in ("images", "gt", "fov", "widths")}
        _require([p["images"], p["gt"]], f"synthetic {split} split")
        entries.append(DatasetEntry(iid, p["images"], [p["gt"]],
                                    p["fov"] if os.path.isfile(p["fov"]) else None,
                                    {"widths": p["widths"]} if os.path.isfile(p["widths"]) else {}))
    if not entries:
        raise DatasetError(f"synthetic split {split!r} under {root!r} is empty")
    return DatasetIndex("synthetic", split, entries)


def load_dataset(kind, root, split):
    if kind == "drive":
        return load_drive(root, split)
    if kind == "stare":
        return load_stare(root, split)
    if kind == "synthetic":
        return load_synthetic(root, split)
    raise ConfigError(f"dataset.kind must be drive, stare or synthetic, not {kind!r}")
