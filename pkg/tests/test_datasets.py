import numpy as np
import pytest

from blcb.datasets import (STARE_IDS, WIDTH_THICK, WIDTH_THIN, DatasetIndex, SynthConfig,
                           load_dataset, load_drive, load_stare, load_synthetic,
                           load_width_labels, make_synthetic, synth_sample)
from blcb.errors import ConfigError, DatasetError, MissingArtifactError
from blcb.imageio import load_mask_png, save_mask_png, save_rgb_png
from blcb.morphology import segregate_vessels


def _touch_png(path, shape=(4, 5)):
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(shape) == 3:
        save_rgb_png(np.zeros(shape, np.uint8), path)
    else:
        save_mask_png(np.zeros(shape, bool), path)


def fake_drive(root, split, skip=()):
    sub, numbers, tag = (("training", range(21, 41), "training") if split == "train"
                         else ("test", range(1, 21), "test"))
    for n in numbers:
        files = [f"images/{n:02d}_{tag}.png", f"1st_manual/{n:02d}_manual1.png",
                 f"mask/{n:02d}_{tag}_mask.png"]
        if split == "test":
            files.append(f"2nd_manual/{n:02d}_manual2.png")
        for f in files:
            if f not in skip:
                _touch_png(root / sub / f)


def test_drive_index(tmp_path):
    fake_drive(tmp_path, "train")
    fake_drive(tmp_path, "test")
    tr = load_drive(tmp_path, "train")
    te = load_drive(tmp_path, "test")
    assert tr.ids()[0] == "21" and len(tr) == 20 and len(tr.get("21").gts) == 1
    assert te.ids()[-1] == "20" and len(te.get("01").gts) == 2
    assert te.get("01").fov.endswith("01_test_mask.png")
    assert DatasetIndex.from_json(te.to_json()).to_dict() == te.to_dict()


def test_drive_missing_files_listed(tmp_path):
    fake_drive(tmp_path, "train", skip={"mask/23_training_mask.png", "1st_manual/30_manual1.png"})
    with pytest.raises(DatasetError) as err:
        load_drive(tmp_path, "train")
    msg = str(err.value)
    assert "2 file(s) missing" in msg and "23_training_mask.png" in msg and "30_manual1" in msg
    assert isinstance(err.value, MissingArtifactError)


def test_drive_bad_root_and_split(tmp_path):
    with pytest.raises(DatasetError, match="training/"):
        load_drive(tmp_path, "train")
    with pytest.raises(ConfigError):
        load_drive(tmp_path, "val")


def test_stare_index_with_warnings(tmp_path):
    for sid in STARE_IDS:
        _touch_png(tmp_path / "images" / f"im{sid}.png", (605, 700, 3) if sid != "0001" else (10, 10, 3))
        _touch_png(tmp_path / "labels-ah" / f"im{sid}.ah.png")
        if sid != "0002":
            _touch_png(tmp_path / "labels-vk" / f"im{sid}.vk.png")
    idx = load_stare(tmp_path)
    assert len(idx) == 20
    assert len(idx.get("im0002").gts) == 1 and len(idx.get("im0003").gts) == 2
    assert any("im0002" in w and "second annotation" in w for w in idx.warnings)
    assert any("im0001" in w and "10x10" in w for w in idx.warnings)
    assert len(idx.warnings) == 2


def test_stare_missing_primary(tmp_path):
    (tmp_path / "images").mkdir()
    with pytest.raises(DatasetError, match="40 file"):
        load_stare(tmp_path)


def test_synthetic_deterministic_and_index_independent():
    cfg = SynthConfig(height=64, width=64)
    a = synth_sample(cfg, [0, 1, 3])
    b = synth_sample(cfg, [0, 1, 3])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    idx = make_synthetic(4, cfg=cfg, seed=0, split="train")
    assert np.array_equal(idx.entries[3].extra["arrays"][0], a[0])
    other = make_synthetic(1, cfg=cfg, seed=1, split="train").entries[0].extra["arrays"][0]
    assert not np.array_equal(other, idx.entries[0].extra["arrays"][0])


def test_synthetic_content():
    cfg = SynthConfig()
    for i in range(5):
        rgb, gt, fov, widths = synth_sample(cfg, [0, 0, i])
        assert rgb.shape == (128, 128, 3) and rgb.dtype == np.uint8
        frac = gt.sum() / gt.size
        assert 0 < frac < 0.5
        assert not (gt & ~fov).any()
        assert np.all(rgb[~fov] == 0)
        assert (widths == WIDTH_THIN).any() and (widths == WIDTH_THICK).any()
        assert np.array_equal(widths > 0, gt)


def test_synthetic_widths_agree_with_segregation():
    cfg = SynthConfig()
    agree = []
    for i in range(10):
        _, gt, _, widths = synth_sample(cfg, [0, 0, i])
        thick, thin = segregate_vessels(gt)
        agree.append(np.mean(thin[gt] == (widths[gt] == WIDTH_THIN)))
    assert np.mean(agree) >= 0.95


def test_synthetic_roundtrip_on_disk(tmp_path):
    cfg = SynthConfig(height=48, width=48)
    idx = make_synthetic(3, tmp_path, cfg, seed=2, split="test")
    back = load_dataset("synthetic", str(tmp_path), "test")
    assert back.ids() == idx.ids() == ["test_000", "test_001", "test_002"]
    _, gt, _, widths = synth_sample(cfg, [2, 2, 1])
    e = back.get("test_001")
    assert np.array_equal(load_mask_png(e.gold), gt)
    assert np.array_equal(load_width_labels(e.extra["widths"]), widths)
    with pytest.raises(DatasetError, match="synth"):
        load_synthetic(str(tmp_path), "train")


def test_bad_synthetic_config():
    with pytest.raises(ConfigError):
        SynthConfig(height=16).validate()
    with pytest.raises(ConfigError):
        make_synthetic(1, split="val")
    with pytest.raises(ConfigError):
        load_dataset("chase", "x", "train")
