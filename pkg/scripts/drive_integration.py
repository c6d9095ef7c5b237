#!/usr/bin/env python3
"""Full-scale DRIVE run, compared with reference averages.

Not part of the test suite: it needs the real DRIVE data and many hours of
CPU time at the default 80 epochs.

    python scripts/drive_integration.py --drive-root /data/DRIVE --out drive_out

``--drive-root`` may point at the official download (``.tif`` images and
``.gif`` masks); pass ``--convert`` to write a PNG copy under ``--out``
first.  Exit status is 0 when every metric is within the tolerance, 1
otherwise, 2/3 on configuration or missing-data errors.
"""
import argparse
import glob
import json
import os
import sys

from PIL import Image

from blcb import cli

TARGETS = {"se": 81.57, "sp": 97.65, "acc": 96.22, "auc": 98.23}
TOLERANCE = 2.0


def compare(row, targets=TARGETS, tol=TOLERANCE):
    """One record per metric with the measured value, target, delta and verdict."""
    out = []
    for metric, target in targets.items():
        delta = round(row[metric] - target, 2)
        out.append({"metric": metric, "value": row[metric], "target": target,
                    "delta": delta, "ok": abs(delta) <= tol})
    return out


def convert(src, dst):
    """Copy the official DRIVE tree to PNG with the names the loader expects."""
    for split in ("training", "test"):
        for sub in ("images", "1st_manual", "2nd_manual", "mask"):
            for path in sorted(glob.glob(os.path.join(src, split, sub, "*"))):
                stem = os.path.splitext(os.path.basename(path))[0]
                target = os.path.join(dst, split, sub, stem + ".png")
                os.makedirs(os.path.dirname(target), exist_ok=True)
                with Image.open(path) as im:
                    im = im.convert("RGB" if sub == "images" else "L")
                    im.save(target)
    return dst


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--drive-root", required=True)
    p.add_argument("--out", default="drive_out")
    p.add_argument("--config", help="extra INI settings (dataset keys are overridden)")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--level", default="2", choices=("none", "1", "2"))
    p.add_argument("--roi", default="full", choices=("full", "fov"))
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--convert", action="store_true", help="convert .tif/.gif to PNG first")
    args = p.parse_args(argv)

    root = args.drive_root
    if args.convert:
        root = convert(root, os.path.join(args.out, "drive_png"))
    common = ["--out", args.out, "--set", "dataset.kind=drive", "--set", f"dataset.root={root}",
              "--set", f"train.epochs={args.epochs}", "--set", f"balance.level={args.level}",
              "--set", f"eval.roi={args.roi}"]
    if args.config:
        common += ["--config", args.config]
    for stage in ("preprocess", "segregate", "balance", "train", "predict", "evaluate"):
        extra = ["--jobs", str(args.jobs)] if stage == "predict" else []
        code = cli.main([stage, *common, *extra])
        if code:
            return code
    with open(os.path.join(args.out, "metrics", "metrics.json"), encoding="utf-8") as fh:
        average = json.load(fh)["rows"][-1]
    report = compare(average)
    print(f"{'metric':<8}{'value':>9}{'target':>9}{'delta':>9}  within +-{TOLERANCE}")
    for r in report:
        print(f"{r['metric']:<8}{r['value']:>9.2f}{r['target']:>9.2f}{r['delta']:>+9.2f}  "
              f"{'yes' if r['ok'] else 'no'}")
    return 0 if all(r["ok"] for r in report) else 1


if __name__ == "__main__":
    sys.exit(main())
