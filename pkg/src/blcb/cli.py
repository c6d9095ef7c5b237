"""Command-line front end: ``blcb <stage> [--config FILE] [--seed N] [--out DIR] [--jobs N]``.

Stages read the artifacts of earlier stages from the output directory::

    synth       -> <dataset.root>/{train,test}/...
    preprocess  -> out/preprocessed/<id>.png, <id>.json
    segregate   -> out/segregated/<id>_thick.png, <id>_thin.png
    balance     -> out/balanced/<id>.csv, pooled.csv, report.json
    train       -> out/model/checkpoint.bin, history.csv
    predict     -> out/predictions/<id>_prob.png, <id>_mask.png, <id>_overlay.png
    evaluate    -> out/metrics/metrics.csv, metrics.json
    report      -> summary on stdout

Every stage directory gets a ``manifest.json`` with the config hash, seed,
code version and a SHA-256 of each file written.
"""
import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, kernels
from .balancing import (
    SAMPLER_ALGORITHM,
    Sampler,
    balance_level1,
    balance_level2,
    balance_none,
    classify_level1,
    classify_level2,
    stratum_counts,
)
from .config import load_config
from .datasets import load_dataset, make_synthetic
from .errors import BlcbError, ConfigError, MissingArtifactError
from .imageio import (
    load_gray_png,
    load_mask_png,
    load_png,
    load_prob_png16,
    save_gray_png,
    save_mask_png,
    save_prob_png16,
    save_rgb_png,
)
from .metrics import evaluate_image, summarize, to_csv, to_json
from .morphology import segregate_vessels
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import build_model
from .nn.train import train
from .patching import STRATA, STRATUM, PatchSet, extract_dense, pad_image
from .pipeline import overlay, segment_preprocessed
from .preprocess import preprocess_image

log = logging.getLogger("blcb")

STAGES = ("synth", "preprocess", "segregate", "balance", "train", "predict", "evaluate", "report")
INDEX_COLUMNS = ("image_id", "row", "col", "label", "stratum")


# ------------------------------------------------------------------ helpers

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, stage, cfg, files, extra=None):
    files = sorted(set(files))
    manifest = {
        "stage": stage,
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "files": {os.path.relpath(f, directory): _sha256(f) for f in files},
    }
    manifest.update(extra or {})
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _write_json(path, obj):
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stage_dir(cfg, name):
    d = os.path.join(cfg.out, name)
    os.makedirs(d, exist_ok=True)
    return d


def _need(path, stage):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact {path}; run the '{stage}' stage first")
    return path


def _dataset(cfg, split):
    if not os.path.isdir(cfg.dataset_root):
        hint = " (run 'synth' to generate it)" if cfg.dataset_kind == "synthetic" else ""
        raise ConfigError(f"dataset.root: directory {cfg.dataset_root!r} not found{hint}")
    return load_dataset(cfg.dataset_kind, cfg.dataset_root, split)


def _all_entries(cfg):
    seen, out = set(), []
    for split in (cfg.train_split, cfg.test_split):
        for e in _dataset(cfg, split):
            if e.image_id not in seen:
                seen.add(e.image_id)
                out.append(e)
    return out


def _preprocessed(cfg, image_id):
    return load_gray_png(_need(os.path.join(cfg.out, "preprocessed", f"{image_id}.png"),
                               "preprocess"))


def write_index(path, patches):
    rows = ["image_id,row,col,label,stratum"]
    ids = patches.image_ids
    for k, r, c, lab, s in zip(patches.image, patches.rows, patches.cols, patches.labels,
                               patches.strata):
        rows.append(f"{ids[k]},{r},{c},{lab},{STRATA[s]}")
    return _write_text(path, "\n".join(rows) + "\n")


def read_index(path):
    """Rows of a balanced index file as column arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != INDEX_COLUMNS:
            raise ConfigError(f"{path}: not a balanced index file (header {header})")
        rows = list(reader)
    ids = [r[0] for r in rows]
    cols = np.array([[int(r[1]), int(r[2]), int(r[3]), STRATUM[r[4]]] for r in rows],
                    dtype=np.int64).reshape(-1, 4)
    return ids, cols


def index_to_patchset(cfg, ids, cols, patch):
    order = list(dict.fromkeys(ids))
    sources = {i: pad_image(_preprocessed(cfg, i), patch, cfg.pad_mode) for i in order}
    code = {i: k for k, i in enumerate(order)}
    image = np.array([code[i] for i in ids], dtype=np.int32)
    return PatchSet(sources, patch, image, cols[:, 0], cols[:, 1], cols[:, 2],
                    np.full(len(ids), np.nan), cols[:, 3])


# ------------------------------------------------------------------ stages

def cmd_synth(cfg, args):
    files = []
    for split, count in zip(("train", "test"), cfg.synth_counts):
        index = make_synthetic(count, cfg.dataset_root, cfg.synth, seed=cfg.seed, split=split)
        for e in index:
            files += [e.image, *e.gts, e.fov, e.extra["widths"]]
    write_manifest(cfg.dataset_root, "synth", cfg, files,
                   {"synth": cfg.synth.to_dict()})
    print(f"synthetic dataset written to {cfg.dataset_root}")


def cmd_preprocess(cfg, args):
    entries = _all_entries(cfg)
    if args.image:
        entries = [e for e in entries if e.image_id in args.image]
        if not entries:
            raise ConfigError(f"no image with id in {args.image}")
    d = _stage_dir(cfg, "preprocessed")
    files = []
    for e in entries:
        gray = preprocess_image(e.load_image(), cfg.preprocess)
        png = os.path.join(d, f"{e.image_id}.png")
        save_gray_png(gray, png)
        side = _write_json(os.path.join(d, f"{e.image_id}.json"),
                           {"image_id": e.image_id, "source": e.image, "channel": "green",
                            **cfg.preprocess.to_dict()})
        files += [png, side]
    write_manifest(d, "preprocess", cfg, files)
    print(f"preprocessed {len(entries)} image(s) into {d}")


def cmd_segregate(cfg, args):
    entries = _all_entries(cfg)
    d = _stage_dir(cfg, "segregated")
    se = cfg.segregation_se()
    files = []
    for e in entries:
        thick, thin = segregate_vessels(e.load_gt(), se)
        for name, mask in (("thick", thick), ("thin", thin)):
            p = os.path.join(d, f"{e.image_id}_{name}.png")
            save_mask_png(mask, p)
            files.append(p)
    write_manifest(d, "segregate", cfg, files, {"se": list(cfg.seg_se)})
    print(f"segregated {len(entries)} ground truth mask(s) into {d}")


def cmd_balance(cfg, args):
    entries = list(_dataset(cfg, cfg.train_split))
    d = _stage_dir(cfg, "balanced")
    patch = cfg.model.input_size
    files, pooled, report = [], [], {"level": cfg.level, "sampler": SAMPLER_ALGORITHM,
                                     "balance": cfg.balance.to_dict(), "images": []}
    seg = os.path.join(cfg.out, "segregated")
    for k, e in enumerate(entries):
        gray = _preprocessed(cfg, e.image_id)
        gt = e.load_gt()
        ps = extract_dense(gray, gt, patch, e.image_id, cfg.pad_mode)
        bc = dataclasses.replace(cfg.balance, seed=[cfg.seed, k])
        warnings = []
        if cfg.level == "none":
            before = classify_level1(ps, gt, bc.v).counts()
            out = balance_none(ps, gt, bc)
        elif cfg.level == "1":
            s = classify_level1(ps, gt, bc.v)
            before = s.counts()
            out = balance_level1(s, bc, warnings)
        else:
            thick = load_mask_png(_need(os.path.join(seg, f"{e.image_id}_thick.png"),
                                        "segregate"))
            thin = load_mask_png(_need(os.path.join(seg, f"{e.image_id}_thin.png"),
                                       "segregate"))
            s = classify_level2(ps, gt, thin, thick, bc.v)
            before = s.counts()
            out = balance_level2(s, bc, warnings)
        files.append(write_index(os.path.join(d, f"{e.image_id}.csv"), out))
        pooled.append(out)
        report["images"].append({"image_id": e.image_id, "before": before,
                                 "after": stratum_counts(out), "warnings": warnings})
    pool = PatchSet.concat(pooled)
    files.append(write_index(os.path.join(d, "pooled.csv"), pool))
    report["total_after"] = stratum_counts(pool)
    files.append(_write_json(os.path.join(d, "report.json"), report))
    write_manifest(d, "balance", cfg, files)
    t = report["total_after"]
    print(f"level {cfg.level}: {len(pool)} patches "
          f"({t['vessel_total']} vessel / {t['nonvessel_total']} non-vessel) in {d}")


def cmd_train(cfg, args):
    pooled = _need(os.path.join(cfg.out, "balanced", "pooled.csv"), "balance")
    ids, cols = read_index(pooled)
    patches = index_to_patchset(cfg, ids, cols, cfg.model.input_size)
    d = _stage_dir(cfg, "model")
    n_val = int(round(cfg.val_fraction * len(patches)))
    perm = Sampler([cfg.seed, 1_000_003]).permutation(len(patches))
    val = patches.subset(np.sort(perm[:n_val])) if n_val else None
    tr = patches.subset(np.sort(perm[n_val:]))
    model = build_model(cfg.model)
    t0 = time.perf_counter()
    model, history = train(model, tr, val, cfg.epochs, cfg.batch_size, cfg.optim, cfg.seed,
                           bn_batches=cfg.bn_batches)
    elapsed = time.perf_counter() - t0
    ckpt = os.path.join(d, "checkpoint.bin")
    save_checkpoint(model, ckpt, {"train_records": len(tr), "val_records": n_val,
                                  "epochs": cfg.epochs, "batch_size": cfg.batch_size,
                                  "bn_batches": cfg.bn_batches,
                                  "optimizer": cfg.optim.to_dict()})
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for h in history:
        lines.append(f"{h['epoch']},{h['train_loss']:.6f},{h['val_loss']:.6f},{h['val_acc']:.6f}")
    files = [ckpt, _write_text(os.path.join(d, "history.csv"), "\n".join(lines) + "\n")]
    if cfg.write_timings:
        files.append(_write_json(os.path.join(d, "timings.json"), {"train_seconds": elapsed}))
    write_manifest(d, "train", cfg, files, {"model": model.cfg.to_dict(),
                                            "parameters": int(model.num_parameters())})
    print(f"trained {model.num_parameters()} parameters on {len(tr)} patches "
          f"for {cfg.epochs} epoch(s) in {elapsed:.1f}s")


_PRED = {}


def _predict_init(ckpt, cfg):
    _PRED["model"], _ = load_checkpoint(ckpt)
    _PRED["cfg"] = cfg


def _predict_one(image_id):
    cfg, model = _PRED["cfg"], _PRED["model"]
    res = segment_preprocessed(model, _preprocessed(cfg, image_id), cfg.threshold,
                               cfg.postprocess_se(), cfg.erosion_passes, cfg.eval_batch,
                               pad_mode=cfg.pad_mode)
    return image_id, res.prob_map, res.mask, res.timings


def cmd_predict(cfg, args):
    ckpt = _need(args.checkpoint or os.path.join(cfg.out, "model", "checkpoint.bin"), "train")
    entries = list(_dataset(cfg, cfg.test_split))
    ids = [e.image_id for e in entries]
    for i in ids:
        _need(os.path.join(cfg.out, "preprocessed", f"{i}.png"), "preprocess")
    d = _stage_dir(cfg, "predictions")
    if args.jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(min(args.jobs, len(ids)), initializer=_predict_init,
                                 initargs=(ckpt, cfg)) as pool:
            results = list(pool.map(_predict_one, ids))
    else:
        _predict_init(ckpt, cfg)
        results = [_predict_one(i) for i in ids]
    files, timings = [], {}
    for e, (image_id, prob, mask, tm) in zip(entries, results):
        paths = [os.path.join(d, f"{image_id}_{k}.png") for k in ("prob", "mask", "overlay")]
        save_prob_png16(prob, paths[0])
        save_mask_png(mask, paths[1])
        gt = e.load_gt() if e.gts and e.gts[0] else None
        save_rgb_png(overlay(e.load_image(), mask, gt), paths[2])
        files += paths
        timings[image_id] = tm
    if cfg.write_timings:
        files.append(_write_json(os.path.join(d, "timings.json"), timings))
    write_manifest(d, "predict", cfg, files, {"checkpoint_sha256": _sha256(ckpt)})
    print(f"predicted {len(ids)} image(s) into {d}")


def cmd_evaluate(cfg, args):
    pdir = os.path.join(cfg.out, "predictions")
    entries = list(_dataset(cfg, cfg.test_split))
    _need(pdir, "predict")
    se = cfg.segregation_se()
    rows = []
    for e in entries:
        prob = load_prob_png16(_need(os.path.join(pdir, f"{e.image_id}_prob.png"), "predict"))
        mask = load_mask_png(_need(os.path.join(pdir, f"{e.image_id}_mask.png"), "predict"))
        gt = e.load_gt()
        roi = None
        if cfg.roi == "fov":
            if e.fov is None:
                raise ConfigError(f"eval.roi = fov but image {e.image_id} has no FOV mask")
            roi = e.load_fov()
        _, thin = segregate_vessels(gt, se)
        rows.append(evaluate_image(e.image_id, prob, mask, gt, roi,
                                   thin if thin.any() else None))
    if any("thin_se" not in r for r in rows):
        for r in rows:
            r.pop("thin_se", None)
    table = summarize(rows)
    d = _stage_dir(cfg, "metrics")
    meta = {"roi": cfg.roi, "threshold": cfg.threshold, "units": "percent",
            "dataset": cfg.dataset_kind, "split": cfg.test_split}
    files = [_write_text(os.path.join(d, "metrics.csv"), to_csv(table)),
             _write_text(os.path.join(d, "metrics.json"),
                         to_json(table, {**meta, "counts": {r["image_id"]: r["counts"]
                                                             for r in rows}}))]
    write_manifest(d, "evaluate", cfg, files)
    print(to_csv(table), end="")


def cmd_report(cfg, args):
    metrics = _need(os.path.join(cfg.out, "metrics", "metrics.json"), "evaluate")
    with open(metrics, encoding="utf-8") as fh:
        table = json.load(fh)
    bal = os.path.join(cfg.out, "balanced", "report.json")
    if os.path.exists(bal):
        with open(bal, encoding="utf-8") as fh:
            t = json.load(fh)["total_after"]
        print(f"balancing level {cfg.level}: " + ", ".join(f"{k}={v}" for k, v in t.items()))
    hist = os.path.join(cfg.out, "model", "history.csv")
    if os.path.exists(hist):
        with open(hist, encoding="utf-8") as fh:
            last = fh.read().strip().splitlines()[-1]
        print(f"last epoch (epoch,train_loss,val_loss,val_acc): {last}")
    rows = table["rows"]
    keys = [k for k in ("se", "sp", "acc", "auc", "thin_se") if k in rows[0]]
    print(f"{'image':<22}" + "".join(f"{k:>9}" for k in keys))
    for r in rows:
        print(f"{r['image_id']:<22}" + "".join(f"{r[k]:>9.2f}" for k in keys))


COMMANDS = {name: globals()[f"cmd_{name}"] for name in STAGES}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="override global.seed")
    common.add_argument("--out", help="override eval.output_dir")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (predict)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="blcb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"blcb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "preprocess":
            p.add_argument("--image", action="append", help="only this image id (repeatable)")
        if name == "predict":
            p.add_argument("--checkpoint", help="model file (default out/model/checkpoint.bin)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["global.seed"] = args.seed
        if args.out is not None:
            overrides["eval.output_dir"] = args.out
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except BlcbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
