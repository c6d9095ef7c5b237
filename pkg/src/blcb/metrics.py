"""Pixel-level segmentation metrics: Se, Sp, ACC and rank-based AUC."""
import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError

AVERAGE_ROW = "Average (All Images)"
COLUMNS = ("image_id", "se", "sp", "acc", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    roi: str = "full"

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return asdict(self)


def _aligned(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if a is not None and np.shape(a) != shape:
            raise DimensionError(f"shape mismatch: {np.shape(a)} vs {shape}")


def _roi(roi, shape):
    return np.ones(shape, bool) if roi is None else np.asarray(roi, dtype=bool)


def confusion(pred, gt, roi=None, roi_name=None):
    """Confusion counts over ``roi`` (all pixels if ``None``); vessel is positive."""
    _aligned(pred, gt, roi)
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    m = _roi(roi, gt.shape)
    p, g = pred[m], gt[m]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn, roi_name or ("full" if roi is None else "fov"))


def rates(c):
    """``(se, sp, acc)`` as fractions."""
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive pixels (tp + fn == 0)")
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity undefined: no negative pixels (tn + fp == 0)")
    return c.tp / (c.tp + c.fn), c.tn / (c.tn + c.fp), (c.tp + c.tn) / c.total


def auc(scores, gt, roi=None):
    """Probability that a random positive outscores a random negative (ties count half).

    Computed from per-score-level counts in exact integer arithmetic, which
    equals the Mann-Whitney statistic with average ranks.
    """
    _aligned(scores, gt, roi)
    m = _roi(roi, np.shape(gt))
    s = np.asarray(scores, dtype=np.float64)[m]
    g = np.asarray(gt, dtype=bool)[m]
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: region contains a single class")
    if np.isnan(s).any():
        raise UndefinedMetricError("AUC undefined: scores contain NaN")
    _, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv[g], minlength=inv.max() + 1).astype(np.int64)
    neg = np.bincount(inv[~g], minlength=inv.max() + 1).astype(np.int64)
    neg_below = np.cumsum(neg) - neg
    # doubled so the tie half stays integral
    twice = int(np.sum(2 * pos * neg_below + pos * neg))
    return twice / (2 * n_pos * n_neg)


def auc_bruteforce(scores, gt):
    """All-pairs reference implementation, O(P * N)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=bool).ravel()
    pos, neg = s[g], s[~g]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC undefined: single class")
    diff = pos[:, None] - neg[None, :]
    return float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (len(pos) * len(neg))


def thin_sensitivity(pred, thin, roi=None):
    """Fraction of thin-vessel pixels that were detected."""
    _aligned(pred, thin, roi)
    m = _roi(roi, np.shape(thin)) & np.asarray(thin, bool)
    n = int(m.sum())
    if n == 0:
        raise UndefinedMetricError("thin-vessel sensitivity undefined: no thin pixels")
    return int(np.count_nonzero(np.asarray(pred, bool)[m])) / n


def evaluate_image(image_id, prob, pred, gt, roi=None, thin=None):
    """One metrics row; fractions, not percentages."""
    c = confusion(pred, gt, roi)
    se, sp, acc = rates(c)
    row = {"image_id": image_id, "se": se, "sp": sp, "acc": acc, "auc": auc(prob, gt, roi),
           "roi": c.roi}
    if thin is not None:
        row["thin_se"] = thin_sensitivity(pred, thin, roi)
    row["counts"] = c.to_dict()
    return row


def summarize(rows):
    """Per-image rows plus the mean row, metric values as percentages (2 dp)."""
    keys = [k for k in ("se", "sp", "acc", "auc", "thin_se") if rows and k in rows[0]]
    out = []
    for row in rows:
        out.append({"image_id": row["image_id"],
                    **{k: round(100.0 * row[k], 2) for k in keys}})
    if rows:
        # averaged over the displayed values so the row agrees with the table
        out.append({"image_id": AVERAGE_ROW,
                    **{k: round(float(np.mean([r[k] for r in out])), 2) for k in keys}})
    return out


def to_csv(table):
    if not table:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def to_json(table, meta=None):
    return json.dumps({"meta": meta or {}, "rows": table}, indent=2, sort_keys=True) + "\n"
