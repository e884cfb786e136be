"""Mask IoU and COCO-style average precision."""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, InstanceAnnotation

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, float("inf")),
}
MAX_DETS = 100


def mask_iou(a: BinaryMask, b: BinaryMask, with_flag: bool = False):
    """|a & b| / |a | b|.

    Two empty masks give 0.0, never 1.0; pass ``with_flag=True`` to also get a
    bool telling whether that convention was applied.
    """
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return (0.0, True) if with_flag else 0.0
    iou = int(np.count_nonzero(a.bits & b.bits)) / union
    return (iou, False) if with_flag else iou


def _iou_matrix(dt: Sequence[BinaryMask], gt: Sequence[BinaryMask],
                crowd: Sequence[bool]) -> np.ndarray:
    """IoU, or intersection over detection area against crowd regions."""
    out = np.zeros((len(dt), len(gt)))
    if not dt or not gt:
        return out
    d = np.stack([m.bits.ravel() for m in dt]).astype(np.float32)
    g = np.stack([m.bits.ravel() for m in gt]).astype(np.float32)
    inter = d @ g.T
    da = d.sum(axis=1)[:, None]
    ga = g.sum(axis=1)[None, :]
    union = np.where(np.asarray(crowd)[None, :], da, da + ga - inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


@dataclass(frozen=True)
class Prediction:
    image_id: int
    category_id: int
    score: float
    mask: BinaryMask


@dataclass
class EvalResult:
    ap_per_threshold: dict[float, float] = field(default_factory=dict)
    mean_ap: float = 0.0
    per_instance_iou: list[float] = field(default_factory=list)
    ap_small: float = 0.0
    ap_medium: float = 0.0
    ap_large: float = 0.0
    empty_iou_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "ap_per_threshold": {f"{t:.2f}": v for t, v in self.ap_per_threshold.items()},
            "mean_ap": self.mean_ap,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_instance_iou": self.per_instance_iou,
            "empty_iou_pairs": self.empty_iou_pairs,
        }

    def table(self) -> str:
        rows = [f"{'metric':<10}{'value':>8}"]
        rows += [f"{'AP@' + format(t, '.2f'):<10}{v:>8.4f}"
                 for t, v in self.ap_per_threshold.items()]
        rows += [f"{'AP':<10}{self.mean_ap:>8.4f}", f"{'AP_S':<10}{self.ap_small:>8.4f}",
                 f"{'AP_M':<10}{self.ap_medium:>8.4f}", f"{'AP_L':<10}{self.ap_large:>8.4f}"]
        if self.per_instance_iou:
            rows.append(f"{'mIoU':<10}{float(np.mean(self.per_instance_iou)):>8.4f}")
        return "\n".join(rows)


def _match_image(dts: list[Prediction], gts: list[InstanceAnnotation], thr: float,
                 area_rng: tuple[float, float]):
    """Greedy matching for one image/category at one threshold.

    Returns (scores, tp, ignored_dt, n_gt_counted).
    """
    lo, hi = area_rng
    gt_ignore = [g.iscrowd or not (lo <= g.mask.area <= hi) for g in gts]
    # non-ignored ground truth first, as matching prefers them
    gorder = sorted(range(len(gts)), key=lambda i: gt_ignore[i])
    gts = [gts[i] for i in gorder]
    gt_ignore = [gt_ignore[i] for i in gorder]
    crowd = [g.iscrowd for g in gts]
    dts = sorted(dts, key=lambda d: -d.score)[:MAX_DETS]
    ious = _iou_matrix([d.mask for d in dts], [g.mask for g in gts], crowd)

    taken = [False] * len(gts)
    tp = np.zeros(len(dts), dtype=bool)
    dt_ignore = np.zeros(len(dts), dtype=bool)
    for di, det in enumerate(dts):
        best, best_iou = -1, min(thr, 1 - 1e-10)
        for gi in range(len(gts)):
            if taken[gi] and not crowd[gi]:
                continue
            # once a real match exists, stop at the ignored tail
            if best > -1 and not gt_ignore[best] and gt_ignore[gi]:
                break
            if ious[di, gi] < best_iou:
                continue
            best, best_iou = gi, ious[di, gi]
        if best == -1:
            dt_ignore[di] = not (lo <= det.mask.area <= hi)
            continue
        taken[best] = True
        tp[di] = True
        dt_ignore[di] = gt_ignore[best]
    n_gt = sum(1 for ig in gt_ignore if not ig)
    return np.array([d.score for d in dts]), tp, dt_ignore, n_gt


def _average_precision(scores, tp, ignore, n_gt) -> float | None:
    if n_gt == 0:
        return None
    order = np.argsort(-scores, kind="mergesort")
    tp, ignore = tp[order], ignore[order]
    keep = ~ignore
    tps = np.cumsum(tp[keep]).astype(float)
    fps = np.cumsum(~tp[keep]).astype(float)
    if tps.size == 0:
        return 0.0
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.spacing(1))
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < precision.size, precision[np.minimum(idx, precision.size - 1)], 0.0)
    return float(q.mean())


def _ap(preds: Sequence[Prediction], gts: Mapping[int, Sequence[InstanceAnnotation]],
        thr: float, area_rng) -> float:
    cats = sorted({g.category_id for gl in gts.values() for g in gl}
                  | {p.category_id for p in preds})
    per_cat = []
    for cat in cats:
        scores, tps, igns, n_gt = [], [], [], 0
        for image_id in sorted(set(gts) | {p.image_id for p in preds}):
            cat_gts = [g for g in gts.get(image_id, []) if g.category_id == cat]
            cat_dts = [p for p in preds if p.image_id == image_id and p.category_id == cat]
            s, t, i, n = _match_image(cat_dts, cat_gts, thr, area_rng)
            scores.append(s)
            tps.append(t)
            igns.append(i)
            n_gt += n
        ap = _average_precision(np.concatenate(scores), np.concatenate(tps),
                                np.concatenate(igns), n_gt)
        if ap is not None:
            per_cat.append(ap)
    return float(np.mean(per_cat)) if per_cat else 0.0


def evaluate(preds: Sequence[Prediction], gts: Mapping[int, Sequence[InstanceAnnotation]],
             thresholds: Sequence[float] = IOU_THRESHOLDS) -> EvalResult:
    res = EvalResult()
    for thr in thresholds:
        res.ap_per_threshold[float(thr)] = _ap(preds, gts, thr, AREA_RANGES["all"])
    res.mean_ap = float(np.mean(list(res.ap_per_threshold.values()))) if thresholds else 0.0
    for name in ("small", "medium", "large"):
        vals = [_ap(preds, gts, thr, AREA_RANGES[name]) for thr in thresholds]
        setattr(res, f"ap_{name}", float(np.mean(vals)) if vals else 0.0)

    # best same-category IoU per non-crowd ground-truth instance
    for image_id in sorted(gts):
        for g in gts[image_id]:
            if g.iscrowd:
                continue
            best = 0.0
            for p in preds:
                if p.image_id == image_id and p.category_id == g.category_id:
                    iou, empty = mask_iou(p.mask, g.mask, with_flag=True)
                    res.empty_iou_pairs += empty
                    best = max(best, iou)
            res.per_instance_iou.append(best)
    return res
