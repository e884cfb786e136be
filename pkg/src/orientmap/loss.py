"""Orientation loss and the combined training objective.

For each scale, the per-pixel smooth-L1 between anchor-normalised predicted
and target vectors is summed separately over positive and negative pixels,
each sum rescaled by ``N_inst / N_count``. Scale losses are added.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import OrientationMap
from .decoder import bilinear_upsample
from .encoder import NEGATIVE, POSITIVE, TargetBundle
from .grouping import AnchorSet


@dataclass(frozen=True)
class LossConfig:
    weight: float = 20.0
    smooth_l1_beta: float = 1.0
    # aggregate N_inst/N_pos/N_neg per map instead of per scale
    per_map: bool = False

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"loss weight must be >= 0, got {self.weight}")
        if not self.smooth_l1_beta > 0:
            raise ValueError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")


@dataclass
class LossReport:
    per_scale: list[tuple[float, float]] = field(default_factory=list)
    orien_total: float = 0.0
    combined: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_scale": [{"pos": p, "neg": n} for p, n in self.per_scale],
            "orien_total": self.orien_total,
            "combined": self.combined,
        }


def smooth_l1(d, beta: float = 1.0):
    """Elementwise smooth-L1; accepts scalars or arrays."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = np.abs(d)
    out = np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)
    return float(out) if np.ndim(out) == 0 else out


def smooth_l1_grad(d, beta: float = 1.0):
    return np.where(np.abs(d) < beta, d / beta, np.sign(d))


def _map_sums(pred: OrientationMap, target: TargetBundle, anchor: tuple[float, float],
              beta: float) -> tuple[float, float]:
    a = np.asarray(anchor, dtype=np.float64)
    diff = (np.asarray(pred.data, dtype=np.float64)
            - np.asarray(target.orientation.data, dtype=np.float64)) / a
    per_pixel = smooth_l1(diff, beta).sum(axis=-1)
    labels = target.labels.labels
    return float(per_pixel[labels == POSITIVE].sum()), float(per_pixel[labels == NEGATIVE].sum())


def orientation_loss(pred: Sequence[OrientationMap], targets: Sequence[TargetBundle],
                     anchors: AnchorSet, cfg: LossConfig | None = None) -> LossReport:
    """Sum of per-scale positive and negative terms.

    Predictions at stride > 1 are bilinearly upsampled first. Empty
    denominators contribute 0.
    """
    cfg = cfg or LossConfig()
    if len(pred) != len(targets):
        raise ValueError(f"{len(pred)} predicted maps vs {len(targets)} targets")
    groups: dict[int, list[tuple[float, float, TargetBundle]]] = {}
    for p, t in zip(pred, targets):
        if p.anchor_index != t.anchor_index:
            raise ValueError(f"anchor mismatch: pred {p.anchor_index} vs target {t.anchor_index}")
        if not 0 <= t.anchor_index < len(anchors):
            raise ValueError(f"anchor index {t.anchor_index} outside anchor table")
        p = bilinear_upsample(p)
        if p.data.shape != t.orientation.data.shape:
            raise ValueError(f"shape mismatch: pred {p.data.shape} vs target "
                             f"{t.orientation.data.shape}")
        pos, neg = _map_sums(p, t, anchors.priors[t.anchor_index], cfg.smooth_l1_beta)
        key = t.anchor_index if cfg.per_map else anchors.scale_of(t.anchor_index)
        groups.setdefault(key, []).append((pos, neg, t))

    report = LossReport()
    for key in sorted(groups):
        members = groups[key]
        n_inst = sum(t.n_inst for _, _, t in members)
        n_pos = sum(t.n_pos for _, _, t in members)
        n_neg = sum(t.n_neg for _, _, t in members)
        pos_sum = sum(p for p, _, _ in members)
        neg_sum = sum(n for _, n, _ in members)
        pos_term = n_inst / n_pos * pos_sum if n_pos else 0.0
        neg_term = n_inst / n_neg * neg_sum if n_neg else 0.0
        report.per_scale.append((pos_term, neg_term))
    report.orien_total = sum(p + n for p, n in report.per_scale)
    return report


def combine_loss(det_loss: float, orien_total: float, weight: float = 20.0) -> float:
    return det_loss + weight * orien_total
