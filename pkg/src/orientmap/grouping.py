"""Anchor matching and instance grouping.

Each instance is assigned to the single prior with the highest concentric IoU,
and each prior owns one orientation map.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .core import InstanceAnnotation, Rect

# YOLOv3 COCO priors (w, h) in pixels, smallest scale first.
DEFAULT_PRIORS: tuple[tuple[float, float], ...] = (
    (10, 13), (16, 30), (33, 23),
    (30, 61), (62, 45), (59, 119),
    (116, 90), (156, 198), (373, 326),
)


@dataclass(frozen=True)
class AnchorSet:
    priors: tuple[tuple[float, float], ...] = DEFAULT_PRIORS
    anchors_per_scale: int = 3

    def __post_init__(self):
        priors = tuple((float(w), float(h)) for w, h in self.priors)
        if not priors:
            raise ValueError("anchor set is empty")
        if any(w <= 0 or h <= 0 for w, h in priors):
            raise ValueError("anchor dims must be positive")
        if self.anchors_per_scale <= 0 or len(priors) % self.anchors_per_scale:
            raise ValueError(
                f"{len(priors)} priors cannot be split into scales of {self.anchors_per_scale}")
        object.__setattr__(self, "priors", priors)

    @property
    def num_scales(self) -> int:
        return len(self.priors) // self.anchors_per_scale

    def __len__(self) -> int:
        return len(self.priors)

    def scale_of(self, anchor_index: int) -> int:
        return anchor_index // self.anchors_per_scale

    def scaled(self, factor: float) -> AnchorSet:
        return AnchorSet(tuple((w * factor, h * factor) for w, h in self.priors),
                         self.anchors_per_scale)


def concentric_iou(w1: float, h1: float, w2: float, h2: float) -> float:
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def match_anchor(box: Rect, anchors: AnchorSet) -> int:
    best, best_iou = 0, -1.0
    for i, (aw, ah) in enumerate(anchors.priors):
        iou = concentric_iou(box.width, box.height, aw, ah)
        if iou > best_iou:  # strict: ties keep the lower index
            best, best_iou = i, iou
    return best


@dataclass
class GroupedInstances:
    groups: dict[int, list[InstanceAnnotation]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())

    def anchor_of(self, inst: InstanceAnnotation) -> int:
        for k, members in self.groups.items():
            if any(m is inst for m in members):
                return k
        raise KeyError(inst.source_index)


def group_instances(instances: Iterable[InstanceAnnotation],
                    anchors: AnchorSet) -> GroupedInstances:
    groups: dict[int, list[InstanceAnnotation]] = {i: [] for i in range(len(anchors))}
    for inst in sorted(instances, key=lambda a: a.source_index):
        groups[match_anchor(inst.bbox, anchors)].append(inst)
    return GroupedInstances(groups)


def anchor_indices(boxes: Sequence[Rect], anchors: AnchorSet) -> list[int]:
    return [match_anchor(b, anchors) for b in boxes]
