"""Encode ground truth, decode it back with the annotated boxes, and score the result."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import ImageSpec, InstanceAnnotation
from .decoder import Detection, decode_with_boxes
from .encoder import EncoderConfig, TargetBundle, encode_instances
from .evalkit import mask_iou
from .grouping import AnchorSet, match_anchor


@dataclass
class RoundTrip:
    bundles: list[TargetBundle]
    instances: list[InstanceAnnotation]
    anchors: list[int]
    ious: list[float] = field(default_factory=list)
    masks: list = field(default_factory=list)


def gt_detections(instances: Sequence[InstanceAnnotation], anchors: AnchorSet,
                  image_id: int | None = None) -> list[Detection]:
    return [Detection(inst.bbox, 1.0, inst.category_id, match_anchor(inst.bbox, anchors),
                      image_id=image_id) for inst in instances]


def roundtrip_image(instances: Sequence[InstanceAnnotation], image: ImageSpec,
                    anchors: AnchorSet, enc: EncoderConfig, tau: float,
                    workers: int = 1, bundles: list[TargetBundle] | None = None) -> RoundTrip:
    """Per-instance IoU between each annotation and the mask decoded at its own box."""
    kept = [i for i in instances if not i.iscrowd]
    if bundles is None:
        bundles = encode_instances(kept, anchors, image, enc, workers)
    dets = gt_detections(kept, anchors)
    decoded = decode_with_boxes(dets, [b.orientation for b in bundles], tau, image, workers)
    rt = RoundTrip(bundles, kept, [d.anchor_index for d in dets])
    for inst, out in zip(kept, decoded):
        rt.masks.append(out.mask)
        rt.ious.append(mask_iou(out.mask, inst.mask))
    return rt


def mean_or_none(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if len(values) else None
