"""Orientation-map instance mask codec.

Encodes instance masks into per-anchor two-channel offset fields, rebuilds
masks from those fields plus boxes, and provides the matching loss,
COCO I/O, evaluation and benchmarking tools.
"""
from .core import BinaryMask, ImageSpec, InstanceAnnotation, OrientationMap, Rect, Vec2
from .decoder import DecoderConfig, Detection, construct_mask, decode_all
from .encoder import EncoderConfig, TargetBundle, encode_instances, encode_targets
from .grouping import AnchorSet, group_instances, match_anchor
from .loss import LossConfig, orientation_loss

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "BinaryMask", "DecoderConfig", "Detection", "EncoderConfig", "ImageSpec",
    "InstanceAnnotation", "LossConfig", "OrientationMap", "Rect", "TargetBundle", "Vec2",
    "construct_mask", "decode_all", "encode_instances", "encode_targets", "group_instances",
    "match_anchor", "orientation_loss",
]
