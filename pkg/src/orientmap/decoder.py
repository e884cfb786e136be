"""Mask construction from orientation maps and detections.

A pixel joins a detection's mask iff its destination ``o + p`` lands strictly
inside the box contracted by ``tau`` around the box centroid. No RoI crop is
applied; the whole map is tested.
"""
from __future__ import annotations

import logging
import math
import threading
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import BinaryMask, ImageSpec, OrientationMap, Rect, centroid, pixel_center_grid, rect_iou

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    bbox: Rect
    score: float
    category_id: int
    anchor_index: int
    image_id: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score {self.score}")
        if self.anchor_index < 0:
            raise ValueError(f"negative anchor index {self.anchor_index}")


@dataclass(frozen=True)
class DecoderConfig:
    tau: float = 0.6
    nms_iou: float = 0.5
    score_threshold: float = 0.005
    render_threshold: float = 0.3
    # per-anchor tau overrides, anchor_index -> tau
    tau_overrides: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("nms_iou", "score_threshold", "render_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def tau_for(self, anchor_index: int) -> float:
        return dict(self.tau_overrides).get(anchor_index, self.tau)


@dataclass(frozen=True)
class DecodedInstance:
    detection: Detection
    mask: BinaryMask | None
    error: str | None = None


def bilinear_upsample(omap: OrientationMap, target: ImageSpec | None = None) -> OrientationMap:
    """Half-pixel-center bilinear upsampling to stride 1, edges clamped.

    Output pixel ``i`` samples input coordinate ``(i + 0.5) / stride - 0.5``.
    """
    s = omap.stride
    if target is not None and (target.width != omap.grid_width * s
                               or target.height != omap.grid_height * s):
        raise ValueError(f"map {omap.grid_width}x{omap.grid_height} at stride {s} "
                         f"does not cover {target.width}x{target.height}")
    if s == 1:
        return omap
    gh, gw = omap.grid_height, omap.grid_width

    def axis(n_in):
        u = (np.arange(n_in * s, dtype=np.float64) + 0.5) / s - 0.5
        u = np.clip(u, 0.0, n_in - 1)
        i0 = np.floor(u).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, u - i0

    y0, y1, wy = axis(gh)
    x0, x1, wx = axis(gw)
    src = np.asarray(omap.data, dtype=np.float64)
    # separable: along x on the coarse rows, then along y
    wx = wx[None, :, None]
    rows = src[:, x0] * (1.0 - wx) + src[:, x1] * wx
    wy = wy[:, None, None]
    out = rows[y0] * (1.0 - wy) + rows[y1] * wy
    return OrientationMap(out, anchor_index=omap.anchor_index, stride=1)


def construct_mask(omap: OrientationMap, det: Detection, tau: float) -> BinaryMask:
    if omap.stride != 1:
        raise ValueError("construct_mask needs a full-resolution map; upsample first")
    if omap.anchor_index != det.anchor_index:
        raise ValueError(f"map anchor {omap.anchor_index} != detection anchor {det.anchor_index}")
    h, w = omap.grid_height, omap.grid_width
    box = det.bbox
    b = centroid(box)
    sx, sy = box.width, box.height
    if sx <= 0 or sy <= 0:
        return BinaryMask.zeros(h, w)
    xs, ys = pixel_center_grid(h, w)
    data = omap.data
    inside_x = np.abs(data[..., 0] + xs[None, :] - b.x) < tau * sx
    inside_y = np.abs(data[..., 1] + ys[:, None] - b.y) < tau * sy
    return BinaryMask(inside_x & inside_y)


def nms(dets: Sequence[Detection], iou_thr: float) -> list[Detection]:
    """Greedy per-category NMS; score descending, ties keep input order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    by_cat: dict[int, list[Rect]] = {}
    for i in order:
        d = dets[i]
        same = by_cat.setdefault(d.category_id, [])
        if all(rect_iou(d.bbox, k) <= iou_thr for k in same):
            kept.append(d)
            same.append(d.bbox)
    return kept


class _LazyMaps:
    """Upsamples each anchor's map at most once, on first use."""

    def __init__(self, maps: Mapping[int, OrientationMap], image: ImageSpec | None):
        self._src = maps
        self._image = image
        self._done: dict[int, OrientationMap] = {}
        self._locks = {k: threading.Lock() for k in maps}
        self.upsampled = 0

    def get(self, anchor_index: int) -> OrientationMap:
        if anchor_index not in self._src:
            raise KeyError(f"no orientation map for anchor {anchor_index}")
        with self._locks[anchor_index]:
            if anchor_index not in self._done:
                self._done[anchor_index] = bilinear_upsample(self._src[anchor_index], self._image)
                self.upsampled += 1
            return self._done[anchor_index]


def _index_maps(maps: Sequence[OrientationMap] | Mapping[int, OrientationMap]):
    if isinstance(maps, Mapping):
        return dict(maps)
    out = {}
    for m in maps:
        if m.anchor_index in out:
            raise ValueError(f"duplicate map for anchor {m.anchor_index}")
        out[m.anchor_index] = m
    return out


def select_detections(dets: Sequence[Detection], cfg: DecoderConfig) -> list[Detection]:
    return nms([d for d in dets if d.score >= cfg.score_threshold], cfg.nms_iou)


def decode_all(dets: Sequence[Detection], maps, cfg: DecoderConfig | None = None,
               image: ImageSpec | None = None, workers: int = 1) -> list[DecodedInstance]:
    """Score filter, NMS, then one mask per surviving detection in NMS order."""
    cfg = cfg or DecoderConfig()
    lazy = _LazyMaps(_index_maps(maps), image)
    survivors = select_detections(dets, cfg)

    def one(det: Detection) -> DecodedInstance:
        try:
            omap = lazy.get(det.anchor_index)
        except KeyError as exc:
            logger.warning("detection skipped: %s", exc.args[0])
            return DecodedInstance(det, None, str(exc.args[0]))
        return DecodedInstance(det, construct_mask(omap, det, cfg.tau_for(det.anchor_index)))

    if workers <= 1:
        return [one(d) for d in survivors]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, survivors))


def decode_with_boxes(dets: Sequence[Detection], maps, tau: float,
                      image: ImageSpec | None = None, workers: int = 1) -> list[DecodedInstance]:
    """Decode every detection as given: no score filter, no suppression."""
    cfg = replace(DecoderConfig(), tau=tau, nms_iou=1.0, score_threshold=0.0)
    return decode_all(dets, maps, cfg, image, workers)
