"""Ground-truth orientation map generation.

Per anchor group, every pixel ends up in one of three states:

* positive: covered by an instance mask; the vector points at that
  instance's base position (box centroid).
* negative: not covered by any mask but inside at least one expanded valid
  area; the vector pushes the pixel out along the ray from the base position
  to the valid-area border, averaged over all covering areas.
* ignore: everything else, vector (0, 0).
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ImageSpec, InstanceAnnotation, OrientationMap, Rect, Vec2, centroid, pixel_center_grid
from .grouping import AnchorSet, GroupedInstances, group_instances

logger = logging.getLogger(__name__)

IGNORE, NEGATIVE, POSITIVE = 0, 1, 2

# Negative pixels this close to the base position have no usable ray.
DEGENERATE_RADIUS = 0.5


@dataclass(frozen=True)
class EncoderConfig:
    expand_ratio: float = 1.2
    clip_to_image: bool = True

    def __post_init__(self):
        if not (self.expand_ratio >= 1.0 and math.isfinite(self.expand_ratio)):
            raise ValueError(f"expand_ratio must be >= 1, got {self.expand_ratio}")


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Per-pixel supervision state.

    ``labels`` holds IGNORE/NEGATIVE/POSITIVE codes, ``owner`` the source_index
    of the instance owning a positive pixel (-1 elsewhere) and ``coverage`` the
    number of valid areas contributing to a negative pixel.
    """

    labels: np.ndarray
    owner: np.ndarray
    coverage: np.ndarray

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def to_png_array(self) -> np.ndarray:
        lut = np.array([0, 128, 255], dtype=np.uint8)
        return lut[self.labels]


@dataclass(frozen=True, eq=False)
class TargetBundle:
    anchor_index: int
    orientation: OrientationMap
    labels: LabelGrid
    n_pos: int
    n_neg: int
    n_inst: int

    @property
    def n_ignore(self) -> int:
        return self.labels.labels.size - self.n_pos - self.n_neg


def expand_valid_area(box: Rect, r: float, image: ImageSpec | None = None,
                      clip: bool = True) -> Rect:
    """Scale ``box`` by ``r`` about its centroid, optionally clipped to the image.

    Raises ValueError when clipping leaves nothing.
    """
    if r < 1.0:
        raise ValueError(f"expand ratio must be >= 1, got {r}")
    c = centroid(box)
    hw, hh = box.width * r / 2.0, box.height * r / 2.0
    left, top, right, bottom = c.x - hw, c.y - hh, c.x + hw, c.y + hh
    if clip and image is not None:
        left, top = max(left, 0.0), max(top, 0.0)
        right, bottom = min(right, float(image.width)), min(bottom, float(image.height))
        if not (left < right and top < bottom):
            raise ValueError(f"valid area of box {box.to_xywh()} lies outside the image")
    return Rect(left, top, right, bottom)


def compute_alpha(p: Vec2, b: Vec2, area: Rect) -> float:
    """Ray scale placing ``b + alpha * (p - b)`` on the border of ``area``.

    Returns 1.0 for ``p == b``, which makes the resulting vector zero.
    """
    ratios = []
    for num, edge, base in ((p.x - b.x, area.left, b.x), (p.x - b.x, area.right, b.x),
                            (p.y - b.y, area.top, b.y), (p.y - b.y, area.bottom, b.y)):
        den = edge - base
        if den != 0.0:
            ratios.append(num / den)
    m = max(ratios, default=0.0)
    if m <= 0.0:
        return 1.0
    return 1.0 / m


def _negative_field(xs: np.ndarray, ys: np.ndarray, b: Vec2, area: Rect):
    """Vectorised negative targets over a window; returns (vec, usable)."""
    dx = np.broadcast_to(xs[None, :] - b.x, (ys.size, xs.size))
    dy = np.broadcast_to(ys[:, None] - b.y, (ys.size, xs.size))
    m = np.full(dx.shape, -np.inf)
    for num, edge, base in ((dx, area.left, b.x), (dx, area.right, b.x),
                            (dy, area.top, b.y), (dy, area.bottom, b.y)):
        den = edge - base
        if den != 0.0:
            np.maximum(m, num / den, out=m)
    usable = (m > 0.0) & (np.hypot(dx, dy) >= DEGENERATE_RADIUS)
    alpha = np.where(usable, 1.0 / np.where(usable, m, 1.0), 1.0)
    vec = np.stack([(alpha - 1.0) * dx, (alpha - 1.0) * dy], axis=-1)
    vec[~usable] = 0.0
    return vec, usable


def _window(area: Rect, image: ImageSpec) -> tuple[slice, slice]:
    # pixel centers c = i + 0.5 with left <= c < right
    x0 = max(0, math.ceil(area.left - 0.5))
    x1 = min(image.width, math.ceil(area.right - 0.5))
    y0 = max(0, math.ceil(area.top - 0.5))
    y1 = min(image.height, math.ceil(area.bottom - 0.5))
    return slice(y0, max(y0, y1)), slice(x0, max(x0, x1))


def base_and_area(inst: InstanceAnnotation, image: ImageSpec,
                  cfg: EncoderConfig) -> tuple[Vec2, Rect]:
    area = expand_valid_area(inst.bbox, cfg.expand_ratio, image, cfg.clip_to_image)
    b = centroid(inst.bbox)
    if not area.contains_strictly(b):
        b = centroid(area)
        logger.warning("instance %d: centroid outside its clipped valid area, using %s",
                       inst.source_index, b.as_tuple())
    return b, area


def encode_group(anchor_index: int, members: Sequence[InstanceAnnotation], image: ImageSpec,
                 cfg: EncoderConfig) -> TargetBundle:
    h, w = image.height, image.width
    xs, ys = pixel_center_grid(h, w)
    neg_sum = np.zeros((h, w, 2), dtype=np.float64)
    coverage = np.zeros((h, w), dtype=np.int32)
    owner = np.full((h, w), -1, dtype=np.int64)
    base = np.zeros((h, w, 2), dtype=np.float64)

    placed = []
    for inst in sorted(members, key=lambda a: a.source_index):
        if inst.mask.bits.shape != (h, w):
            raise ValueError(f"instance {inst.source_index}: mask shape "
                             f"{inst.mask.bits.shape} != image {(h, w)}")
        try:
            b, area = base_and_area(inst, image, cfg)
        except ValueError as exc:
            logger.warning("instance %d rejected: %s", inst.source_index, exc)
            continue
        placed.append((inst, b))
        sy, sx = _window(area, image)
        vec, usable = _negative_field(xs[sx], ys[sy], b, area)
        neg_sum[sy, sx] += vec
        coverage[sy, sx] += usable

    # paint largest first so the smallest mask (then lowest source_index) wins
    for inst, b in sorted(placed, key=lambda t: (-t[0].mask.area, -t[0].source_index)):
        m = inst.mask.bits
        owner[m] = inst.source_index
        base[m] = (b.x, b.y)

    pos = owner >= 0
    neg = ~pos & (coverage > 0)
    labels = np.full((h, w), IGNORE, dtype=np.uint8)
    labels[neg] = NEGATIVE
    labels[pos] = POSITIVE

    data = np.zeros((h, w, 2), dtype=np.float64)
    data[neg] = neg_sum[neg] / coverage[neg][:, None]
    px = np.broadcast_to(xs[None, :], (h, w))
    py = np.broadcast_to(ys[:, None], (h, w))
    data[pos, 0] = base[pos, 0] - px[pos]
    data[pos, 1] = base[pos, 1] - py[pos]
    coverage = np.where(neg, coverage, 0).astype(np.int32)

    return TargetBundle(
        anchor_index=anchor_index,
        orientation=OrientationMap(data, anchor_index=anchor_index, stride=1),
        labels=LabelGrid(labels, owner, coverage),
        n_pos=int(pos.sum()),
        n_neg=int(neg.sum()),
        n_inst=len(placed),
    )


def encode_targets(groups: GroupedInstances, anchors: AnchorSet, image: ImageSpec,
                   cfg: EncoderConfig | None = None, workers: int = 1) -> list[TargetBundle]:
    """One bundle per anchor index, in anchor order."""
    cfg = cfg or EncoderConfig()
    jobs = [(k, groups.groups.get(k, [])) for k in range(len(anchors))]
    if workers <= 1:
        return [encode_group(k, members, image, cfg) for k, members in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: encode_group(job[0], job[1], image, cfg), jobs))


def encode_instances(instances: Iterable[InstanceAnnotation], anchors: AnchorSet,
                     image: ImageSpec, cfg: EncoderConfig | None = None,
                     workers: int = 1) -> list[TargetBundle]:
    """Group and encode, dropping crowd annotations."""
    kept = [inst for inst in instances if not inst.iscrowd]
    return encode_targets(group_instances(kept, anchors), anchors, image, cfg, workers)
