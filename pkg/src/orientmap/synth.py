"""Deterministic synthetic scenes for round-trip tests and benchmarks."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, ImageSpec, InstanceAnnotation, Rect
from .encoder import expand_valid_area
from .grouping import DEFAULT_PRIORS, AnchorSet

SHAPES = ("ellipse", "rect", "diamond", "rounded")


def shape_patch(kind: str, w: int, h: int) -> np.ndarray:
    """Convex (w, h) footprint containing the patch center."""
    yy, xx = np.mgrid[:h, :w]
    u = (xx + 0.5 - w / 2.0) / (w / 2.0)
    v = (yy + 0.5 - h / 2.0) / (h / 2.0)
    if kind == "ellipse":
        return u * u + v * v < 1.0
    if kind == "rect":
        return np.ones((h, w), dtype=bool)
    if kind == "diamond":
        return np.abs(u) + np.abs(v) < 1.0
    if kind == "rounded":
        return u ** 4 + v ** 4 < 1.0
    raise ValueError(f"unknown shape {kind!r}")


def _tight(patch: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(patch)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


@dataclass(frozen=True)
class Scene:
    image: ImageSpec
    instances: tuple[InstanceAnnotation, ...]


def make_scene(rng: np.random.Generator, image: ImageSpec, n_instances: int,
               anchors: AnchorSet | None = None, expand_ratio: float = 1.2,
               isolated: bool = True, min_side: int = 16, max_tries: int = 400) -> Scene:
    """Place up to ``n_instances`` shapes sized around the anchor priors.

    With ``isolated`` the expanded valid areas stay inside the image and are
    pairwise disjoint, so every instance decodes exactly from ground truth.
    """
    anchors = anchors or AnchorSet()
    fits = [(w, h) for w, h in anchors.priors
            if w * expand_ratio * 1.3 < image.width - 2 and h * expand_ratio * 1.3 < image.height - 2]
    if not fits:
        fits = [(image.width / 4, image.height / 4)]
    placed: list[InstanceAnnotation] = []
    areas: list[Rect] = []
    tries = 0
    while len(placed) < n_instances and tries < max_tries:
        tries += 1
        pw, ph = fits[int(rng.integers(len(fits)))]
        k = rng.uniform(0.75, 1.3)
        w = max(min_side, int(round(pw * k * rng.uniform(0.85, 1.15))))
        h = max(min_side, int(round(ph * k * rng.uniform(0.85, 1.15))))
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        patch = shape_patch(kind, w, h)
        x0, y0, x1, y1 = _tight(patch)
        tw, th = x1 - x0, y1 - y0
        pad_x = int(np.ceil(tw * (expand_ratio - 1) / 2)) + 1
        pad_y = int(np.ceil(th * (expand_ratio - 1) / 2)) + 1
        if tw + 2 * pad_x >= image.width or th + 2 * pad_y >= image.height:
            continue
        ox = int(rng.integers(pad_x, image.width - tw - pad_x + 1))
        oy = int(rng.integers(pad_y, image.height - th - pad_y + 1))
        box = Rect(ox, oy, ox + tw, oy + th)
        area = expand_valid_area(box, expand_ratio, image, clip=False)
        if isolated:
            if not (area.left >= 0 and area.top >= 0 and area.right <= image.width
                    and area.bottom <= image.height):
                continue
            if any(area.intersect(a) is not None for a in areas):
                continue
        bits = np.zeros(image.shape, dtype=bool)
        bits[oy:oy + th, ox:ox + tw] = patch[y0:y1, x0:x1]
        placed.append(InstanceAnnotation(
            category_id=int(rng.integers(1, 4)), bbox=box, mask=BinaryMask(bits),
            source_index=len(placed)))
        areas.append(area)
    return Scene(image, tuple(placed))


def make_suite(seed: int, n_images: int, image: ImageSpec | None = None,
               max_instances: int = 8, anchors: AnchorSet | None = None,
               expand_ratio: float = 1.2) -> list[Scene]:
    image = image or ImageSpec(384, 384)
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n_images):
        n = int(rng.integers(1, max_instances + 1))
        scenes.append(make_scene(rng, image, n, anchors, expand_ratio))
    return scenes


def concentric_pair(image: ImageSpec | None = None, size: tuple[int, int] = (80, 60),
                    offset: int = 2) -> Scene:
    """Two same-category, same-size instances sharing (almost) one base position.

    The left-leaning and right-leaning halves overlap heavily, which the
    representation cannot separate.
    """
    image = image or ImageSpec(192, 192)
    w, h = size
    cx, cy = image.width // 2, image.height // 2
    instances = []
    for i, shift in enumerate((0, offset)):
        x0, y0 = cx - w // 2 + shift, cy - h // 2
        bits = np.zeros(image.shape, dtype=bool)
        if i == 0:
            bits[y0:y0 + h, x0:x0 + w * 2 // 3] = True
            bits[y0:y0 + h // 2, x0:x0 + w] = True
        else:
            bits[y0:y0 + h, x0 + w // 3:x0 + w] = True
            bits[y0 + h // 2:y0 + h, x0:x0 + w] = True
        instances.append(InstanceAnnotation(category_id=1, bbox=Rect(x0, y0, x0 + w, y0 + h),
                                            mask=BinaryMask(bits), source_index=i))
    return Scene(image, tuple(instances))


def anchor_table(num_maps: int) -> AnchorSet:
    """Anchor set with ``num_maps`` priors, cycling the default table upward in size."""
    if num_maps <= 0:
        raise ValueError("need at least one map")
    base = len(DEFAULT_PRIORS)
    priors = [(DEFAULT_PRIORS[i % base][0] * 1.2 ** (i // base),
               DEFAULT_PRIORS[i % base][1] * 1.2 ** (i // base)) for i in range(num_maps)]
    return AnchorSet(tuple(priors), anchors_per_scale=3 if num_maps % 3 == 0 else 1)


def scene_boxes(scene: Scene) -> Sequence[Rect]:
    return [inst.bbox for inst in scene.instances]
