"""Geometry and raster types shared across the package.

Coordinate conventions:

* Boxes are continuous, corner-referenced pixel coordinates (COCO style).
* Grid cell ``(ix, iy)`` at stride ``s`` is attributed to the point
  ``((ix + 0.5) * s, (iy + 0.5) * s)``.
* Orientation vectors are always stored in full-resolution pixel units,
  whatever the grid stride.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 4


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite vector ({self.x}, {self.y})")

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box ``[left, right) x [top, bottom)``."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        vals = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rect {vals}")
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate rect {vals}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> Rect:
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_xywh(self) -> list[float]:
        return [self.left, self.top, self.width, self.height]

    def intersect(self, other: Rect) -> Rect | None:
        left = max(self.left, other.left)
        top = max(self.top, other.top)
        right = min(self.right, other.right)
        bottom = min(self.bottom, other.bottom)
        if left < right and top < bottom:
            return Rect(left, top, right, bottom)
        return None

    def contains(self, p: Vec2) -> bool:
        """Half-open containment test."""
        return self.left <= p.x < self.right and self.top <= p.y < self.bottom

    def contains_strictly(self, p: Vec2) -> bool:
        return self.left < p.x < self.right and self.top < p.y < self.bottom

    def expand(self, margin: float) -> Rect:
        return Rect(self.left - margin, self.top - margin,
                    self.right + margin, self.bottom + margin)

    def translate(self, dx: float, dy: float) -> Rect:
        return Rect(self.left + dx, self.top + dy, self.right + dx, self.bottom + dy)


@dataclass(frozen=True)
class ImageSpec:
    width: int
    height: int
    stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.width % self.stride or self.height % self.stride:
            raise ValueError(
                f"image {self.width}x{self.height} not divisible by stride {self.stride}")

    @property
    def rect(self) -> Rect:
        return Rect(0.0, 0.0, float(self.width), float(self.height))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def pixel_center(ix: int, iy: int, stride: int = 1) -> Vec2:
    if ix < 0 or iy < 0:
        raise ValueError("pixel indices must be non-negative")
    return Vec2((ix + 0.5) * stride, (iy + 0.5) * stride)


def pixel_center_grid(height: int, width: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`pixel_center`; returns ``(xs, ys)`` of shape (W,), (H,)."""
    xs = (np.arange(width, dtype=np.float64) + 0.5) * stride
    ys = (np.arange(height, dtype=np.float64) + 0.5) * stride
    return xs, ys


def rect_iou(a: Rect, b: Rect) -> float:
    inter = a.intersect(b)
    if inter is None:
        return 0.0
    ia = inter.area
    return ia / (a.area + b.area - ia)


def centroid(box: Rect) -> Vec2:
    return Vec2((box.left + box.right) / 2.0, (box.top + box.bottom) / 2.0)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


_MASK_MAGIC = b"BMSK"
_MASK_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Dense row-major bitmap. ``bits`` is a read-only bool array of shape (H, W)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool, copy=True)))

    @classmethod
    def zeros(cls, height: int, width: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def bounding_rect(self) -> Rect | None:
        """Tight box around set pixels in corner-referenced coordinates."""
        ys, xs = np.nonzero(self.bits)
        if xs.size == 0:
            return None
        return Rect(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))

    def to_bytes(self) -> bytes:
        packed = np.packbits(self.bits.ravel(order="C"))
        return _MASK_HEADER.pack(_MASK_MAGIC, self.height, self.width) + packed.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> BinaryMask:
        if len(data) < _MASK_HEADER.size:
            raise ValueError("truncated mask header")
        magic, h, w = _MASK_HEADER.unpack_from(data)
        if magic != _MASK_MAGIC:
            raise ValueError(f"bad mask magic {magic!r}")
        n = h * w
        payload = np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEADER.size)
        if payload.size != (n + 7) // 8:
            raise ValueError("mask payload length does not match header")
        bits = np.unpackbits(payload, count=n).astype(bool)
        return cls(bits.reshape(h, w))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class OrientationMap:
    """Two-channel offset field ``data[iy, ix] = (dx, dy)`` bound to one anchor."""

    data: np.ndarray
    anchor_index: int
    stride: int = 1

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ValueError(f"orientation data must be (H, W, 2), got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("orientation map contains non-finite values")
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        object.__setattr__(self, "data", _frozen(data.copy()))

    @property
    def grid_height(self) -> int:
        return self.data.shape[0]

    @property
    def grid_width(self) -> int:
        return self.data.shape[1]

    @property
    def image(self) -> ImageSpec:
        return ImageSpec(self.grid_width * self.stride, self.grid_height * self.stride,
                         stride=self.stride)

    def destinations(self) -> np.ndarray:
        """``o + p`` per cell, in full-resolution pixels."""
        xs, ys = pixel_center_grid(self.grid_height, self.grid_width, self.stride)
        dest = np.array(self.data, dtype=np.float64)
        dest[..., 0] += xs[None, :]
        dest[..., 1] += ys[:, None]
        return dest

    def __eq__(self, other):
        if not isinstance(other, OrientationMap):
            return NotImplemented
        return (self.anchor_index == other.anchor_index and self.stride == other.stride
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class InstanceAnnotation:
    category_id: int
    bbox: Rect
    mask: BinaryMask
    source_index: int
    iscrowd: bool = False
    annotation_id: int | None = field(default=None, compare=False)

    def check_extent(self, tolerance: float = 1.0) -> bool:
        """True if every set pixel center lies inside the bbox grown by ``tolerance``.

        Violations are logged rather than raised; annotations are noisy.
        """
        ys, xs = np.nonzero(self.mask.bits)
        if xs.size == 0:
            return True
        grown = self.bbox.expand(tolerance)
        cx, cy = xs + 0.5, ys + 0.5
        ok = bool(np.all((cx >= grown.left) & (cx <= grown.right)
                         & (cy >= grown.top) & (cy <= grown.bottom)))
        if not ok:
            logger.warning("instance %d: mask extends beyond bbox %s by more than %.1f px",
                           self.source_index, self.bbox.to_xywh(), tolerance)
        return ok
