"""OMAP binary container for stacks of orientation maps.

Layout, little-endian::

    magic     4s   b"OMAP"
    version   u16  low 15 bits = format version, bit 15 = label section present
    stride    u8
    reserved  u8
    num_maps  u16
    height    u32  grid rows
    width     u32  grid columns
    anchors   num_maps x (f32 w, f32 h)
    payload   num_maps x height x width x (f32 dx, f32 dy), row-major
    [labels]  num_maps x (u32 n_pos, u32 n_neg, u32 n_inst, height x width u8)
"""
from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import OrientationMap
from .encoder import TargetBundle

MAGIC = b"OMAP"
VERSION = 1
LABELS_FLAG = 0x8000
_HEADER = struct.Struct("<4sHBBHII")
_COUNTS = struct.Struct("<III")


class ContainerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OmapContainer:
    stride: int
    anchors: tuple[tuple[float, float], ...]
    maps: tuple[OrientationMap, ...]
    labels: tuple[np.ndarray, ...] | None = None
    counts: tuple[tuple[int, int, int], ...] | None = None

    def __post_init__(self):
        if not 0 < self.stride < 256:
            raise ContainerError(f"stride {self.stride} does not fit in u8")
        if len(self.anchors) != len(self.maps):
            raise ContainerError("one anchor per map required")
        shapes = {m.data.shape for m in self.maps}
        if len(shapes) > 1:
            raise ContainerError(f"maps differ in shape: {sorted(shapes)}")
        maps = tuple(OrientationMap(np.asarray(m.data, dtype="<f4"), m.anchor_index, self.stride)
                     for m in self.maps)
        for i, m in enumerate(maps):
            if m.anchor_index != i:
                raise ContainerError(f"map {i} carries anchor index {m.anchor_index}")
        anchors = tuple((float(np.float32(w)), float(np.float32(h))) for w, h in self.anchors)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "anchors", anchors)
        if (self.labels is None) != (self.counts is None):
            raise ContainerError("labels and counts go together")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.maps[0].data.shape[:2] if self.maps else (0, 0)

    @classmethod
    def from_bundles(cls, bundles: Sequence[TargetBundle],
                     anchors: Sequence[tuple[float, float]]) -> OmapContainer:
        return cls(
            stride=1,
            anchors=tuple(anchors),
            maps=tuple(b.orientation for b in bundles),
            labels=tuple(np.asarray(b.labels.labels, dtype=np.uint8) for b in bundles),
            counts=tuple((b.n_pos, b.n_neg, b.n_inst) for b in bundles),
        )

    def to_bytes(self) -> bytes:
        h, w = self.grid_shape
        version = VERSION | (LABELS_FLAG if self.labels is not None else 0)
        parts = [_HEADER.pack(MAGIC, version, self.stride, 0, len(self.maps), h, w)]
        parts.append(np.asarray(self.anchors, dtype="<f4").reshape(-1).tobytes())
        for m in self.maps:
            parts.append(np.ascontiguousarray(m.data, dtype="<f4").tobytes())
        if self.labels is not None:
            for lab, cnt in zip(self.labels, self.counts):
                parts.append(_COUNTS.pack(*cnt))
                parts.append(np.ascontiguousarray(lab, dtype=np.uint8).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> OmapContainer:
        if len(data) < _HEADER.size:
            raise ContainerError("truncated header")
        magic, version, stride, _reserved, n, h, w = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}")
        if version & ~LABELS_FLAG != VERSION:
            raise ContainerError(f"unsupported container version {version & ~LABELS_FLAG}")
        has_labels = bool(version & LABELS_FLAG)
        plane = h * w
        expected = _HEADER.size + n * 8 + n * plane * 8
        if has_labels:
            expected += n * (_COUNTS.size + plane)
        if len(data) != expected:
            raise ContainerError(f"container is {len(data)} bytes, header implies {expected}")
        off = _HEADER.size
        anchors = np.frombuffer(data, dtype="<f4", count=2 * n, offset=off).reshape(n, 2)
        off += n * 8
        maps = []
        for i in range(n):
            arr = np.frombuffer(data, dtype="<f4", count=plane * 2, offset=off).reshape(h, w, 2)
            maps.append(OrientationMap(arr.copy(), i, stride))
            off += plane * 8
        labels = counts = None
        if has_labels:
            labels, counts = [], []
            for _ in range(n):
                counts.append(_COUNTS.unpack_from(data, off))
                off += _COUNTS.size
                labels.append(np.frombuffer(data, dtype=np.uint8, count=plane,
                                            offset=off).reshape(h, w).copy())
                off += plane
            labels, counts = tuple(labels), tuple(counts)
        return cls(stride, tuple(map(tuple, anchors.tolist())), tuple(maps), labels, counts)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> OmapContainer:
        return cls.from_bytes(Path(path).read_bytes())
