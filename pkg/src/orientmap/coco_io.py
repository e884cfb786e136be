"""COCO annotation ingest, results export and the RLE codec.

The compressed RLE string format follows the reference COCO toolkit
byte-for-byte: counts are delta-coded against the run two positions back
(from the fourth run on), then written as sign-extended 5-bit groups, low
bits first, each group tagged with a 0x20 continuation bit and offset by 48.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .core import BinaryMask, ImageSpec, InstanceAnnotation, Rect
from .decoder import DecodedInstance, Detection

logger = logging.getLogger(__name__)


class AnnotationError(ValueError):
    """Malformed annotation, detection or RLE input."""


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise AnnotationError("RLE counts must be non-negative")
        if sum(counts) != self.height * self.width:
            raise AnnotationError(
                f"RLE counts sum to {sum(counts)}, expected {self.height * self.width}")
        object.__setattr__(self, "counts", counts)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])


def rle_encode(mask: BinaryMask) -> RleMask:
    flat = mask.bits.ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return RleMask(mask.height, mask.width, ())
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(mask.height, mask.width, tuple(runs))


def rle_decode(rle: RleMask) -> BinaryMask:
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return BinaryMask(flat.reshape((rle.width, rle.height)).T)


def rle_compress(rle: RleMask) -> str:
    out = []
    cnts = rle.counts
    for i, c in enumerate(cnts):
        x = c - cnts[i - 2] if i > 2 else c
        more = True
        while more:
            ch = x & 0x1F
            x >>= 5
            more = (x != -1) if (ch & 0x10) else (x != 0)
            if more:
                ch |= 0x20
            out.append(chr(ch + 48))
    return "".join(out)


def rle_decompress(s: str | bytes, height: int, width: int) -> RleMask:
    if isinstance(s, bytes):
        s = s.decode("ascii")
    cnts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise AnnotationError("truncated RLE string")
            c = ord(s[p]) - 48
            if c < 0 or c > 0x3F:
                raise AnnotationError(f"invalid RLE character {s[p]!r} at offset {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(cnts) > 2:
            x += cnts[-2]
        cnts.append(x)
    return RleMask(height, width, tuple(cnts))


def mask_to_coco_rle(mask: BinaryMask) -> dict:
    return {"size": [mask.height, mask.width], "counts": rle_compress(rle_encode(mask))}


def coco_rle_to_mask(seg: dict) -> BinaryMask:
    h, w = (int(v) for v in seg["size"])
    counts = seg["counts"]
    if isinstance(counts, list):
        return rle_decode(RleMask(h, w, tuple(counts)))
    return rle_decode(rle_decompress(counts, h, w))


def rasterize_polygons(polys: Iterable[Sequence[float] | Sequence[Sequence[float]]],
                       image: ImageSpec | tuple[int, int]) -> BinaryMask:
    """Even-odd fill evaluated at pixel centers; polygons are unioned.

    Each polygon is either a flat COCO list ``[x0, y0, x1, y1, ...]`` or a list
    of ``(x, y)`` points. ``image`` is an ImageSpec or ``(height, width)``.
    """
    h, w = (image.height, image.width) if isinstance(image, ImageSpec) else image
    out = np.zeros((h, w), dtype=bool)
    cx = np.arange(w, dtype=np.float64) + 0.5
    cy = np.arange(h, dtype=np.float64) + 0.5
    for poly in polys:
        pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 3:
            logger.warning("polygon with %d vertices skipped", len(pts))
            continue
        x0, y0 = pts[:, 0], pts[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        # crossings[e, row]: edge e straddles the row's center line
        straddle = (y0[:, None] > cy[None, :]) != (y1[:, None] > cy[None, :])
        # horizontal edges never straddle; their nan/inf intercepts go unused
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cy[None, :] - y0[:, None]) / (y1 - y0)[:, None]
            xint = x0[:, None] + t * (x1 - x0)[:, None]
        for row in np.flatnonzero(straddle.any(axis=0)):
            xs = np.sort(xint[straddle[:, row], row])
            # number of crossings strictly right of each center
            right = xs.size - np.searchsorted(xs, cx, side="right")
            out[row] |= (right % 2) == 1
    return BinaryMask(out)


# -- annotation files ---------------------------------------------------------

_ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["images", "annotations"],
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "width", "height"],
                "properties": {
                    "id": {"type": "integer"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "file_name": {"type": "string"},
                },
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "category_id", "bbox", "segmentation"],
                "properties": {
                    "id": {"type": "integer"},
                    "image_id": {"type": "integer"},
                    "category_id": {"type": "integer"},
                    "bbox": {"type": "array", "items": {"type": "number"},
                             "minItems": 4, "maxItems": 4},
                    "iscrowd": {"type": ["integer", "boolean"]},
                    "segmentation": {
                        "oneOf": [
                            {"type": "array",
                             "items": {"type": "array", "items": {"type": "number"}}},
                            {"type": "object", "required": ["size", "counts"],
                             "properties": {
                                 "size": {"type": "array", "items": {"type": "integer"},
                                          "minItems": 2, "maxItems": 2},
                                 "counts": {"type": ["string", "array"]}}},
                        ]
                    },
                },
            },
        },
        "categories": {"type": "array"},
    },
}

_DETECTION_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["image_id", "bbox", "score", "category_id", "anchor_index"],
        "properties": {
            "image_id": {"type": "integer"},
            "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
            "score": {"type": "number"},
            "category_id": {"type": "integer"},
            "anchor_index": {"type": "integer", "minimum": 0},
        },
    },
}

_RESULTS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["image_id", "category_id", "segmentation", "score"],
        "properties": {
            "image_id": {"type": "integer"},
            "category_id": {"type": "integer"},
            "score": {"type": "number"},
            "segmentation": {"type": "object", "required": ["size", "counts"]},
        },
    },
}


def _validate(doc, schema, what: str):
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{e.json_path}: {e.message}" for e in errors[:10]]
        raise AnnotationError(f"invalid {what}:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str = ""

    @property
    def spec(self) -> ImageSpec:
        return ImageSpec(self.width, self.height, stride=1)


@dataclass
class AnnotationSet:
    images: dict[int, ImageRecord] = field(default_factory=dict)
    instances: dict[int, list[InstanceAnnotation]] = field(default_factory=dict)
    categories: list[dict] = field(default_factory=list)

    def encodable(self, image_id: int) -> list[InstanceAnnotation]:
        """Non-crowd instances, i.e. encoder input."""
        return [a for a in self.instances.get(image_id, []) if not a.iscrowd]


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON ({exc})") from exc


def _segmentation_mask(seg, rec: ImageRecord, where: str) -> BinaryMask:
    if isinstance(seg, dict):
        mask = coco_rle_to_mask(seg)
        if (mask.height, mask.width) != (rec.height, rec.width):
            raise AnnotationError(f"{where}: RLE size {seg['size']} does not match image "
                                  f"{rec.height}x{rec.width}")
        return mask
    return rasterize_polygons(seg, (rec.height, rec.width))


def parse_annotations(doc: dict) -> AnnotationSet:
    _validate(doc, _ANNOTATION_SCHEMA, "annotation file")
    out = AnnotationSet(categories=list(doc.get("categories", [])))
    for im in doc["images"]:
        rec = ImageRecord(im["id"], im["width"], im["height"], im.get("file_name", ""))
        out.images[rec.id] = rec
        out.instances[rec.id] = []
    known_cats = {c["id"] for c in out.categories if "id" in c}
    for idx, ann in enumerate(doc["annotations"]):
        where = f"$.annotations[{idx}]"
        rec = out.images.get(ann["image_id"])
        if rec is None:
            raise AnnotationError(f"{where}.image_id: unknown image {ann['image_id']}")
        if known_cats and ann["category_id"] not in known_cats:
            raise AnnotationError(f"{where}.category_id: unknown category {ann['category_id']}")
        x, y, bw, bh = ann["bbox"]
        if bw < 0 or bh < 0:
            raise AnnotationError(f"{where}.bbox: negative width/height")
        mask = _segmentation_mask(ann["segmentation"], rec, where)
        if bw == 0 or bh == 0:
            tight = mask.bounding_rect()
            if tight is None:
                logger.warning("%s: empty box and empty mask, skipped", where)
                continue
            logger.warning("%s: zero-size bbox, using mask extent", where)
            box = tight
        else:
            box = Rect.from_xywh(x, y, bw, bh)
        tight = mask.bounding_rect()
        if tight is not None and max(abs(tight.left - box.left), abs(tight.top - box.top),
                                     abs(tight.right - box.right),
                                     abs(tight.bottom - box.bottom)) > 1.0:
            logger.warning("%s: bbox %s disagrees with mask extent %s by more than 1px; "
                           "mask kept", where, box.to_xywh(), tight.to_xywh())
        inst = InstanceAnnotation(
            category_id=ann["category_id"], bbox=box, mask=mask, source_index=idx,
            iscrowd=bool(ann.get("iscrowd", 0)), annotation_id=ann.get("id"))
        out.instances[rec.id].append(inst)
    return out


def load_annotations(path) -> AnnotationSet:
    try:
        doc = _read_json(path)
    except OSError as exc:
        raise AnnotationError(f"{path}: {exc.strerror or exc}") from exc
    return parse_annotations(doc)


def instances_to_coco(images: Sequence[ImageRecord],
                      instances: dict[int, Sequence[InstanceAnnotation]],
                      categories: Sequence[dict] = ()) -> dict:
    """Serialise instances back to a COCO annotation document with RLE masks."""
    anns = []
    for rec in images:
        for inst in instances.get(rec.id, []):
            anns.append({
                "id": len(anns) + 1, "image_id": rec.id, "category_id": inst.category_id,
                "bbox": inst.bbox.to_xywh(), "area": inst.mask.area,
                "iscrowd": int(inst.iscrowd), "segmentation": mask_to_coco_rle(inst.mask),
            })
    cats = list(categories) or [{"id": c, "name": str(c)} for c in
                                sorted({a["category_id"] for a in anns})]
    return {
        "images": [{"id": r.id, "width": r.width, "height": r.height,
                    "file_name": r.file_name} for r in images],
        "annotations": anns,
        "categories": cats,
    }


# -- detections and results ---------------------------------------------------

def parse_detections(doc) -> list[Detection]:
    _validate(doc, _DETECTION_SCHEMA, "detection file")
    dets = []
    for idx, d in enumerate(doc):
        x, y, w, h = d["bbox"]
        if w <= 0 or h <= 0:
            raise AnnotationError(f"$[{idx}].bbox: non-positive width/height")
        dets.append(Detection(Rect.from_xywh(x, y, w, h), float(d["score"]),
                              d["category_id"], d["anchor_index"], image_id=d["image_id"]))
    return dets


def load_detections(path) -> list[Detection]:
    try:
        return parse_detections(_read_json(path))
    except OSError as exc:
        raise AnnotationError(f"{path}: {exc.strerror or exc}") from exc


def results_to_json(decoded: Iterable[DecodedInstance], image_id: int | None = None) -> list[dict]:
    out = []
    for item in decoded:
        if item.mask is None:
            continue
        det = item.detection
        iid = det.image_id if det.image_id is not None else image_id
        out.append({
            "image_id": iid,
            "category_id": det.category_id,
            "segmentation": mask_to_coco_rle(item.mask),
            "score": det.score,
        })
    return out


@dataclass(frozen=True)
class ResultInstance:
    image_id: int
    category_id: int
    score: float
    mask: BinaryMask


def parse_results(doc) -> list[ResultInstance]:
    _validate(doc, _RESULTS_SCHEMA, "results file")
    return [ResultInstance(r["image_id"], r["category_id"], float(r["score"]),
                           coco_rle_to_mask(r["segmentation"])) for r in doc]


def load_results(path) -> list[ResultInstance]:
    try:
        return parse_results(_read_json(path))
    except OSError as exc:
        raise AnnotationError(f"{path}: {exc.strerror or exc}") from exc


def write_json(obj, path: str | Path | None):
    text = json.dumps(obj, indent=None, separators=(",", ":"))
    if path is None:
        return text
    Path(path).write_text(text + "\n", encoding="utf-8")
    return text
