"""Memory accounting and decode-stage throughput on synthetic workloads."""
from __future__ import annotations

import hashlib
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .coco_io import rle_compress, rle_encode
from .core import ImageSpec, OrientationMap, Rect
from .decoder import Detection, DecoderConfig, bilinear_upsample, construct_mask, select_detections
from .encoder import EncoderConfig, encode_instances
from .grouping import match_anchor
from .synth import anchor_table, make_scene

MIB = 1024 * 1024


@dataclass(frozen=True)
class FootprintReport:
    width: int
    height: int
    stride: int
    num_maps: int
    channels: int
    bytes_per_value: int
    total_bytes: int
    mebibytes: float

    def to_dict(self) -> dict:
        return asdict(self)


def footprint(image: ImageSpec, stride: int, num_maps: int, channels: int = 2,
              bytes_per_value: int = 4) -> FootprintReport:
    if image.width % stride or image.height % stride:
        raise ValueError(f"{image.width}x{image.height} not divisible by stride {stride}")
    total = num_maps * channels * (image.height // stride) * (image.width // stride) * bytes_per_value
    return FootprintReport(image.width, image.height, stride, num_maps, channels,
                           bytes_per_value, total, total / MIB)


@dataclass(frozen=True)
class Workload:
    size: int = 544
    stride: int = 4
    maps: int = 9
    boxes: int = 100
    seed: int = 0


@dataclass
class ThroughputReport:
    boxes_decoded: int
    workers: int
    repeats: int
    stage_ms: dict[str, float] = field(default_factory=dict)
    total_ms: float = 0.0
    boxes_per_second: float = 0.0
    undefined_rate: bool = False
    digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def make_workload(w: Workload) -> tuple[list[OrientationMap], list[Detection], ImageSpec]:
    """Encode a dense synthetic scene and average-pool its maps to the grid stride."""
    image = ImageSpec(w.size, w.size, stride=w.stride)
    anchors = anchor_table(w.maps)
    rng = np.random.default_rng(w.seed)
    scene = make_scene(rng, image, w.boxes, anchors, isolated=False, min_side=8,
                       max_tries=max(400, 4 * w.boxes))
    bundles = encode_instances(scene.instances, anchors, image, EncoderConfig())
    g = w.stride
    maps = []
    for b in bundles:
        full = np.asarray(b.orientation.data)
        pooled = full.reshape(w.size // g, g, w.size // g, g, 2).mean(axis=(1, 3))
        maps.append(OrientationMap(pooled.astype(np.float32), b.anchor_index, stride=g))
    dets = []
    for inst in scene.instances:
        jitter = rng.normal(0.0, 1.0, 4)
        box = inst.bbox
        jittered = Rect(box.left + jitter[0], box.top + jitter[1],
                        box.right + jitter[2], box.bottom + jitter[3])
        dets.append(Detection(jittered, float(rng.uniform(0.05, 1.0)), inst.category_id,
                              match_anchor(inst.bbox, anchors)))
    return maps, dets, image


def _run_once(maps, dets, cfg: DecoderConfig, image: ImageSpec, workers: int):
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    run = pool.map if pool else map
    try:
        t0 = time.perf_counter()
        survivors = select_detections(dets, cfg)
        t1 = time.perf_counter()
        by_anchor = {m.anchor_index: m for m in maps}
        needed = sorted({d.anchor_index for d in survivors} & set(by_anchor))
        up = dict(zip(needed, run(lambda k: bilinear_upsample(by_anchor[k], image), needed)))
        t2 = time.perf_counter()
        live = [d for d in survivors if d.anchor_index in up]
        masks = list(run(lambda d: construct_mask(up[d.anchor_index], d,
                                                  cfg.tau_for(d.anchor_index)), live))
        t3 = time.perf_counter()
        rles = list(run(lambda m: rle_compress(rle_encode(m)), masks))
        t4 = time.perf_counter()
    finally:
        if pool:
            pool.shutdown()
    stages = {"select": t1 - t0, "upsample": t2 - t1, "construct": t3 - t2, "rle": t4 - t3}
    return stages, t4 - t0, masks, rles


def bench_decode(workload: Workload, cfg: DecoderConfig | None = None, workers: int = 1,
                 repeats: int = 3) -> ThroughputReport:
    """Median stage timings over ``repeats`` runs; masks are hashed into ``digest``."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    cfg = cfg or DecoderConfig()
    maps, dets, image = make_workload(workload)
    runs = [_run_once(maps, dets, cfg, image, workers) for _ in range(repeats)]
    digests = set()
    for _, _, masks, rles in runs:
        h = hashlib.sha256()
        for m, r in zip(masks, rles):
            h.update(m.to_bytes())
            h.update(r.encode("ascii"))
        digests.add(h.hexdigest())
    if len(digests) != 1:
        raise RuntimeError("decode produced different masks across repeats")
    stage_ms = {k: statistics.median(r[0][k] for r in runs) * 1e3 for k in runs[0][0]}
    total_ms = statistics.median(r[1] for r in runs) * 1e3
    n = len(runs[0][2])
    report = ThroughputReport(boxes_decoded=n, workers=workers, repeats=repeats,
                              stage_ms=stage_ms, total_ms=total_ms, digest=digests.pop())
    if n == 0 or total_ms <= 0:
        report.undefined_rate = True
    else:
        report.boxes_per_second = n / (total_ms / 1e3)
    return report
