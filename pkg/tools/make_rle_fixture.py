"""Regenerate tests/fixtures/coco_rle_reference.json with pycocotools.

Run offline only; the output is checked in and the test suite never imports
pycocotools.
"""
import json
from importlib.metadata import version
from pathlib import Path

import numpy as np
import pycocotools.mask as coco_mask


def case(name, m):
    m = np.asarray(m, dtype=np.uint8)
    enc = coco_mask.encode(np.asfortranarray(m))
    return {
        "name": name,
        "height": int(m.shape[0]),
        "width": int(m.shape[1]),
        "bits": np.packbits(m.astype(bool).ravel()).tobytes().hex(),
        "counts": enc["counts"].decode("ascii"),
        "area": int(coco_mask.area(enc)),
    }


def main():
    rng = np.random.default_rng(20240611)
    cases = [
        case("empty_1x1", np.zeros((1, 1))),
        case("full_1x1", np.ones((1, 1))),
        case("empty_2x2", np.zeros((2, 2))),
        case("full_2x2", np.ones((2, 2))),
    ]
    block = np.zeros((32, 48), dtype=np.uint8)
    block[5:20, 10:41] = 1
    cases.append(case("block_32x48", block))
    yy, xx = np.mgrid[:64, :80]
    cases.append(case("ellipse_64x80", ((xx - 40) / 30.0) ** 2 + ((yy - 31) / 20.0) ** 2 < 1))
    stripes = np.zeros((40, 40), dtype=np.uint8)
    stripes[:, ::3] = 1
    cases.append(case("stripes_40x40", stripes))
    big = np.zeros((300, 500), dtype=np.uint8)
    big[7:290, 3:480] = 1
    big[100:120, 200:260] = 0
    cases.append(case("large_runs_300x500", big))
    for i in range(12):
        h, w = (int(v) for v in rng.integers(1, 60, 2))
        cases.append(case(f"random_{i}", rng.random((h, w)) < rng.random()))
    out = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "coco_rle_reference.json"
    out.write_text(json.dumps({"generator": "pycocotools " + version("pycocotools"),
                               "cases": cases}, indent=1) + "\n")


if __name__ == "__main__":
    main()
