import json
from pathlib import Path

import numpy as np
import pytest

from orientmap.core import BinaryMask, InstanceAnnotation, Rect

FIXTURES = Path(__file__).parent / "fixtures"


def block_instance(left, top, right, bottom, image=(32, 32), source_index=0, category_id=1):
    h, w = image
    bits = np.zeros((h, w), dtype=bool)
    bits[top:bottom, left:right] = True
    return InstanceAnnotation(category_id, Rect(left, top, right, bottom), BinaryMask(bits),
                              source_index)


def naive_runs(bits):
    """Column-major run lengths, zeros first, by a plain loop."""
    runs, current, n = [], False, 0
    for x in range(bits.shape[1]):
        for y in range(bits.shape[0]):
            v = bool(bits[y, x])
            if v != current:
                runs.append(n)
                current, n = v, 0
            n += 1
    runs.append(n)
    return runs


@pytest.fixture
def coco_doc():
    """Image 1: a polygon rectangle and a crowd RLE block. Image 2: empty."""
    crowd = np.zeros((48, 64), dtype=bool)
    crowd[30:34, 40:44] = True
    return {
        "images": [{"id": 1, "width": 64, "height": 48, "file_name": "a.png"},
                   {"id": 2, "width": 32, "height": 32, "file_name": "b.png"}],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [8, 8, 16, 12],
             "segmentation": [[8, 8, 24, 8, 24, 20, 8, 20]], "iscrowd": 0},
            {"id": 11, "image_id": 1, "category_id": 2, "bbox": [40, 30, 4, 4],
             "segmentation": {"size": [48, 64], "counts": naive_runs(crowd)},
             "iscrowd": 1},
        ],
        "categories": [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}],
    }


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj))
    return str(path)
