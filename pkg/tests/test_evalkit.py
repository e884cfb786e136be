import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orientmap.core import BinaryMask, InstanceAnnotation, Rect
from orientmap.evalkit import IOU_THRESHOLDS, Prediction, evaluate, mask_iou

from conftest import block_instance


def block(l, t, r, b, shape=(32, 32)):
    bits = np.zeros(shape, dtype=bool)
    bits[t:b, l:r] = True
    return BinaryMask(bits)


def pred(mask, score, image_id=1, cat=1):
    return Prediction(image_id, cat, score, mask)


# -- mask IoU -------------------------------------------------------------------

def test_iou_identical_is_one():
    m = block(2, 2, 10, 10)
    assert mask_iou(m, m) == 1.0


def test_iou_disjoint_is_zero():
    assert mask_iou(block(0, 0, 4, 4), block(10, 10, 14, 14)) == 0.0


def test_iou_partial_overlap():
    # 2x2 shared out of 4 + 4 - 2 pixels in a 1-row strip layout
    a = block(0, 0, 4, 1)
    b = block(2, 0, 6, 1)
    assert mask_iou(a, b) == pytest.approx(2 / 6)


def test_iou_both_empty_is_flagged_zero():
    e = BinaryMask.zeros(8, 8)
    assert mask_iou(e, e) == 0.0
    assert mask_iou(e, e, with_flag=True) == (0.0, True)
    assert mask_iou(block(0, 0, 2, 2, (8, 8)), e, with_flag=True) == (0.0, False)


def test_iou_shape_mismatch_raises():
    with pytest.raises(ValueError):
        mask_iou(BinaryMask.zeros(4, 4), BinaryMask.zeros(4, 5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = BinaryMask(rng.random((12, 9)) < 0.4)
    b = BinaryMask(rng.random((12, 9)) < 0.4)
    v = mask_iou(a, b)
    assert v == mask_iou(b, a)
    assert 0.0 <= v <= 1.0


# -- average precision ------------------------------------------------------------

def test_perfect_predictions_score_one():
    gts = {1: [block_instance(2, 2, 10, 10), block_instance(14, 14, 30, 30, source_index=1)]}
    preds = [pred(g.mask, 0.9 - 0.1 * i) for i, g in enumerate(gts[1])]
    res = evaluate(preds, gts)
    assert all(v == pytest.approx(1.0) for v in res.ap_per_threshold.values())
    assert res.mean_ap == pytest.approx(1.0)
    assert res.per_instance_iou == [1.0, 1.0]


def test_no_predictions_scores_zero():
    gts = {1: [block_instance(2, 2, 10, 10)]}
    res = evaluate([], gts)
    assert res.mean_ap == 0.0
    assert res.per_instance_iou == [0.0]


def test_hand_computed_ap_with_false_positive_between_hits():
    g1, g2 = block_instance(0, 0, 8, 8), block_instance(16, 16, 24, 24, source_index=1)
    preds = [pred(g1.mask, 0.9), pred(block(24, 0, 32, 8), 0.85), pred(g2.mask, 0.8)]
    res = evaluate(preds, {1: [g1, g2]}, thresholds=[0.5])
    # precision envelope is 1 up to recall 0.5 and 2/3 beyond it
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert res.ap_per_threshold[0.5] == pytest.approx(expected, abs=1e-12)


def test_ap_non_increasing_in_threshold():
    rng = np.random.default_rng(3)
    gts, preds = {}, []
    for image_id in range(1, 6):
        gl = []
        for k in range(3):
            x, y = 10 * k + 1, int(rng.integers(0, 20))
            g = block_instance(x, y, x + 8, y + 8, source_index=k)
            gl.append(g)
            dx = int(rng.integers(-3, 4))
            preds.append(pred(block(max(0, x + dx), y, min(32, x + 8 + dx), y + 8), rng.random(),
                              image_id))
        gts[image_id] = gl
    res = evaluate(preds, gts)
    aps = [res.ap_per_threshold[t] for t in IOU_THRESHOLDS]
    assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


def test_low_score_miss_does_not_raise_ap():
    g = block_instance(0, 0, 8, 8)
    base = [pred(block(1, 0, 8, 8), 0.9)]
    with_fp = base + [pred(block(20, 20, 28, 28), 0.1)]
    a = evaluate(base, {1: [g]}).mean_ap
    b = evaluate(with_fp, {1: [g]}).mean_ap
    assert b <= a


def test_crowd_region_absorbs_detections():
    crowd = InstanceAnnotation(1, Rect(16, 16, 32, 32), block(16, 16, 32, 32), 1, iscrowd=True)
    g = block_instance(0, 0, 8, 8)
    preds = [pred(g.mask, 0.9), pred(block(18, 18, 26, 26), 0.95)]
    res = evaluate(preds, {1: [g, crowd]})
    # the high-scoring detection inside the crowd is ignored, not a false positive
    assert res.mean_ap == pytest.approx(1.0)
    assert len(res.per_instance_iou) == 1


def test_area_ranges_split_small_and_medium():
    shape = (128, 128)
    small = InstanceAnnotation(1, Rect(0, 0, 10, 10), block(0, 0, 10, 10, shape), 0)
    medium = InstanceAnnotation(1, Rect(40, 40, 90, 90), block(40, 40, 90, 90, shape), 1)
    res = evaluate([pred(small.mask, 0.9)], {1: [small, medium]})
    assert res.ap_small == pytest.approx(1.0)
    assert res.ap_medium == 0.0
    assert res.ap_large == 0.0


def test_categories_are_averaged():
    a = block_instance(0, 0, 8, 8, category_id=1)
    b = block_instance(16, 16, 24, 24, source_index=1, category_id=2)
    res = evaluate([pred(a.mask, 0.9, cat=1)], {1: [a, b]})
    assert res.mean_ap == pytest.approx(0.5)


def test_empty_pair_counter():
    g = InstanceAnnotation(1, Rect(0, 0, 1, 1), BinaryMask.zeros(8, 8), 0)
    res = evaluate([pred(BinaryMask.zeros(8, 8), 0.5)], {1: [g]})
    assert res.empty_iou_pairs == 1
    assert res.per_instance_iou == [0.0]


def test_report_formats():
    g = block_instance(0, 0, 8, 8)
    res = evaluate([pred(g.mask, 0.9)], {1: [g]})
    d = res.to_dict()
    assert set(d["ap_per_threshold"]) == {f"{t:.2f}" for t in IOU_THRESHOLDS}
    assert "mIoU" in res.table()


def test_matches_reference_toolkit_on_random_scenes():
    coco = pytest.importorskip("pycocotools.coco")
    cocoeval = pytest.importorskip("pycocotools.cocoeval")
    from orientmap.coco_io import mask_to_coco_rle

    rng = np.random.default_rng(11)
    shape = (64, 64)
    images, anns, dts, gts, preds = [], [], [], {}, []
    aid = 1
    for image_id in range(1, 9):
        images.append({"id": image_id, "width": 64, "height": 64})
        gts[image_id] = []
        for k in range(int(rng.integers(1, 4))):
            x, y = int(rng.integers(0, 48)), int(rng.integers(0, 48))
            w, h = int(rng.integers(4, 16)), int(rng.integers(4, 16))
            m = block(x, y, min(64, x + w), min(64, y + h), shape)
            cat = int(rng.integers(1, 3))
            gts[image_id].append(InstanceAnnotation(cat, Rect(x, y, x + w, y + h), m, k))
            anns.append({"id": aid, "image_id": image_id, "category_id": cat,
                         "segmentation": mask_to_coco_rle(m), "area": m.area,
                         "bbox": [x, y, w, h], "iscrowd": 0})
            aid += 1
            for _ in range(int(rng.integers(0, 3))):
                dx, dy = rng.integers(-4, 5, 2)
                pm = block(max(0, x + dx), max(0, y + dy), min(64, x + w + dx),
                           min(64, y + h + dy), shape)
                if pm.area == 0:
                    continue
                s = float(rng.random())
                preds.append(pred(pm, s, image_id, cat))
                dts.append({"image_id": image_id, "category_id": cat, "score": s,
                            "segmentation": mask_to_coco_rle(pm)})
    ref = coco.COCO()
    ref.dataset = {"images": images, "annotations": anns,
                   "categories": [{"id": 1}, {"id": 2}]}
    ref.createIndex()
    ev = cocoeval.COCOeval(ref, ref.loadRes(dts), "segm")
    ev.evaluate()
    ev.accumulate()
    prec = ev.eval["precision"][:, :, :, 0, 2]  # T, R, K at area=all, maxDets=100
    ref_ap = [float(np.mean(p[p > -1])) for p in prec]

    res = evaluate(preds, gts)
    ours = [res.ap_per_threshold[t] for t in IOU_THRESHOLDS]
    np.testing.assert_allclose(ours, ref_ap, atol=1e-9)
