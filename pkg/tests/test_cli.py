import json

import numpy as np
import pytest

from orientmap.cli import main
from orientmap.coco_io import ImageRecord, instances_to_coco, load_annotations
from orientmap.container import OmapContainer
from orientmap.core import ImageSpec, centroid, pixel_center_grid
from orientmap.encoder import IGNORE, POSITIVE
from orientmap.grouping import AnchorSet, match_anchor
from orientmap.synth import concentric_pair, make_scene

from conftest import write_json


def scenes_doc(scenes):
    images = [ImageRecord(i + 1, s.image.width, s.image.height) for i, s in enumerate(scenes)]
    return instances_to_coco(images, {i + 1: list(s.instances) for i, s in enumerate(scenes)})


@pytest.fixture
def isolated_file(tmp_path):
    rng = np.random.default_rng(7)
    scenes = [make_scene(rng, ImageSpec(192, 192), 4) for _ in range(2)]
    return write_json(tmp_path / "isolated.json", scenes_doc(scenes))


@pytest.fixture
def overlap_file(tmp_path):
    return write_json(tmp_path / "overlap.json", scenes_doc([concentric_pair()]))


@pytest.fixture
def empty_file(tmp_path):
    return write_json(tmp_path / "empty.json",
                      {"images": [{"id": 1, "width": 64, "height": 64}], "annotations": []})


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_encode_positive_pixels_point_at_centroid(tmp_path, capsys, isolated_file):
    code, out, _ = run(capsys, "encode", isolated_file, "--out", tmp_path / "o")
    assert code == 0
    summary = json.loads(out)
    ann = load_annotations(isolated_file)
    assert [s["image_id"] for s in summary] == sorted(ann.images)
    for s in summary:
        box = OmapContainer.read(s["file"])
        assert box.stride == 1 and len(box.maps) == 9
        for inst in ann.instances[s["image_id"]]:
            hits = [k for k, lab in enumerate(box.labels)
                    if (lab[inst.mask.bits] == POSITIVE).any()]
            assert hits
            k = hits[0]
            xs, ys = pixel_center_grid(*box.grid_shape)
            dest = box.maps[k].data + np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]),
                                               axis=-1)
            pos = inst.mask.bits & (box.labels[k] == POSITIVE)
            b = centroid(inst.bbox)
            np.testing.assert_allclose(dest[pos], np.broadcast_to([b.x, b.y], dest[pos].shape),
                                       atol=1e-4)
        assert (tmp_path / "o" / f"{s['image_id']}_a0_labels.png").exists()


def test_encode_empty_is_all_ignore(tmp_path, capsys, empty_file):
    code, out, _ = run(capsys, "encode", empty_file, "--out", tmp_path / "o", "--no-png")
    assert code == 0
    box = OmapContainer.read(tmp_path / "o" / "1.omap")
    assert all((lab == IGNORE).all() for lab in box.labels)
    assert all((m.data == 0).all() for m in box.maps)
    assert not list((tmp_path / "o").glob("*.png"))


def test_encode_is_reproducible_across_runs_and_workers(tmp_path, capsys, isolated_file):
    blobs = []
    for i, w in enumerate((1, 1, 4)):
        d = tmp_path / f"run{i}"
        assert run(capsys, "encode", isolated_file, "--out", d, "--workers", w)[0] == 0
        blobs.append(sorted((p.name, p.read_bytes()) for p in d.iterdir()))
    assert blobs[0] == blobs[1] == blobs[2]


def test_roundtrip_isolated_is_exact(capsys, isolated_file):
    code, out, _ = run(capsys, "roundtrip", isolated_file, "--tau", 0.55)
    rep = json.loads(out)
    assert code == 0 and rep["passed"]
    assert rep["per_instance_iou"] and all(v == 1.0 for v in rep["per_instance_iou"])
    assert rep["mean_iou"] == 1.0


def test_roundtrip_overlap_reports_shortfall(capsys, caplog, overlap_file):
    code, out, _ = run(capsys, "roundtrip", overlap_file, "--tau", 0.55)
    rep = json.loads(out)
    assert code == 3
    assert len(rep["per_instance_iou"]) == 2
    assert all(v < 1.0 for v in rep["per_instance_iou"])
    assert "below floor" in caplog.text


def test_roundtrip_floor_flag(capsys, overlap_file):
    assert run(capsys, "roundtrip", overlap_file, "--floor", 0.0)[0] == 0


def test_roundtrip_empty(capsys, empty_file):
    code, out, _ = run(capsys, "roundtrip", empty_file)
    rep = json.loads(out)
    assert code == 0 and rep["mean_iou"] is None and rep["per_instance_iou"] == []


def test_decode_then_eval(tmp_path, capsys, isolated_file):
    omaps = tmp_path / "o"
    run(capsys, "encode", isolated_file, "--out", omaps, "--no-png")
    ann = load_annotations(isolated_file)
    dets = []
    for image_id, insts in ann.instances.items():
        for i, inst in enumerate(insts):
            dets.append({"image_id": image_id, "bbox": inst.bbox.to_xywh(),
                         "score": 0.9 - 0.01 * i, "category_id": inst.category_id,
                         "anchor_index": match_anchor(inst.bbox, AnchorSet())})
    det_file = write_json(tmp_path / "dets.json", dets)
    res_file = tmp_path / "res.json"
    code, out, _ = run(capsys, "decode", "--detections", det_file, "--omap-dir", omaps,
                       "--out", res_file, "--tau", 0.55)
    assert code == 0
    assert json.loads(out) == {"written": str(res_file), "instances": len(dets), "errors": 0}
    code, out, err = run(capsys, "eval", res_file, isolated_file)
    assert code == 0
    rep = json.loads(out)
    assert rep["mean_ap"] == pytest.approx(1.0)
    assert "AP@0.50" in err


def test_decode_missing_anchor_is_reported(tmp_path, capsys, isolated_file):
    omaps = tmp_path / "o"
    run(capsys, "encode", isolated_file, "--out", omaps, "--no-png")
    det_file = write_json(tmp_path / "d.json", [
        {"image_id": 1, "bbox": [10, 10, 20, 20], "score": 0.9, "category_id": 1,
         "anchor_index": 42}])
    code, out, _ = run(capsys, "decode", "--detections", det_file, "--omap-dir", omaps)
    assert code == 0 and json.loads(out) == []


def test_loss_zero_for_own_targets(tmp_path, capsys, isolated_file):
    omaps = tmp_path / "o"
    run(capsys, "encode", isolated_file, "--out", omaps, "--no-png")
    code, out, _ = run(capsys, "loss", isolated_file, "--pred", omaps / "1.omap",
                       "--image-id", 1, "--det-loss", 2.5)
    rep = json.loads(out)
    assert code == 0
    assert rep["orien_total"] == pytest.approx(0.0, abs=1e-6)
    assert rep["combined"] == pytest.approx(2.5, abs=1e-4)


def test_loss_needs_image_id_for_multi_image(tmp_path, capsys, isolated_file):
    omaps = tmp_path / "o"
    run(capsys, "encode", isolated_file, "--out", omaps, "--no-png")
    code, _, err = run(capsys, "loss", isolated_file, "--pred", omaps / "1.omap")
    assert code == 2 and "--image-id" in err


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--size", 64, "--boxes", 4, "--maps", 3)
    rep = json.loads(out)
    assert code == 0
    assert rep["footprint"]["total_bytes"] == 3 * 2 * 16 * 16 * 4
    assert rep["throughput"]["repeats"] == 3


def test_render_omap_and_results(tmp_path, capsys, isolated_file):
    omaps = tmp_path / "o"
    run(capsys, "encode", isolated_file, "--out", omaps, "--no-png")
    code, out, _ = run(capsys, "render", "--omap", omaps / "1.omap", "--map", 2,
                       "--out", tmp_path / "viz.png")
    assert code == 0
    assert [p.split("/")[-1] for p in json.loads(out)["written"]] == [
        "viz_dx.png", "viz_dy.png", "viz_grad.png"]
    res = write_json(tmp_path / "r.json", [])
    code, out, _ = run(capsys, "render", "--results", res, "--blank", "32x24",
                       "--out", tmp_path / "ov.png")
    assert code == 0 and json.loads(out)["drawn"] == 0


@pytest.mark.parametrize("argv", [[], ["nope"], ["encode"], ["bench", "--size", "x"]])
def test_usage_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_input_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "roundtrip", bad)[0] == 2
    assert run(capsys, "roundtrip", tmp_path / "missing.json")[0] == 2
    schema_bad = write_json(tmp_path / "s.json", {"images": [{"id": "x"}], "annotations": []})
    code, _, err = run(capsys, "encode", schema_bad, "--out", tmp_path / "o")
    assert code == 2 and err
    assert run(capsys, "roundtrip", schema_bad, "--config", tmp_path / "nocfg.toml")[0] == 2
