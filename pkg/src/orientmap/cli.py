"""``orientmap`` command line.

Machine-readable output goes to stdout as JSON, diagnostics to stderr.
Exit codes: 0 success, 1 usage, 2 input error, 3 round-trip floor not met.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .benchkit import Workload, bench_decode, footprint
from .coco_io import (AnnotationError, load_annotations, load_detections, load_results,
                      results_to_json)
from .config import Config, load_config, with_overrides
from .container import ContainerError, OmapContainer
from .core import ImageSpec
from .decoder import decode_all
from .encoder import encode_instances
from .evalkit import Prediction, evaluate
from .loss import combine_loss, orientation_loss
from .pipeline import mean_or_none, roundtrip_image
from .render import (blank_canvas, gradient_image, load_background, overlay_masks, save_png,
                     signed_heatmap)

log = logging.getLogger("orientmap")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_FLOOR = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _config(args) -> Config:
    cfg = load_config(args.config)
    return with_overrides(cfg, workers=args.workers, expand_ratio=args.expand_ratio,
                          tau=args.tau, nms_iou=args.nms_iou,
                          score_threshold=args.score_threshold,
                          render_threshold=args.render_threshold,
                          loss_weight=args.loss_weight,
                          per_map=True if getattr(args, "per_map", False) else None,
                          roundtrip_floor=getattr(args, "floor", None))


def cmd_encode(args, cfg: Config) -> int:
    ann = load_annotations(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for image_id in sorted(ann.images):
        rec = ann.images[image_id]
        bundles = encode_instances(ann.encodable(image_id), cfg.anchors, rec.spec, cfg.encoder,
                                   cfg.workers)
        path = out / f"{image_id}.omap"
        OmapContainer.from_bundles(bundles, cfg.anchors.priors).write(path)
        if not args.no_png:
            from PIL import Image
            for b in bundles:
                Image.fromarray(b.labels.to_png_array()).save(
                    out / f"{image_id}_a{b.anchor_index}_labels.png", format="PNG")
        summary.append({
            "image_id": image_id, "file": str(path),
            "maps": [{"anchor_index": b.anchor_index, "n_pos": b.n_pos, "n_neg": b.n_neg,
                      "n_inst": b.n_inst} for b in bundles],
        })
    _emit(summary)
    return EXIT_OK


def cmd_decode(args, cfg: Config) -> int:
    dets = load_detections(args.detections)
    by_image: dict[int, list] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    results = []
    errors = 0
    for image_id in sorted(by_image):
        path = Path(args.omap_dir) / f"{image_id}.omap"
        box = OmapContainer.read(path)
        h, w = box.grid_shape
        image = ImageSpec(w * box.stride, h * box.stride, stride=box.stride)
        decoded = decode_all(by_image[image_id], box.maps, cfg.decoder, image, cfg.workers)
        errors += sum(1 for d in decoded if d.error)
        results.extend(results_to_json(decoded, image_id))
    if args.out:
        Path(args.out).write_text(json.dumps(results, separators=(",", ":")) + "\n")
        _emit({"written": args.out, "instances": len(results), "errors": errors})
    else:
        _emit(results)
    return EXIT_OK


def cmd_roundtrip(args, cfg: Config) -> int:
    ann = load_annotations(args.annotations)
    per_image = []
    all_ious = []
    for image_id in sorted(ann.images):
        rt = roundtrip_image(ann.encodable(image_id), ann.images[image_id].spec, cfg.anchors,
                             cfg.encoder, cfg.decoder.tau, cfg.workers)
        all_ious.extend(rt.ious)
        per_image.append({
            "image_id": image_id,
            "instances": [{"source_index": inst.source_index, "anchor_index": k, "iou": iou}
                          for inst, k, iou in zip(rt.instances, rt.anchors, rt.ious)],
        })
    mean = mean_or_none(all_ious)
    passed = mean is None or mean >= cfg.roundtrip_floor
    _emit({"tau": cfg.decoder.tau, "expand_ratio": cfg.encoder.expand_ratio,
           "images": per_image, "per_instance_iou": all_ious, "mean_iou": mean,
           "floor": cfg.roundtrip_floor, "passed": passed})
    if not passed:
        log.warning("mean IoU %.4f below floor %.4f", mean, cfg.roundtrip_floor)
        return EXIT_FLOOR
    return EXIT_OK


def _pick_image(ann, image_id):
    if image_id is None:
        if len(ann.images) != 1:
            raise AnnotationError("annotation file has several images; pass --image-id")
        image_id = next(iter(ann.images))
    if image_id not in ann.images:
        raise AnnotationError(f"image {image_id} not in annotation file")
    return image_id


def cmd_loss(args, cfg: Config) -> int:
    ann = load_annotations(args.annotations)
    image_id = _pick_image(ann, args.image_id)
    rec = ann.images[image_id]
    pred = OmapContainer.read(args.pred)
    if len(pred.maps) != len(cfg.anchors):
        raise ContainerError(f"prediction has {len(pred.maps)} maps, anchor table has "
                             f"{len(cfg.anchors)}")
    targets = encode_instances(ann.encodable(image_id), cfg.anchors, rec.spec, cfg.encoder,
                               cfg.workers)
    report = orientation_loss(list(pred.maps), targets, cfg.anchors, cfg.loss)
    if args.det_loss is not None:
        report.combined = combine_loss(args.det_loss, report.orien_total, cfg.loss.weight)
    _emit(report.to_dict())
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    ann = load_annotations(args.annotations)
    preds = [Prediction(r.image_id, r.category_id, r.score, r.mask)
             for r in load_results(args.results)]
    res = evaluate(preds, ann.instances)
    _emit(res.to_dict())
    print(res.table(), file=sys.stderr)
    return EXIT_OK


def cmd_bench(args, cfg: Config) -> int:
    image = ImageSpec(args.size, args.size, stride=args.stride)
    fp = footprint(image, args.stride, args.maps)
    report = bench_decode(Workload(args.size, args.stride, args.maps, args.boxes, args.seed),
                          cfg.decoder, cfg.workers, args.repeats)
    _emit({"footprint": fp.to_dict(), "throughput": report.to_dict()})
    return EXIT_OK


def cmd_render(args, cfg: Config) -> int:
    out = Path(args.out)
    written = []
    if args.omap:
        box = OmapContainer.read(args.omap)
        omap = box.maps[args.map]
        stem = out.with_suffix("")
        for c, name in ((0, "dx"), (1, "dy")):
            path = stem.with_name(f"{stem.name}_{name}.png")
            save_png(signed_heatmap(omap.data[..., c]), path)
            written.append(str(path))
        path = stem.with_name(f"{stem.name}_grad.png")
        save_png(gradient_image(omap), path)
        written.append(str(path))
        _emit({"written": written})
        return EXIT_OK
    if not args.results:
        raise AnnotationError("render needs --omap or --results")
    results = [r for r in load_results(args.results)
               if args.image_id is None or r.image_id == args.image_id]
    if args.background:
        bg = load_background(args.background)
    elif results:
        bg = blank_canvas(results[0].mask.height, results[0].mask.width)
    elif args.blank:
        w, h = (int(v) for v in args.blank.lower().split("x"))
        bg = blank_canvas(h, w)
    else:
        raise AnnotationError("nothing to render: no results and no --blank/--background")
    img, drawn = overlay_masks(bg, [r.mask for r in results], [r.score for r in results],
                               cfg.decoder.render_threshold)
    save_png(img, out)
    _emit({"written": [str(out)], "drawn": drawn})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file")
    common.add_argument("--workers", type=int)
    common.add_argument("--expand-ratio", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--nms-iou", type=float)
    common.add_argument("--score-threshold", type=float)
    common.add_argument("--render-threshold", type=float)
    common.add_argument("--loss-weight", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="orientmap", description="Orientation-map mask codec and evaluation tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("encode", parents=[common], help="annotations -> OMAP containers")
    s.add_argument("annotations")
    s.add_argument("--out", required=True)
    s.add_argument("--no-png", action="store_true", help="skip label PNGs")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="detections + OMAP -> COCO results")
    s.add_argument("--detections", required=True)
    s.add_argument("--omap-dir", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("roundtrip", parents=[common], help="encode then decode at GT boxes")
    s.add_argument("annotations")
    s.add_argument("--floor", type=float, help="minimum mean IoU for exit code 0")
    s.set_defaults(func=cmd_roundtrip)

    s = sub.add_parser("loss", parents=[common], help="orientation loss of a predicted OMAP")
    s.add_argument("annotations")
    s.add_argument("--pred", required=True)
    s.add_argument("--image-id", type=int)
    s.add_argument("--det-loss", type=float, help="detection loss to combine with")
    s.add_argument("--per-map", action="store_true", help="normalise per map, not per scale")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("eval", parents=[common], help="COCO-style mask AP")
    s.add_argument("results")
    s.add_argument("annotations")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="memory footprint and decode throughput")
    s.add_argument("--size", type=int, default=544)
    s.add_argument("--stride", type=int, default=4)
    s.add_argument("--maps", type=int, default=9)
    s.add_argument("--boxes", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("render", parents=[common], help="PNG overlays, heatmaps, gradients")
    s.add_argument("--omap")
    s.add_argument("--map", type=int, default=0, help="map index within --omap")
    s.add_argument("--results")
    s.add_argument("--image-id", type=int)
    s.add_argument("--background")
    s.add_argument("--blank", help="WxH blank canvas")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
    except (OSError, ValueError) as exc:
        print(f"orientmap: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args, cfg)
    except (OSError, ValueError, KeyError, IndexError) as exc:
        print(f"orientmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
