"""Run configuration loaded from TOML or JSON.

Example (TOML)::

    workers = 4
    roundtrip_floor = 0.99

    [input]
    width = 544
    height = 544
    stride = 4

    [anchors]
    priors = [[10, 13], [16, 30], [33, 23], ...]
    anchors_per_scale = 3

    [encoder]
    expand_ratio = 1.2

    [decoder]
    tau = 0.6

    [loss]
    weight = 20.0
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .core import ImageSpec
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .grouping import AnchorSet
from .loss import LossConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class Config:
    anchors: AnchorSet = field(default_factory=AnchorSet)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    workers: int = 1
    input: ImageSpec = field(default_factory=lambda: ImageSpec(544, 544, 4))
    roundtrip_floor: float = 0.99

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def _section(cls, raw: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"[{name}] unknown keys: {sorted(unknown)}")
    return raw


def config_from_dict(raw: dict) -> Config:
    top = {"anchors", "encoder", "decoder", "loss", "workers", "input", "roundtrip_floor"}
    unknown = set(raw) - top
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    if "anchors" in raw:
        a = dict(raw["anchors"])
        scale = float(a.pop("scale", 1.0))
        _section(AnchorSet, a, "anchors")
        anchors = AnchorSet(tuple(tuple(p) for p in a.get("priors", AnchorSet().priors)),
                            int(a.get("anchors_per_scale", 3)))
        kw["anchors"] = anchors.scaled(scale) if scale != 1.0 else anchors
    if "encoder" in raw:
        kw["encoder"] = EncoderConfig(**_section(EncoderConfig, raw["encoder"], "encoder"))
    if "decoder" in raw:
        d = dict(_section(DecoderConfig, raw["decoder"], "decoder"))
        if "tau_overrides" in d:
            d["tau_overrides"] = tuple(sorted((int(k), float(v))
                                              for k, v in d["tau_overrides"].items()))
        kw["decoder"] = DecoderConfig(**d)
    if "loss" in raw:
        kw["loss"] = LossConfig(**_section(LossConfig, raw["loss"], "loss"))
    if "input" in raw:
        kw["input"] = ImageSpec(**_section(ImageSpec, raw["input"], "input"))
    for key in ("workers", "roundtrip_floor"):
        if key in raw:
            kw[key] = raw[key]
    return Config(**kw)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text)
    return config_from_dict(raw)


def with_overrides(cfg: Config, *, workers=None, expand_ratio=None, tau=None, nms_iou=None,
                   score_threshold=None, render_threshold=None, loss_weight=None,
                   per_map=None, roundtrip_floor=None) -> Config:
    """Apply command-line overrides; ``None`` leaves a value untouched."""
    def pick(**kv):
        return {k: v for k, v in kv.items() if v is not None}

    return replace(
        cfg,
        encoder=replace(cfg.encoder, **pick(expand_ratio=expand_ratio)),
        decoder=replace(cfg.decoder, **pick(tau=tau, nms_iou=nms_iou,
                                             score_threshold=score_threshold,
                                             render_threshold=render_threshold)),
        loss=replace(cfg.loss, **pick(weight=loss_weight, per_map=per_map)),
        **pick(workers=workers, roundtrip_floor=roundtrip_floor),
    )
