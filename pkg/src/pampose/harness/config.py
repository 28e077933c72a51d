"""Run configuration and its flat ``key = value`` file form.

Config files are JSON objects with dotted flat keys, e.g.::

    {"seed": 42, "epochs": 30, "pam.reduction_ratio": 16, "pam.insertion_points": ["geo1", "app1"]}

Unknown keys and wrong types are rejected by :data:`CONFIG_SCHEMA`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import jsonschema

from ..data import SHAPE_LABELS
from ..losses import LossConfig
from ..pam import PamConfig
from ..posenet import INSERTION_POINTS, NetConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    epochs: int = 30
    scenes_per_epoch: int = 200
    steps_per_scene: int = 1
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    objects: tuple[str, ...] = ("box", "cylinder", "sphere")
    model_points: int = 2000
    loss_points: int = 100
    num_points: int = 64
    occlusion_max: float = 0.3
    noise_sigma: float = 0.001
    max_rotation_deg: float = 180.0
    eval_scenes: int = 100
    refine_iters: int = 2
    refine_epochs: int = 10
    repeats: int = 1
    output_dir: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.refine_iters < 0:
            raise ConfigError("refine_iters must be >= 0")
        if self.scenes_per_epoch < 1 or self.eval_scenes < 1:
            raise ConfigError("scenes_per_epoch and eval_scenes must be >= 1")
        if not self.objects:
            raise ConfigError("at least one object is required")
        if self.net.num_objects != len(self.objects):
            object.__setattr__(self, "net", replace(self.net, num_objects=len(self.objects)))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        flat = self.to_flat()
        flat.update(overrides)
        return RunConfig.from_flat(flat)

    # -- flat form -------------------------------------------------------

    def to_flat(self) -> dict:
        flat = {}
        for f in fields(self):
            if f.name in ("loss", "net"):
                continue
            v = getattr(self, f.name)
            flat[f.name] = list(v) if isinstance(v, tuple) else v
        flat["loss.w"] = self.loss.w
        net, pam = self.net, self.net.pam
        flat.update(
            {
                "net.appearance_dim": net.appearance_dim,
                "net.geo_widths": list(net.geo_widths),
                "net.app_widths": list(net.app_widths),
                "net.fusion_widths": list(net.fusion_widths),
                "net.fuse_product": net.fuse_product,
                "net.head_widths": list(net.head_widths),
                "net.input_scale": net.input_scale,
                "pam.reduction_ratio": pam.reduction_ratio,
                "pam.gap_convs": pam.gap_conv_count,
                "pam.insertion_points": list(pam.insertion_points),
                "pam.enable_cap": pam.enable_cap,
                "pam.enable_gap": pam.enable_gap,
            }
        )
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        try:
            jsonschema.validate(flat, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config key {where}: {exc.message}") from None
        d = {**cls().to_flat(), **flat}
        try:
            pam = PamConfig(
                channels=d["net.geo_widths"][0],
                reduction_ratio=d["pam.reduction_ratio"],
                gap_conv_count=d["pam.gap_convs"],
                insertion_points=tuple(d["pam.insertion_points"]),
                enable_cap=d["pam.enable_cap"],
                enable_gap=d["pam.enable_gap"],
            )
            net = NetConfig(
                appearance_dim=d["net.appearance_dim"],
                geo_widths=tuple(d["net.geo_widths"]),
                app_widths=tuple(d["net.app_widths"]),
                fusion_widths=tuple(d["net.fusion_widths"]),
                fuse_product=d["net.fuse_product"],
                head_widths=tuple(d["net.head_widths"]),
                num_objects=len(d["objects"]),
                pam=pam,
                input_scale=d["net.input_scale"],
            )
            for point in pam.insertion_points if pam.enabled else ():
                pam.at(net.layer_width(point))
            top = {f.name: d[f.name] for f in fields(cls) if f.name not in ("loss", "net")}
            top["objects"] = tuple(top["objects"])
            return cls(**top, loss=LossConfig(d["loss.w"]), net=net)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def config_hash(self) -> str:
        flat = {k: v for k, v in self.to_flat().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]


_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pampose run config (flat keys)",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "scenes_per_epoch": {"type": "integer", "minimum": 1},
        "steps_per_scene": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "minimum": 0},
        "lr_schedule": {"enum": ["constant", "cosine"]},
        "objects": {"type": "array", "items": {"enum": list(SHAPE_LABELS)}, "minItems": 1},
        "model_points": {"type": "integer", "minimum": 4},
        "loss_points": {"type": "integer", "minimum": 1},
        "num_points": {"type": "integer", "minimum": 1},
        "occlusion_max": {"type": "number", "minimum": 0, "maximum": 0.9},
        "noise_sigma": {"type": "number", "minimum": 0},
        "max_rotation_deg": {"type": "number", "minimum": 0, "maximum": 180},
        "eval_scenes": {"type": "integer", "minimum": 1},
        "refine_iters": {"type": "integer", "minimum": 0},
        "refine_epochs": {"type": "integer", "minimum": 0},
        "repeats": {"type": "integer", "minimum": 1},
        "output_dir": {"type": ["string", "null"]},
        "loss.w": {"type": "number", "exclusiveMinimum": 0},
        "net.appearance_dim": {"type": "integer", "minimum": 1},
        "net.geo_widths": _INT_LIST,
        "net.app_widths": _INT_LIST,
        "net.fusion_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "net.fuse_product": {"type": "boolean"},
        "net.head_widths": _INT_LIST,
        "net.input_scale": {"type": "number", "exclusiveMinimum": 0},
        "pam.reduction_ratio": {"type": "integer", "minimum": 1},
        "pam.gap_convs": {"type": "integer", "minimum": 2},
        "pam.insertion_points": {"type": "array", "items": {"enum": list(INSERTION_POINTS)}, "uniqueItems": True},
        "pam.enable_cap": {"type": "boolean"},
        "pam.enable_gap": {"type": "boolean"},
    },
}


def load_config(path: str | Path) -> RunConfig:
    try:
        flat = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return RunConfig.from_flat(flat)


def save_config(path: str | Path, config: RunConfig) -> None:
    Path(path).write_text(json.dumps(config.to_flat(), indent=2, sort_keys=True) + "\n")
