"""Run configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # clip and model geometry
    frames: int = 8
    image_size: int = 56
    channels: int = 3
    grid: int = 7
    max_detections: int = 8
    num_queries: int = 8
    dim: int = 64
    heads: int = 4
    mlp_hidden: int = 128
    encoder_layers: int = 2
    nao_layers: int = 2
    motion_layers: int = 2
    num_nouns: int = 6
    num_verbs: int = 6
    encoder_attention: str = "per_frame"
    nao_kv: str = "z_LT"
    omd_sampler: str = "scatter"
    # ablation switches
    omd_enabled: bool = True
    nao_decoder_enabled: bool = True
    nao_injection_enabled: bool = True
    # loss weights
    w_iou: float = 1.0
    w_l1: float = 1.0
    w_noun: float = 1.0
    w_verb: float = 1.0
    w_ttc: float = 10.0
    no_object_weight: float = 0.1
    # optimiser
    optimizer: str = "adam"
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    epochs: int = 28
    batch_size: int = 16
    seed: int = 0
    # data generation
    n_train: int = 2000
    n_val: int = 200
    variant: str = "standard"
    hidden_fraction: float = 0.125
    # paths
    data_dir: str = "data"
    out_dir: str = "runs"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type == "int" and isinstance(value, int) and value <= 0 and f.name != "seed":
                raise ConfigError(f"{f.name} must be positive, got {value}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.image_size % self.grid:
            raise ConfigError(f"image size {self.image_size} not divisible by grid {self.grid}")
        choices = {
            "encoder_attention": ("joint", "per_frame"),
            "nao_kv": ("z_LT", "spatial_only"),
            "omd_sampler": ("scatter",),
            "variant": ("standard", "nao_hidden"),
            "optimizer": ("adam", "sgd"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")

    @property
    def patch(self) -> int:
        return self.image_size // self.grid

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def model_dims(self) -> dict:
        keys = ("frames", "image_size", "channels", "grid", "max_detections", "num_queries", "dim", "heads",
                "mlp_hidden", "encoder_layers", "nao_layers", "motion_layers", "num_nouns", "num_verbs",
                "encoder_attention", "nao_kv", "omd_sampler", "omd_enabled", "nao_decoder_enabled",
                "nao_injection_enabled")
        return {k: getattr(self, k) for k in keys}

    def dumps(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, **overrides) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], value, key)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        return cls.loads(Path(path).read_text(), **overrides)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(kind: str, value: str, key: str):
    try:
        if kind == "bool":
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value


# Larger preset for reference runs; far too slow for the numpy backend on a desk machine.
LARGE_SCALE = dict(frames=16, dim=256, encoder_layers=3, motion_layers=3, lr=1e-4)
