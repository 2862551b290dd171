"""Flat ``section.key = value`` run configuration.

Defaults are the published full-scale settings (ResNet-18-shaped trunk,
224 crops, FMD training protocol).  ``--scale desk`` swaps in a small
backbone and 64x64 crops for CPU runs.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .data import AugmentConfig
from .ensemble import ConfigError, EnsembleConfig, LayerConfig, MethodSelection, PROPOSED
from .training import TrainConfig


@dataclass
class ModelSection:
    methods: str = str(PROPOSED)
    aggregator: str = "concat"
    head_depth: int = 1
    head_hidden: int = 256


@dataclass
class DataSection:
    dataset: str = ""
    n_splits: int = 10
    train_fraction: float = 0.75
    split_seed: int = 0


@dataclass
class SynthSection:
    samples_per_class: int = 50
    image_size: int = 64
    noise: float = 0.02
    seed: int = 0


@dataclass
class RunSection:
    out: str = ""
    seed: int = 0
    workers: int = 1
    scale: str = "paper"


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    layers: LayerConfig = field(default_factory=LayerConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def preset(cls, scale: str = "paper") -> "RunConfig":
        cfg = cls()
        if scale == "desk":
            cfg.backbone = BackboneConfig.desk()
            cfg.layers.fap_upsample = 2
            cfg.layers.gap_kernel = 0
            cfg.augment = AugmentConfig.desk(64)
            cfg.train = TrainConfig(epochs=15, batch_size=16, lr=0.01, scheduler="cosine")
            cfg.data.n_splits = 1
        elif scale != "paper":
            raise ConfigError(f"unknown scale {scale!r}; use 'paper' or 'desk'")
        cfg.run.scale = scale
        return cfg

    def selection(self) -> MethodSelection:
        return MethodSelection.parse(self.model.methods)

    def ensemble(self, n_classes: int, selection: MethodSelection | None = None) -> EnsembleConfig:
        return EnsembleConfig(selection=selection or self.selection(),
                              aggregator=self.model.aggregator, n_classes=n_classes,
                              head_depth=self.model.head_depth,
                              head_hidden=self.model.head_hidden,
                              layers=dataclasses.replace(self.layers),
                              backbone=dataclasses.replace(self.backbone))

    # -- flat key/value form --------------------------------------------
    def items(self) -> list[tuple[str, object]]:
        out = []
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                out.append((f"{sec.name}.{f.name}", getattr(obj, f.name)))
        return out

    def set(self, key: str, value) -> None:
        section, _, name = key.partition(".")
        sec_names = {f.name for f in dataclasses.fields(self)}
        if section not in sec_names or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        hints = typing.get_type_hints(type(obj))
        if name not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = parse_value(value, hints[name], key)
        setattr(obj, name, value)

    def dumps(self) -> str:
        lines = ["# texton run configuration"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def to_dict(self) -> dict:
        return {k: v for k, v in self.items()}


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    apply_text(cfg, Path(path).read_text())
    return cfg


def apply_text(cfg: RunConfig, text: str) -> RunConfig:
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        cfg.set(key.strip(), value.strip())
    return cfg


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scalar(text: str, typ, key: str):
    if typ is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from exc


def parse_value(text: str, typ, key: str = "value"):
    args = typing.get_args(typ)
    origin = typing.get_origin(typ)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() in ("none", ""):
            return None
        typ = next(a for a in args if a is not type(None))
        return parse_value(text, typ, key)
    if typing.get_origin(typ) in (list, tuple):
        inner = typing.get_args(typ)[0]
        return [_scalar(t.strip(), inner, key) for t in text.split(",") if t.strip()]
    return _scalar(text, typ, key)
