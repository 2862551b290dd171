"""Method selection, feature aggregation and the ensemble classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import functional as F
from .backbone import Backbone, BackboneConfig
from .layers import EncodingLayer, FractalPooling, GlobalPooling, HistogramLayer
from .nn import Linear, Module
from .tensor import Tensor, concat, no_grad

log = logging.getLogger(__name__)

METHODS = ("deepten", "gap", "histogram", "fap")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSelection:
    use_deepten: bool = False
    use_gap: bool = False
    use_histogram: bool = False
    use_fap: bool = False

    def __post_init__(self):
        if not any(self.flags):
            raise ConfigError("at least one texture-extraction method must be selected")

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.use_deepten, self.use_gap, self.use_histogram, self.use_fap)

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(m for m, on in zip(METHODS, self.flags) if on)

    @property
    def k(self) -> int:
        return sum(self.flags)

    @property
    def bitmask(self) -> int:
        return sum(1 << i for i, on in enumerate(self.flags) if on)

    @classmethod
    def from_methods(cls, methods: Iterable[str]) -> "MethodSelection":
        names = [m.strip().lower() for m in methods if m.strip()]
        unknown = set(names) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        return cls(*(m in names for m in METHODS))

    @classmethod
    def from_bitmask(cls, mask: int) -> "MethodSelection":
        return cls(*(bool(mask >> i & 1) for i in range(len(METHODS))))

    @classmethod
    def parse(cls, text: str) -> "MethodSelection":
        return cls.from_methods(text.split(","))

    def __str__(self):
        return ",".join(self.methods)


PROPOSED = MethodSelection(use_deepten=True, use_histogram=True, use_fap=True)


def all_selections() -> list[MethodSelection]:
    """Every nonempty subset of the four methods, in ascending bitmask order."""
    return [MethodSelection.from_bitmask(m) for m in range(1, 1 << len(METHODS))]


@dataclass
class LayerConfig:
    hist_bins: int = 4
    hist_reduced_channels: int = 32
    hist_groups: int = 512
    hist_downsample: int = 2
    hist_normalize: bool = False
    enc_codes: int = 8
    enc_out: int = 128
    fap_bins: int = 16
    fap_scales: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    fap_upsample: int = 4
    gap_out: int = 48
    gap_kernel: int = 7


@dataclass
class EnsembleConfig:
    selection: MethodSelection = PROPOSED
    aggregator: str = "concat"
    n_classes: int = 4
    head_depth: int = 1
    head_hidden: int = 256
    layers: LayerConfig = field(default_factory=LayerConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def validate(self) -> None:
        if self.aggregator not in ("concat", "bilinear"):
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.aggregator == "bilinear" and self.selection.k != 2:
            raise ConfigError(f"bilinear aggregation needs exactly 2 methods, got {self.selection.k}")
        if self.head_depth < 1:
            raise ConfigError("head_depth must be >= 1")

    def method_widths(self) -> dict[str, int]:
        lc = self.layers
        widths = {"deepten": lc.enc_out, "gap": lc.gap_out,
                  "histogram": lc.hist_bins * lc.hist_reduced_channels, "fap": lc.fap_bins}
        return {m: widths[m] for m in self.selection.methods}

    def aggregated_width(self) -> int:
        widths = list(self.method_widths().values())
        if self.aggregator == "bilinear":
            return widths[0] * widths[1]
        return sum(widths)


def aggregate_concat(features: list[Tensor]) -> Tensor:
    if not features:
        raise ValueError("nothing to aggregate")
    n = features[0].shape[0]
    if any(f.shape[0] != n for f in features):
        raise ConfigError("feature batch sizes differ")
    return features[0] if len(features) == 1 else concat(features, axis=1)


def aggregate_bilinear(a: Tensor, b: Tensor) -> Tensor:
    """Flattened per-sample outer product: out[n, i*J + j] = a[n, i] * b[n, j]."""
    n, i = a.shape
    j = b.shape[1]
    return (a.reshape(n, i, 1) * b.reshape(n, 1, j)).reshape(n, i * j)


def size_imbalance(widths: dict[str, int], ratio: float = 8.0) -> list[tuple[str, str]]:
    """Pairs whose feature widths differ by more than ``ratio``."""
    names = list(widths)
    return [(a, b) for x, a in enumerate(names) for b in names[x + 1:]
            if max(widths[a], widths[b]) > ratio * min(widths[a], widths[b])]


class Head(Module):
    def __init__(self, in_features: int, n_classes: int, rng: np.random.Generator,
                 depth: int = 1, hidden: int = 256):
        dims = [in_features] + [hidden] * (depth - 1) + [n_classes]
        self.fcs = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def in_features(self) -> int:
        return self.fcs[0].in_features

    def forward(self, x: Tensor) -> Tensor:
        for i, fc in enumerate(self.fcs):
            x = fc(x)
            if i < len(self.fcs) - 1:
                x = x.relu()
        return x


class TextureEnsemble(Module):
    """Backbone -> selected texture heads -> aggregation -> FC head -> logits."""

    def __init__(self, config: EnsembleConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        lc = config.layers
        c = config.backbone.out_channels
        self.backbone = Backbone(config.backbone, rng)
        sel = config.selection
        # construction order fixed so weights are reproducible per selection
        self.deepten = EncodingLayer(c, rng, lc.enc_codes, lc.enc_out) if sel.use_deepten else None
        self.gap = (GlobalPooling(c, rng, lc.gap_out, lc.gap_kernel or None)
                    if sel.use_gap else None)
        self.histogram = (HistogramLayer(c, rng, lc.hist_bins, lc.hist_reduced_channels,
                                         lc.hist_groups, lc.hist_downsample, lc.hist_normalize)
                          if sel.use_histogram else None)
        self.fap = FractalPooling(lc.fap_bins, lc.fap_scales, lc.fap_upsample) \
            if sel.use_fap else None
        width = sum(self.method(m).output_len for m in sel.methods)
        if config.aggregator == "bilinear":
            a, b = (self.method(m).output_len for m in sel.methods)
            width = a * b
        if width != config.aggregated_width():
            raise ConfigError(f"head width {width} disagrees with configured sizes")
        self.head = Head(width, config.n_classes, rng, config.head_depth, config.head_hidden)
        for a, b in size_imbalance(config.method_widths()):
            log.debug("feature width imbalance between %s and %s", a, b)

    def method(self, name: str) -> Module:
        return getattr(self, name)

    def trainable_parameters(self):
        if self.config.backbone.freeze:
            frozen = {id(p) for p in self.backbone.parameters()}
            return [p for p in self.parameters() if id(p) not in frozen]
        return self.parameters()

    def features(self, images: Tensor) -> dict[str, Tensor]:
        xb = self.backbone(images)
        return {m: self.method(m)(xb) for m in self.config.selection.methods}

    def aggregate(self, feats: dict[str, Tensor]) -> Tensor:
        outs = [feats[m] for m in self.config.selection.methods]
        if self.config.aggregator == "bilinear":
            return aggregate_bilinear(*outs)
        return aggregate_concat(outs)

    def forward(self, images: Tensor) -> Tensor:
        return self.head(self.aggregate(self.features(images)))

    def predict(self, images: Tensor) -> np.ndarray:
        with no_grad():
            logits = self.forward(images).data
        return logits.argmax(axis=1)


def predict_proba(logits: Tensor) -> np.ndarray:
    return F.softmax(logits, axis=1).data
