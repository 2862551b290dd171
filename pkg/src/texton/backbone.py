"""Compact residual CNN producing the shared last-block activation map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .nn import BatchNorm, Conv2d, Module
from .tensor import ShapeError, Tensor


@dataclass
class BackboneConfig:
    """Shape of the residual backbone.

    The defaults give a ResNet-18-shaped trunk: 224x224 inputs come out as a
    512-channel 7x7 map (total stride 32).
    """

    stage_channels: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    stage_strides: list[int] = field(default_factory=lambda: [1, 2, 2, 2])
    blocks_per_stage: int = 2
    input_resolution: int = 224
    stem_channels: int = 64
    stem_stride: int = 2
    stem_pool: int = 2
    freeze: bool = False

    def __post_init__(self):
        if len(self.stage_channels) != len(self.stage_strides):
            raise ValueError("stage_channels and stage_strides must have the same length")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")

    @property
    def total_stride(self) -> int:
        return self.stem_stride * self.stem_pool * int(np.prod(self.stage_strides))

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    def output_size(self, resolution: int | None = None) -> int:
        res = self.input_resolution if resolution is None else resolution
        if res % self.total_stride:
            raise ShapeError(f"resolution {res} not divisible by total stride {self.total_stride}")
        return res // self.total_stride

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls(stage_channels=[16, 32, 64], stage_strides=[1, 2, 2], blocks_per_stage=1,
                   input_resolution=64, stem_channels=16, stem_stride=2, stem_pool=1)


class ResidualBlock(Module):
    """conv-bn-relu-conv-bn plus a parameter-free shortcut (avg-pool, zero channel pad)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator):
        if out_channels < in_channels:
            raise ValueError("residual stages may not shrink the channel count")
        self.stride = stride
        self.out_channels = out_channels
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        self.bn2 = BatchNorm(out_channels)

    def shortcut(self, x: Tensor) -> Tensor:
        if self.stride > 1:
            x = F.avg_pool2d(x, self.stride, self.stride)
        return F.pad_channels(x, self.out_channels)

    def forward(self, x: Tensor) -> Tensor:
        branch = self.bn2(self.conv2(self.bn1(self.conv1(x)).relu()))
        return (branch + self.shortcut(x)).relu()


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        self.stem = Conv2d(3, config.stem_channels, 3, rng, stride=config.stem_stride, padding=1)
        self.stem_bn = BatchNorm(config.stem_channels)
        blocks = []
        channels = config.stem_channels
        for out_c, stride in zip(config.stage_channels, config.stage_strides):
            for b in range(config.blocks_per_stage):
                blocks.append(ResidualBlock(channels, out_c, stride if b == 0 else 1, rng))
                channels = out_c
        self.blocks = blocks

    def forward(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected (N, 3, H, W) images, got {images.shape}")
        h, w = images.shape[2:]
        stride = self.config.total_stride
        if h % stride or w % stride:
            raise ShapeError(f"input {h}x{w} not divisible by total stride {stride}")
        x = self.stem_bn(self.stem(images)).relu()
        if self.config.stem_pool > 1:
            x = F.avg_pool2d(x, self.config.stem_pool, self.config.stem_pool)
        for block in self.blocks:
            x = block(x)
        return x
