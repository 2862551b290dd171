"""Texture-extraction heads that map backbone activations to fixed-length vectors."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import functional as F
from .fractal import DEFAULT_SCALES, check_map_size, fractal_dimension_map
from .nn import BatchNorm, Conv2d, Linear, Module
from .tensor import Parameter, ShapeError, Tensor, exp


def rbf_membership(values: Tensor, centers: Tensor, log_gamma: Tensor) -> Tensor:
    """exp(-gamma * (v - mu)^2) with gamma = exp(log_gamma), broadcast by the caller."""
    d = values - centers
    return exp(-(exp(log_gamma) * d * d))


class HistogramLayer(Module):
    """Soft RBF histogram over channel-reduced activations.

    The input is average-pooled by ``downsample``, reduced to
    ``reduced_channels`` by a grouped 1x1 convolution and every reduced
    channel gets ``n_bins`` learnable centres and widths.  Output is the
    spatially averaged membership per (channel, bin), flattened channel-major.
    """

    def __init__(self, in_channels: int, rng: np.random.Generator, n_bins: int = 4,
                 reduced_channels: int = 32, groups: int = 512, downsample: int = 2,
                 normalize_bins: bool = False):
        self.n_bins = n_bins
        self.reduced_channels = reduced_channels
        self.downsample = downsample
        self.normalize_bins = normalize_bins
        self.groups = math.gcd(min(groups, in_channels), in_channels, reduced_channels)
        self.reduce = Conv2d(in_channels, reduced_channels, 1, rng, groups=self.groups)
        centers = np.tile(np.linspace(-1.5, 1.5, n_bins), (reduced_channels, 1))
        self.centers = Parameter(centers, "centers")
        self.log_widths = Parameter(np.zeros((reduced_channels, n_bins)), "log_widths")

    @property
    def output_len(self) -> int:
        return self.n_bins * self.reduced_channels

    def soft_counts(self, y: Tensor) -> Tensor:
        """Per-position memberships, shape (N, R, B, h, w)."""
        n, r, h, w = y.shape
        v = y.reshape(n, r, 1, h, w)
        mu = self.centers.reshape(1, r, self.n_bins, 1, 1)
        lg = self.log_widths.reshape(1, r, self.n_bins, 1, 1)
        m = rbf_membership(v, mu, lg)
        if self.normalize_bins:
            m = m / (m.sum(axis=2, keepdims=True) + 1e-6)
        return m

    def forward(self, x: Tensor) -> Tensor:
        if self.downsample > 1:
            if min(x.shape[2:]) < self.downsample:
                raise ShapeError(f"histogram input {x.shape[2:]} smaller than downsample factor")
            x = F.avg_pool2d(x, self.downsample, self.downsample)
        y = self.reduce(x)
        counts = self.soft_counts(y).mean(axis=(3, 4))
        return counts.reshape(x.shape[0], self.output_len)


class EncodingLayer(Module):
    """Residual codeword encoding followed by L2 normalisation, projection and batch norm."""

    def __init__(self, in_channels: int, rng: np.random.Generator, n_codes: int = 8,
                 out_features: int = 128):
        self.in_channels = in_channels
        self.n_codes = n_codes
        bound = 1.0 / math.sqrt(n_codes)
        self.codewords = Parameter(rng.uniform(-bound, bound, (n_codes, in_channels)), "codewords")
        self.smoothing = Parameter(np.ones(n_codes), "smoothing")
        self.proj = Linear(n_codes * in_channels, out_features, rng)
        self.bn = BatchNorm(out_features)

    @property
    def output_len(self) -> int:
        return self.proj.out_features

    def assign(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (assignment weights (N, P, K), residuals (N, P, K, C))."""
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"encoding layer expects {self.in_channels} channels, got {c}")
        desc = x.reshape(n, c, h * w).transpose(0, 2, 1)
        resid = desc.reshape(n, h * w, 1, c) - self.codewords.reshape(1, 1, self.n_codes, c)
        dist = (resid * resid).sum(axis=3)
        weights = F.softmax(-(dist * self.smoothing.reshape(1, 1, self.n_codes)), axis=2)
        return weights, resid

    def encode(self, x: Tensor) -> Tensor:
        """Unit-length flattened residual encoding, shape (N, K*C)."""
        weights, resid = self.assign(x)
        n, p, k, c = resid.shape
        agg = (weights.reshape(n, p, k, 1) * resid).sum(axis=1)
        return F.l2_normalize(agg.reshape(n, k * c), axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.proj(self.encode(x)))


class FractalPooling(Module):
    """Soft histogram of local fractal dimensions over learnable dimension bins."""

    def __init__(self, n_bins: int = 16, scales: Sequence[int] = DEFAULT_SCALES,
                 upsample: int = 2, bin_range: tuple[float, float] = (2.0, 3.0)):
        self.n_bins = n_bins
        self.scales = tuple(scales)
        self.upsample = upsample
        lo, hi = bin_range
        self.centers = Parameter(np.linspace(lo, hi, n_bins), "centers")
        spacing = (hi - lo) / max(n_bins - 1, 1)
        self.log_widths = Parameter(np.full(n_bins, -2.0 * math.log(spacing)), "log_widths")

    @property
    def output_len(self) -> int:
        return self.n_bins

    def surface(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        if self.upsample != 1:
            x = F.resize(x, (h * self.upsample, w * self.upsample), "bilinear")
        return x.mean(axis=1, keepdims=True)

    def pool_dimensions(self, dims: Tensor) -> Tensor:
        """Average RBF bin memberships of a (N, 1, h, w) dimension map -> (N, n_bins)."""
        n = dims.shape[0]
        v = dims.reshape(n, 1, -1)
        m = rbf_membership(v, self.centers.reshape(1, self.n_bins, 1),
                           self.log_widths.reshape(1, self.n_bins, 1))
        return m.mean(axis=2)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        check_map_size(h * self.upsample, w * self.upsample, self.scales)
        return self.pool_dimensions(fractal_dimension_map(self.surface(x), self.scales))


class GlobalPooling(Module):
    """Spatial average pooling, linear projection and batch norm."""

    def __init__(self, in_channels: int, rng: np.random.Generator, out_features: int = 48,
                 pool_kernel: int | None = None):
        self.in_channels = in_channels
        self.pool_kernel = pool_kernel
        self.proj = Linear(in_channels, out_features, rng)
        self.bn = BatchNorm(out_features)

    @property
    def output_len(self) -> int:
        return self.proj.out_features

    def pool(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"GAP expects {self.in_channels} channels, got {c}")
        if self.pool_kernel is not None and (h, w) != (self.pool_kernel, self.pool_kernel):
            raise ShapeError(f"GAP kernel {self.pool_kernel} does not cover a {h}x{w} map")
        return x.mean(axis=(2, 3))

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.proj(self.pool(x)))
