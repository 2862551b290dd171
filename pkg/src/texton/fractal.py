"""Differentiable local fractal dimension by relaxed differential box counting.

The intensity surface is rescaled so its full range spans as many height
units as the map is wide.  At box size ``r`` a box covers ``r x r`` cells,
i.e. an ``(r+1) x (r+1)`` patch of samples, and needs
``(max - min) / r + 1`` boxes of height ``r`` to cover the surface above it
(the usual ceil-based count with the ceilings dropped so it can be
differentiated).  A window of ``W = max(scales)`` cells is tiled by
``(W/r)^2`` boxes; the local dimension is the negated least-squares slope
of ``log N(r)`` against ``log r``.  A flat surface gives exactly 2.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, amax, amin, clamp, log, make_result

DEFAULT_SCALES = (1, 2, 4, 8)
DIM_MIN, DIM_MAX = 0.0, 3.0


def regression_weights(scales: Sequence[int]) -> np.ndarray:
    """Weights w with slope = sum_r w_r * log N(r) for a least-squares fit on log r."""
    x = np.log(np.asarray(scales, dtype=np.float64))
    xc = x - x.mean()
    return xc / (xc * xc).sum()


def _tiled_box_sum(counts: Tensor, r: int, tiles: int, out_h: int, out_w: int) -> Tensor:
    """Sum ``counts`` over a ``tiles x tiles`` lattice with spacing ``r`` for every window."""
    data = counts.data
    acc = np.zeros(data.shape[:2] + (out_h, out_w), dtype=data.dtype)
    for a in range(tiles):
        for b in range(tiles):
            acc += data[:, :, r * a:r * a + out_h, r * b:r * b + out_w]

    def backward(g):
        gx = np.zeros_like(data)
        for a in range(tiles):
            for b in range(tiles):
                gx[:, :, r * a:r * a + out_h, r * b:r * b + out_w] += g
        return (gx,)

    return make_result(acc, "tiled_box_sum", (counts,), backward)


def check_map_size(h: int, w: int, scales: Sequence[int]) -> None:
    need = 2 * max(scales)
    if h < need or w < need:
        raise ShapeError(f"fractal map needs at least {need}x{need} samples, got {h}x{w}")
    window = max(scales)
    for r in scales:
        if window % r:
            raise ValueError(f"scale {r} does not divide the window size {window}")


def fractal_dimension_map(x: Tensor, scales: Sequence[int] = DEFAULT_SCALES,
                          eps: float = 1e-8) -> Tensor:
    """Local box-counting dimension of each sample's intensity surface.

    ``x`` is (N, 1, h, w); the result is (N, 1, h - W, w - W) with
    W = max(scales), clamped to [0, 3].
    """
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected (N, 1, h, w) surface, got {x.shape}")
    scales = tuple(int(r) for r in scales)
    n, _, h, w = x.shape
    check_map_size(h, w, scales)
    window = max(scales)
    lo = amin(x, axis=(1, 2, 3), keepdims=True)
    hi = amax(x, axis=(1, 2, 3), keepdims=True)
    z = (x - lo) / (hi - lo + eps) * float(max(h, w))
    out_h, out_w = h - window, w - window
    weights = regression_weights(scales)
    slope = None
    for r, wr in zip(scales, weights):
        spread = F.max_pool2d(z, r + 1, 1) - F.min_pool2d(z, r + 1, 1)
        counts = spread * (1.0 / r) + 1.0
        total = _tiled_box_sum(counts, r, window // r, out_h, out_w)
        term = log(total) * float(wr)
        slope = term if slope is None else slope + term
    return clamp(-slope, DIM_MIN, DIM_MAX)
