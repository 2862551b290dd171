"""Neural-network operations built on the autodiff tensor."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, concat, make_result, matmul, mean, sqrt


class InvalidLabelError(ValueError):
    pass


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation (no kernel flip) with optional channel groups."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cg, kh, kw = weight.shape
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if cg * groups != c or f % groups:
        raise ShapeError(f"input has {c} channels but kernel {weight.shape} with groups={groups}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    fg, k = f // groups, cg * kh * kw
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # im2col: (groups, N*Ho*Wo, cg*kh*kw), then one GEMM per group
    cols = win.reshape(n, groups, cg, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
    cols = np.ascontiguousarray(cols).reshape(groups, n * ho * wo, k)
    wmat = weight.data.reshape(groups, fg, k)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))
    out = out.reshape(groups, n, ho, wo, fg).transpose(1, 0, 4, 2, 3).reshape(n, f, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def backward(g):
        gout = np.ascontiguousarray(
            g.reshape(n, groups, fg, ho, wo).transpose(1, 0, 3, 4, 2)).reshape(groups, -1, fg)
        gw = np.matmul(gout.transpose(0, 2, 1), cols).reshape(weight.shape)
        gcols = np.matmul(gout, wmat).reshape(groups, n, ho, wo, cg, kh, kw)
        gcols = gcols.transpose(1, 0, 4, 2, 3, 5, 6).reshape(n, c, ho, wo, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.astype(x.dtype, copy=False), "conv2d", inputs, backward)


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    ho, wo = _out_size(h, kernel, stride, 0), _out_size(w, kernel, stride, 0)
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = win.mean(axis=(-2, -1))
    scale = 1.0 / (kernel * kernel)

    def backward(g):
        gx = np.zeros_like(x.data)
        gs = g * scale
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
        return (gx,)

    return make_result(out, "avg_pool2d", (x,), backward)


def max_pool2d(x: Tensor, kernel: int, stride: int = 1) -> Tensor:
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    ho, wo = _out_size(h, kernel, stride, 0), _out_size(w, kernel, stride, 0)
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        di, dj = np.divmod(arg, kernel)
        rows = di + (np.arange(ho) * stride)[None, None, :, None]
        cols = dj + (np.arange(wo) * stride)[None, None, None, :]
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx,)

    return make_result(out, "max_pool2d", (x,), backward)


def min_pool2d(x: Tensor, kernel: int, stride: int = 1) -> Tensor:
    return -max_pool2d(-x, kernel, stride)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight.transpose())
    return out + bias if bias is not None else out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis except the channel axis 1.

    In training mode the running statistics are updated in place (unbiased
    variance, like the usual deep-learning convention).
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        count = x.size // x.shape[1]
        if count < 2:
            raise ShapeError("batch norm in training mode needs more than one value per channel")
        mu = mean(x, axes, keepdims=True)
        xc = x - mu
        var = mean(xc * xc, axes, keepdims=True)
        xhat = xc / sqrt(var + eps)
        bvar = var.data.reshape(-1) * count / (count - 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * bvar
    else:
        xhat = (x - running_mean.reshape(bshape)) / np.sqrt(running_var.reshape(bshape) + eps)
    return xhat * gamma.reshape(bshape) + beta.reshape(bshape)


@lru_cache(maxsize=256)
def _interp_matrix_cached(n_in: int, n_out: int, mode: str, dtype: str) -> np.ndarray:
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    if mode == "nearest":
        src = np.minimum(np.floor(np.arange(n_out) * (n_in / n_out)).astype(int), n_in - 1)
        mat[np.arange(n_out), src] = 1.0
    elif mode == "bilinear":
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, None)
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        lam = src - i0
        np.add.at(mat, (np.arange(n_out), i0), 1.0 - lam)
        np.add.at(mat, (np.arange(n_out), i1), lam)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    mat = mat.astype(dtype)
    mat.setflags(write=False)
    return mat


def interp_matrix(n_in: int, n_out: int, mode: str = "bilinear", dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-d resampling matrix (half-pixel centres, edge clamped)."""
    return _interp_matrix_cached(int(n_in), int(n_out), mode, np.dtype(dtype).str)


def resize(x: Tensor, size: tuple[int, int], mode: str = "bilinear") -> Tensor:
    """Resize the last two axes separably; differentiable w.r.t. ``x``."""
    h, w = x.shape[-2:]
    ah = Tensor(interp_matrix(h, size[0], mode, x.dtype))
    aw = Tensor(interp_matrix(w, size[1], mode, x.dtype).T.copy())
    return matmul(matmul(ah, x), aw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, "softmax", (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, "log_softmax", (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {targets.shape[0]} targets")
    n, c = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise InvalidLabelError(f"targets must lie in [0, {c}), got {targets.min()}..{targets.max()}")
    logp = log_softmax(logits, axis=1)
    return -(logp[np.arange(n), targets].sum() * (1.0 / n))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit length; vectors with norm below eps map to ~0."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom
    live = norm > eps

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(live, (g - out * proj) / denom, g / eps),)

    return make_result(out, "l2_normalize", (x,), backward)


def pad_channels(x: Tensor, total: int) -> Tensor:
    """Zero-pad axis 1 up to ``total`` channels."""
    extra = total - x.shape[1]
    if extra < 0:
        raise ShapeError(f"cannot pad {x.shape[1]} channels down to {total}")
    if extra == 0:
        return x
    z = Tensor(np.zeros((x.shape[0], extra) + x.shape[2:], dtype=x.dtype))
    return concat([x, z], axis=1)
