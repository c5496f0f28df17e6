"""Spatial operators on NCHW tensors: convolution, pooling, resampling, fusion."""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigurationError, ShapeError, Tensor, as_tensor, concat


def _check_4d(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} expects an NCHW tensor, got shape {x.shape}")


def same_padding(kernel: int) -> int:
    if kernel % 2 == 0:
        raise ConfigurationError(f"same padding needs an odd kernel, got {kernel}")
    return (kernel - 1) // 2


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation.

    ``weight`` is laid out ``(k, k, C_in, C_out)``. ``padding=None`` requests
    same padding, which requires an odd kernel.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    _check_4d(x, "conv2d")
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1]:
        raise ConfigurationError(f"conv2d weight must be (k, k, C_in, C_out), got {weight.shape}")
    k, _, cin, cout = weight.shape
    n, c, h, w = x.shape
    if c != cin:
        raise ConfigurationError(f"conv2d channel mismatch: input has {c}, weight expects {cin}")
    if padding is None:
        padding = same_padding(k)
    if stride < 1:
        raise ConfigurationError(f"stride must be positive, got {stride}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} and kernel {k}")
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # im2col: (N, Ho, Wo, k, k, C_in) contiguous so one GEMM does the work
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 4, 5, 1)).reshape(n * ho * wo, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = cols @ wmat
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (cols.T @ gmat).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1 and padding <= k - 1:
            # transposed convolution: correlate the padded gradient with the flipped kernel
            q = k - 1 - padding
            gn = np.pad(gmat.reshape(n, ho, wo, cout), ((0, 0), (q, q), (q, q), (0, 0)))
            gwin = sliding_window_view(gn, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
            gcols = np.ascontiguousarray(gwin).reshape(n * h * w, k * k * cout)
            wflip = weight.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
            gx = np.ascontiguousarray((gcols @ wflip).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
        elif x.requires_grad:
            gcols = (gmat @ wmat.T).reshape(n, ho, wo, k, k, cin).transpose(0, 5, 1, 2, 3, 4)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gcols[:, :, :, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gmat.sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)

    return Tensor._from_op(out, parents, backward, "conv2d")


def avg_pool2(x) -> Tensor:
    """2x2 mean pooling with stride 2."""
    x = as_tensor(x)
    _check_4d(x, "avg_pool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even height and width, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x,), backward, "avg_pool2")


def downsample(x, times: int) -> Tensor:
    for _ in range(times):
        x = avg_pool2(x)
    return x


@lru_cache(maxsize=256)
def _box_counts(h: int, w: int, k: int) -> np.ndarray:
    r = k // 2
    rows = np.array([min(i + r, h - 1) - max(i - r, 0) + 1 for i in range(h)], dtype=np.float64)
    cols = np.array([min(j + r, w - 1) - max(j - r, 0) + 1 for j in range(w)], dtype=np.float64)
    return np.outer(rows, cols)


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = a.shape[-2:]
    padded = np.pad(a, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.zeros_like(a)
    for i in range(k):
        for j in range(k):
            out += padded[:, :, i : i + h, j : j + w]
    return out


def box_filter(x, k: int = 3) -> Tensor:
    """Stride-1 ``k x k`` local mean that averages only in-frame pixels."""
    x = as_tensor(x)
    _check_4d(x, "box_filter")
    same_padding(k)
    h, w = x.shape[-2:]
    counts = _box_counts(h, w, k).astype(x.dtype)
    out = _box_sum(x.data, k) / counts

    def backward(g):
        return (_box_sum(g / counts, k),)

    return Tensor._from_op(out, (x,), backward, "box_filter")


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, no corner alignment, clamp at the borders
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def bilinear_resample(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    _check_4d(x, "bilinear_resample")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    mh = _interp_matrix(h, out_h).astype(x.dtype)
    mw = _interp_matrix(w, out_w).astype(x.dtype)
    out = mh @ x.data @ mw.T

    def backward(g):
        return (mh.T @ g @ mw,)

    return Tensor._from_op(out, (x,), backward, "bilinear_resample")


def resample_to(x, out_h: int, out_w: int) -> Tensor:
    """Move a feature map to another pyramid level.

    Downsampling by a power of two uses repeated 2x2 mean pooling, upsampling
    uses bilinear interpolation.
    """
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    if h > out_h:
        ratio = h // out_h
        if h % out_h == 0 and w == out_w * ratio and ratio & (ratio - 1) == 0:
            return downsample(x, int(np.log2(ratio)))
    return bilinear_resample(x, out_h, out_w)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]
    ref = inputs[0].shape
    for t in inputs:
        _check_4d(t, "concat_channels")
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels mismatch: {t.shape} vs {ref}")
    return concat(inputs, axis=1)


def channel_weighted_sum(inputs: Sequence[Tensor], weights) -> Tensor:
    """``out[:, c] = sum_i weights[i, c] * inputs[i][:, c]``."""
    inputs = [as_tensor(t) for t in inputs]
    weights = as_tensor(weights)
    shape = inputs[0].shape
    for t in inputs:
        if t.shape != shape:
            raise ShapeError(f"channel_weighted_sum inputs differ: {t.shape} vs {shape}")
    if weights.shape != (len(inputs), shape[1]):
        raise ConfigurationError(
            f"weights shape {weights.shape} does not match ({len(inputs)} sources, {shape[1]} channels)"
        )
    wd = weights.data
    out = np.zeros(shape, dtype=np.result_type(inputs[0].dtype, wd.dtype))
    for i, t in enumerate(inputs):
        out += t.data * wd[i][None, :, None, None]

    def backward(g):
        grads = [g * wd[i][None, :, None, None] if t.requires_grad else None for i, t in enumerate(inputs)]
        gw = None
        if weights.requires_grad:
            gw = np.stack([(g * t.data).sum(axis=(0, 2, 3)) for t in inputs])
        return (*grads, gw)

    return Tensor._from_op(out, (*inputs, weights), backward, "channel_weighted_sum")


def grid_sample(image, x, y) -> Tensor:
    """Bilinearly sample ``image`` at pixel coordinates ``(x, y)``.

    Pixel ``(i, j)`` has its centre at integer coordinates. Coordinates past
    the border are clamped to the edge (the clamped coordinate receives no
    gradient); callers mask those samples separately.
    """
    image, x, y = as_tensor(image), as_tensor(x), as_tensor(y)
    _check_4d(image, "grid_sample")
    n, c, h, w = image.shape
    if x.shape != y.shape or x.ndim != 3 or x.shape[0] != n:
        raise ShapeError(f"grid_sample coordinates must be (N, H', W'), got {x.shape} and {y.shape}")
    ho, wo = x.shape[1:]

    # non-finite coordinates index a safe tap and yield NaN samples
    bad = ~(np.isfinite(x.data) & np.isfinite(y.data))
    xc = np.clip(np.nan_to_num(x.data), 0, w - 1)
    yc = np.clip(np.nan_to_num(y.data), 0, h - 1)
    x0 = np.minimum(np.floor(xc), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(yc), max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0).astype(image.dtype)
    fy = (yc - y0).astype(image.dtype)

    flat = image.data.reshape(n, c, h * w)
    idx = [(y0 * w + x0), (y0 * w + x1), (y1 * w + x0), (y1 * w + x1)]
    taps = [np.take_along_axis(flat, i.reshape(n, 1, -1), axis=2).reshape(n, c, ho, wo) for i in idx]
    weights = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    out = sum(t * wt[:, None] for t, wt in zip(taps, weights))
    if bad.any():
        out = np.where(bad[:, None], np.nan, out)

    def backward(g):
        gimg = gx = gy = None
        if image.requires_grad:
            offsets = (np.arange(n)[:, None] * c + np.arange(c)[None, :]) * (h * w)
            total = np.zeros(n * c * h * w, dtype=np.float64)
            for i, wt in zip(idx, weights):
                flat_idx = (offsets[:, :, None] + i.reshape(n, 1, -1)).ravel()
                total += np.bincount(flat_idx, weights=(g * wt[:, None]).ravel(), minlength=total.size)
            gimg = total.reshape(image.shape).astype(image.dtype)
        if x.requires_grad or y.requires_grad:
            v00, v01, v10, v11 = taps
            dfx = ((1 - fy)[:, None] * (v01 - v00) + fy[:, None] * (v11 - v10))
            dfy = ((1 - fx)[:, None] * (v10 - v00) + fx[:, None] * (v11 - v01))
            inside_x = (x.data >= 0) & (x.data <= w - 1)
            inside_y = (y.data >= 0) & (y.data <= h - 1)
            gx = (g * dfx).sum(axis=1) * inside_x if x.requires_grad else None
            gy = (g * dfy).sum(axis=1) * inside_y if y.requires_grad else None
        return gimg, gx, gy

    return Tensor._from_op(out.astype(image.dtype, copy=False), (image, x, y), backward, "grid_sample")
