"""Convolution, upsampling and window-attention kernels with gradients."""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigurationError, NumericError
from .tensor import Tensor, concat, matmul, record_macs, reshape, roll, softmax, take, transpose

_MASK_VALUE = -1e9


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """``(N, C*k*k, Ho*Wo)`` patch matrix of an already padded input."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    win = as_strided(xp, (n, c, k, k, ho, wo), (sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    return np.ascontiguousarray(win).reshape(n, c * k * k, ho * wo)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Cross-correlation of an ``(N, Cin, H, W)`` input with ``(Cout, Cin, k, k)`` weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError("conv2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ConfigurationError(f"conv2d input has {cin} channels, weight expects {wcin}")
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if stride not in (1, 2) or pad < 0:
        raise ConfigurationError(f"unsupported stride {stride} / pad {pad}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError("conv2d bias shape mismatch")
    _check_finite(x.data, "conv2d input")

    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigurationError("conv2d input smaller than kernel")
    xp = _pad(x.data, pad)
    if stride == 1 and k > 1 and cout <= cin:
        return _conv2d_narrow(x, weight, bias, xp, pad, ho, wo)
    wmat = weight.data.reshape(cout, cin * k * k)
    # columns laid out as (N, Cin*k*k, Ho*Wo) so both GEMMs run on contiguous blocks
    if k == 1:
        cols = np.ascontiguousarray(xp[:, :, ::stride, ::stride][:, :, :ho, :wo]).reshape(n, cin, ho * wo)
    else:
        cols = _im2col(xp, k, stride, ho, wo)
    out = np.matmul(wmat, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]
    record_macs(n * ho * wo * cout * cin * k * k)

    def backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(n, cin, k, k, ho, wo)
            if k == 1 and stride == 1:
                gxp = gcols[:, :, 0, 0]
            else:
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                            gcols[:, :, i, j]
                        )
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def _conv2d_narrow(x: Tensor, weight: Tensor, bias: Optional[Tensor], xp: np.ndarray, pad: int, ho: int, wo: int) -> Tensor:
    """Stride-1 conv for ``cout <= cin``: the patch matrices span output channels, not input channels.

    Forward multiplies every padded position by all ``cout*k*k`` taps and sums
    the shifted tap planes; backward works on patches of the zero-padded output
    gradient. Both avoid the ``cin*k*k``-row im2col buffer.
    """
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    hp, wp = xp.shape[2:]
    taps = weight.data.transpose(0, 2, 3, 1).reshape(cout * k * k, cin)
    planes = np.matmul(taps, xp.reshape(n, cin, hp * wp)).reshape(n, cout, k, k, hp, wp)
    out = np.zeros((n, cout, ho, wo), dtype=planes.dtype)
    for i in range(k):
        for j in range(k):
            out += planes[:, :, i, j, i : i + ho, j : j + wo]
    if bias is not None:
        out += bias.data[None, :, None, None]
    record_macs(n * ho * wo * cout * cin * k * k)

    def backward(g):
        # patches of g padded by k-1: row (o, a, b) at padded input position q holds g[q - (k-1-a, k-1-b)]
        gp = _pad(g, k - 1)
        gcols = _im2col(gp, k, 1, hp, wp)
        gx = gw = gb = None
        if x.requires_grad:
            flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
            gxp = np.matmul(flipped, gcols).reshape(n, cin, hp, wp)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        if weight.requires_grad:
            m = np.matmul(gcols, xp.reshape(n, cin, hp * wp).transpose(0, 2, 1)).sum(axis=0)
            gw = m.reshape(cout, k, k, cin)[:, ::-1, ::-1].transpose(0, 3, 1, 2).copy()
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
) -> Tensor:
    """Transposed convolution with ``(Cin, Cout, k, k)`` weights producing exactly ``stride``x the input size.

    Padding is ``k // 2`` with one row/column of output padding, so the
    result matches a zero-stuffed input convolved with the flipped kernel.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError("conv_transpose2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    wcin, cout, k, _ = weight.shape
    if wcin != cin:
        raise ConfigurationError(f"conv_transpose2d input has {cin} channels, weight expects {wcin}")
    if k % 2 == 0:
        raise ConfigurationError("conv_transpose2d kernel must be odd")
    _check_finite(x.data, "conv_transpose2d input")
    s, p = stride, k // 2
    ho, wo = s * h, s * w
    full_h, full_w = (h - 1) * s + k + s - 1, (w - 1) * s + k + s - 1
    wmat = weight.data.reshape(cin, cout * k * k)

    cols = np.matmul(wmat.T, x.data.reshape(n, cin, h * w)).reshape(n, cout, k, k, h, w)
    full = np.zeros((n, cout, full_h, full_w), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + s * (h - 1) + 1 : s, j : j + s * (w - 1) + 1 : s] += cols[:, :, i, j]
    out = np.ascontiguousarray(full[:, :, p : p + ho, p : p + wo])
    if bias is not None:
        out += bias.data[None, :, None, None]
    record_macs(n * h * w * cin * cout * k * k)

    def backward(g):
        gfull = np.zeros((n, cout, full_h, full_w), dtype=g.dtype)
        gfull[:, :, p : p + ho, p : p + wo] = g
        gcols = _im2col(gfull, k, s, h, w)
        gx = np.matmul(wmat, gcols).reshape(n, cin, h, w) if x.requires_grad else None
        gw = gb = None
        if weight.requires_grad:
            xm = x.data.reshape(n, cin, h * w)
            gw = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def upsample_nearest(x: Tensor, scale: int = 2) -> Tensor:
    out = x.data.repeat(scale, axis=2).repeat(scale, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward)


def pixel_shuffle(x: Tensor, scale: int = 2) -> Tensor:
    """Rearrange ``(N, C*r*r, H, W)`` into ``(N, C, H*r, W*r)``; channel ``c*r*r + i*r + j`` lands at offset ``(i, j)``."""
    n, c, h, w = x.shape
    r = scale
    if c % (r * r):
        raise ConfigurationError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    y = reshape(x, (n, c // (r * r), r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, c // (r * r), h * r, w * r))


def upsample2x(
    x: Tensor,
    mode: str,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Double the spatial size with one of the three supported upsampling schemes."""
    if mode == "nearest-then-conv":
        up = upsample_nearest(x, 2)
        if weight is None:
            return up
        return conv2d(up, weight, bias, stride=1, pad=weight.shape[-1] // 2)
    if mode == "transposed-conv":
        if weight is None:
            raise ConfigurationError("transposed-conv upsampling needs a weight")
        return conv_transpose2d(x, weight, bias, stride=2)
    if mode == "pixel-shuffle":
        if weight is not None:
            x = conv2d(x, weight, bias, stride=1, pad=weight.shape[-1] // 2)
        return pixel_shuffle(x, 2)
    raise ConfigurationError(f"unknown upsampling mode {mode!r}")


@lru_cache(maxsize=64)
def relative_position_index(window: int) -> np.ndarray:
    """Index into a ``((2w-1)**2, heads)`` bias table for every token pair of a window."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    idx = rel[0] * (2 * window - 1) + rel[1]
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=64)
def shifted_window_mask(h: int, w: int, window: int) -> np.ndarray:
    """Additive ``(n_windows, T, T)`` mask blocking token pairs that wrapped around the image edge."""
    shift = window // 2
    labels = np.zeros((h, w), dtype=np.int64)
    region = 0
    for hs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
        for ws in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
            labels[hs, ws] = region
            region += 1
    t = window * window
    win = labels.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3).reshape(-1, t)
    mask = np.where(win[:, :, None] != win[:, None, :], _MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def window_attention(
    x: Tensor,
    qkv_weight: Tensor,
    qkv_bias: Optional[Tensor],
    proj_weight: Tensor,
    proj_bias: Optional[Tensor],
    rel_bias_table: Optional[Tensor],
    heads: int,
    window: int,
    shifted: bool = False,
    return_weights: bool = False,
):
    """Multi-head self-attention inside non-overlapping ``window`` x ``window`` blocks.

    ``qkv_weight`` is ``(C, 3C)`` and ``proj_weight`` is ``(C, C)``, both applied
    to row-vector tokens. With ``shifted`` the map is rolled by half a window
    first and rolled back afterwards; token pairs that only meet because of
    the wrap-around are masked out.
    """
    n, c, h, w = x.shape
    if c % heads:
        raise ConfigurationError(f"{c} channels not divisible by {heads} heads")
    if h % window or w % window:
        raise ConfigurationError(f"{h}x{w} map not divisible by window {window}")
    d = c // heads
    t = window * window
    nh, nw = h // window, w // window
    shift = window // 2 if shifted else 0

    if shift:
        x = roll(x, (-shift, -shift), (2, 3))
    tokens = reshape(x, (n, c, nh, window, nw, window))
    tokens = transpose(tokens, (0, 2, 4, 3, 5, 1))
    tokens = reshape(tokens, (n * nh * nw, t, c))

    qkv = matmul(tokens, qkv_weight)
    if qkv_bias is not None:
        qkv = qkv + qkv_bias
    qkv = transpose(reshape(qkv, (n * nh * nw, t, 3, heads, d)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]

    scores = matmul(q * (1.0 / np.sqrt(d)), transpose(k, (0, 1, 3, 2)))
    if rel_bias_table is not None:
        bias = take(rel_bias_table, relative_position_index(window))  # (T, T, heads)
        scores = scores + transpose(bias, (2, 0, 1))
    if shift:
        mask = shifted_window_mask(h, w, window).astype(scores.dtype)
        scores = reshape(scores, (n, nh * nw, heads, t, t)) + mask[None, :, None]
        scores = reshape(scores, (n * nh * nw, heads, t, t))
    attn = softmax(scores, axis=-1)

    out = matmul(attn, v)  # (B, heads, T, d)
    out = reshape(transpose(out, (0, 2, 1, 3)), (n * nh * nw, t, c))
    out = matmul(out, proj_weight)
    if proj_bias is not None:
        out = out + proj_bias
    out = reshape(out, (n, nh, nw, window, window, c))
    out = reshape(transpose(out, (0, 5, 1, 3, 2, 4)), (n, c, h, w))
    if shift:
        out = roll(out, (shift, shift), (2, 3))
    if return_weights:
        return out, attn
    return out


__all__ = [
    "conv2d",
    "conv_transpose2d",
    "upsample_nearest",
    "pixel_shuffle",
    "upsample2x",
    "window_attention",
    "relative_position_index",
    "shifted_window_mask",
    "concat",
]
