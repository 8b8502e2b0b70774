"""Differentiable layer primitives for the denoising network.

All image primitives work on single images laid out channel-first (C, H, W).
Batching is the caller's job (loop and average losses); the graphs of the
batch items simply coexist on the tape.

Every primitive here is exercised by a central finite-difference gradient
check in the test suite (float64 mode).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, as_tensor, from_op, matmul, reshape, scale, transpose

GROUP_NORM_EPS = 1e-5


def _require_chw(x: Tensor, op: str) -> None:
    if x.data.ndim != 3:
        raise ValueError(f"{op} expects a (C, H, W) tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate (C_in, H, W) with (C_out, C_in, k, k).

    Output spatial size is (H + 2*padding - k) // stride + 1. The kernel side
    must be odd. No bias; see ``add_channel_bias``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _require_chw(x, "conv2d")
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"conv2d kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    c_in, h, w = x.shape
    c_out, kc_in, k, _ = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels, kernel expects {kc_in}")
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel side must be odd, got {k}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError(f"conv2d: input {h}x{w} too small for k={k}, padding={padding}")

    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    # (C_in, H_out, W_out, k, k) window view; tensordot lowers to one GEMM
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(kernel.data, win, axes=([1, 2, 3], [0, 3, 4]))

    def bwd(g):
        if kernel.requires_grad:
            kernel.accumulate_grad(np.tensordot(g, win, axes=([1, 2], [1, 2])))
        if x.requires_grad:
            # transposed convolution: zero-stuff the stride, pad k-1, correlate
            # with the spatially flipped kernel
            if stride > 1:
                gs = np.zeros(
                    (c_out, (h_out - 1) * stride + 1, (w_out - 1) * stride + 1), dtype=g.dtype
                )
                gs[:, ::stride, ::stride] = g
            else:
                gs = g
            gf = np.pad(gs, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            win_g = sliding_window_view(gf, (k, k), axis=(1, 2))
            kflip = kernel.data[:, :, ::-1, ::-1]
            gxp = np.tensordot(kflip, win_g, axes=([0, 2, 3], [0, 3, 4]))
            # rows/cols the strided forward never reached get zero gradient
            tail_h = h + 2 * padding - gxp.shape[1]
            tail_w = w + 2 * padding - gxp.shape[2]
            if tail_h or tail_w:
                gxp = np.pad(gxp, ((0, 0), (0, tail_h), (0, tail_w)))
            if padding:
                gxp = gxp[:, padding:padding + h, padding:padding + w]
            x.accumulate_grad(gxp)

    return from_op(np.ascontiguousarray(out), (x, kernel), bwd)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _catmull_rom(u: np.ndarray) -> np.ndarray:
    # Cubic convolution kernel with a = -0.5, support |u| < 2.
    a = -0.5
    u = np.abs(u)
    near = (a + 2) * u**3 - (a + 3) * u**2 + 1
    far = a * (u**3 - 5 * u**2 + 8 * u - 4)
    return np.where(u <= 1, near, np.where(u < 2, far, 0.0))


def bicubic_weight_matrix(n: int, scale: int, dtype=np.float64) -> np.ndarray:
    """(n*scale, n) interpolation matrix: separable Catmull-Rom, replicate edges.

    Output sample i reads input coordinate (i + 0.5) / scale - 0.5, so scale 1
    is the exact identity.
    """
    m = np.zeros((n * scale, n), dtype=np.float64)
    for i in range(n * scale):
        src = (i + 0.5) / scale - 0.5
        i0 = int(np.floor(src))
        t = src - i0
        idx = np.array([i0 - 1, i0, i0 + 1, i0 + 2])
        wts = _catmull_rom(np.array([1 + t, t, 1 - t, 2 - t]))
        for j, wt in zip(np.clip(idx, 0, n - 1), wts):
            m[i, j] += wt
    return m.astype(dtype)


def bicubic_upsample(x, scale: int) -> Tensor:
    """Upscale (C, h, w) to (C, h*scale, w*scale) with separable bicubic."""
    x = as_tensor(x)
    _require_chw(x, "bicubic_upsample")
    if int(scale) != scale or scale < 1:
        raise ValueError(f"bicubic_upsample: scale must be an integer >= 1, got {scale}")
    scale = int(scale)
    _, h, w = x.shape
    mh = bicubic_weight_matrix(h, scale, dtype=x.dtype)
    mw = bicubic_weight_matrix(w, scale, dtype=x.dtype)
    out = np.einsum("oh,chw,pw->cop", mh, x.data, mw, optimize=True)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.einsum("oh,cop,pw->chw", mh, g, mw, optimize=True))

    return from_op(np.ascontiguousarray(out), (x,), bwd)


def upsample_nearest(x, scale: int = 2) -> Tensor:
    """Repeat each pixel ``scale`` times along both spatial axes."""
    x = as_tensor(x)
    _require_chw(x, "upsample_nearest")
    c, h, w = x.shape

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(c, h, scale, w, scale).sum(axis=(2, 4)))

    out = np.repeat(np.repeat(x.data, scale, axis=1), scale, axis=2)
    return from_op(out, (x,), bwd)


def downsample_stride(x, stride: int = 2) -> Tensor:
    """Keep every ``stride``-th pixel; adjoint scatters back with zero fill."""
    x = as_tensor(x)
    _require_chw(x, "downsample_stride")

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, ::stride, ::stride] = g
            x.accumulate_grad(gx)

    return from_op(np.ascontiguousarray(x.data[:, ::stride, ::stride]), (x,), bwd)


# ---------------------------------------------------------------------------
# Normalization and activations
# ---------------------------------------------------------------------------


def group_norm(x, groups: int, gamma, beta) -> Tensor:
    """Per-group standardization over (channels/groups, H, W), then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _require_chw(x, "group_norm")
    c, h, w = x.shape
    if c % groups != 0:
        raise ValueError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("group_norm: gamma/beta must be shaped (C,)")

    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + GROUP_NORM_EPS)
    xhat = ((xg - mu) * inv_std).reshape(c, h, w)
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bwd(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(1, 2)))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(1, 2)))
        if x.requires_grad:
            m = xg.shape[1]
            dxhat = (g * gamma.data[:, None, None]).reshape(groups, -1)
            xh = xhat.reshape(groups, -1)
            s1 = dxhat.sum(axis=1, keepdims=True)
            s2 = (dxhat * xh).sum(axis=1, keepdims=True)
            gx = inv_std / m * (m * dxhat - s1 - xh * s2)
            x.accumulate_grad(gx.reshape(c, h, w))

    return from_op(out, (x, gamma, beta), bwd)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # branch on sign so neither exp overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def silu(x) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    sig = _sigmoid(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * sig * (1.0 + x.data * (1.0 - sig)))

    return from_op(x.data * sig, (x,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return from_op(s, (x,), bwd)


# ---------------------------------------------------------------------------
# Dense layer and channel plumbing
# ---------------------------------------------------------------------------


def dense(x, weight, bias=None) -> Tensor:
    """Affine map of a vector: weight (m, n) @ x (n,) + bias (m,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 1 or weight.data.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ValueError(f"dense: incompatible shapes {weight.shape} @ {x.shape}")
    out = weight.data @ x.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data

    def bwd(g):
        if weight.requires_grad:
            weight.accumulate_grad(np.outer(g, x.data))
        if x.requires_grad:
            x.accumulate_grad(weight.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return from_op(out, parents, bwd)


def add_channel_bias(x, bias) -> Tensor:
    """Add a per-channel bias vector (C,) to a (C, H, W) map."""
    x, bias = as_tensor(x), as_tensor(bias)
    _require_chw(x, "add_channel_bias")
    if bias.shape != (x.shape[0],):
        raise ValueError(f"add_channel_bias: bias {bias.shape} vs {x.shape[0]} channels")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2)))

    return from_op(x.data + bias.data[:, None, None], (x, bias), bwd)


def concat_channels(tensors) -> Tensor:
    """Stack (C_i, H, W) tensors along the channel axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat_channels: need at least one tensor")
    hw = tensors[0].shape[1:]
    for t in tensors:
        _require_chw(t, "concat_channels")
        if t.shape[1:] != hw:
            raise ValueError(f"concat_channels: spatial mismatch {t.shape[1:]} vs {hw}")
    sizes = [t.shape[0] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(g[lo:hi])

    return from_op(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bwd)


def split_channels(x, sizes):
    """Inverse of concat_channels; returns a tuple of (C_i, H, W) tensors."""
    x = as_tensor(x)
    _require_chw(x, "split_channels")
    if sum(sizes) != x.shape[0]:
        raise ValueError(f"split_channels: sizes {sizes} do not sum to {x.shape[0]}")
    outs = []
    lo = 0
    for sz in sizes:
        lo_, hi_ = lo, lo + sz

        def bwd(g, lo=lo_, hi=hi_):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[lo:hi] = g
                x.accumulate_grad(gx)

        outs.append(from_op(np.ascontiguousarray(x.data[lo_:hi_]), (x,), bwd))
        lo += sz
    return tuple(outs)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def self_attention(x, wq, wk, wv, wo) -> Tensor:
    """Single-head scaled dot-product attention over spatial positions.

    The (C, H, W) map becomes H*W tokens of width C; queries/keys/values and
    the output projection are learned (C, C) matrices. The attended result is
    added residually, so zero projections give an exact passthrough.
    """
    x = as_tensor(x)
    _require_chw(x, "self_attention")
    c, h, w = x.shape
    tokens = transpose(reshape(x, (c, h * w)), (1, 0))  # (HW, C)
    q = matmul(tokens, as_tensor(wq))
    k = matmul(tokens, as_tensor(wk))
    v = matmul(tokens, as_tensor(wv))
    attn = softmax(scale(matmul(q, transpose(k, (1, 0))), 1.0 / np.sqrt(c)), axis=-1)
    ctx = matmul(matmul(attn, v), as_tensor(wo))
    out = reshape(transpose(ctx, (1, 0)), (c, h, w))
    return x + out


def attention_weights(x_data: np.ndarray, wq: np.ndarray, wk: np.ndarray) -> np.ndarray:
    """The (HW, HW) attention matrix alone, for inspection and tests."""
    c = x_data.shape[0]
    tokens = x_data.reshape(c, -1).T
    logits = (tokens @ wq) @ (tokens @ wk).T / np.sqrt(c)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
