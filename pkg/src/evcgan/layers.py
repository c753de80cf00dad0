"""Network primitives: convolutions, gating, normalization, attention."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ConfigError,
    ContractError,
    ShapeError,
    Tensor,
    _record,
    _sigmoid,
    dropout,
    matmul,
    softmax,
)


def _resolve_pad(padding, k: int) -> int:
    if padding == "same":
        return (k - 1) // 2
    if padding == "valid":
        return 0
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding)
    raise ConfigError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def conv_output_length(n: int, k: int, stride: int, padding="same") -> int:
    pad = _resolve_pad(padding, k)
    return (n + 2 * pad - k) // stride + 1


def conv1d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding="same") -> Tensor:
    """Cross-correlate ``x`` [B, C_in, T] with ``kernel`` [C_out, C_in, K]."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be [B, C, T], got rank {x.ndim}")
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d kernel must be [C_out, C_in, K], got rank {kernel.ndim}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    b, c, t = x.shape
    c_out, c_in, k = kernel.shape
    if c != c_in:
        raise ShapeError(f"conv1d channel axis (1): input has {c}, kernel expects {c_in}")
    pad = _resolve_pad(padding, k)
    if k > t + 2 * pad:
        raise ShapeError(f"conv1d time axis (2): kernel {k} exceeds padded length {t + 2 * pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]   # [B, C, T', K]
    t_out = win.shape[2]
    out = np.tensordot(win, kernel.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gk = np.tensordot(g, win, axes=([0, 2], [0, 2]))          # [C_out, C_in, K]
        cols = np.tensordot(g, kernel.data, axes=([1], [0]))       # [B, T', C_in, K]
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        span = stride * (t_out - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, pad:pad + t] if pad else gxp
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _record("conv1d", out, parents, back)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride=(1, 1), padding="same") -> Tensor:
    """Cross-correlate ``x`` [B, C_in, H, W] with ``kernel`` [C_out, C_in, Kh, Kw]."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [B, C, H, W], got rank {x.ndim}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [C_out, C_in, Kh, Kw], got rank {kernel.ndim}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if sh < 1 or sw < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    b, c, h, w = x.shape
    c_out, c_in, kh, kw = kernel.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel axis (1): input has {c}, kernel expects {c_in}")
    ph, pw = _resolve_pad(padding, kh), _resolve_pad(padding, kw)
    if kh > h + 2 * ph:
        raise ShapeError(f"conv2d height axis (2): kernel {kh} exceeds padded length {h + 2 * ph}")
    if kw > w + 2 * pw:
        raise ShapeError(f"conv2d width axis (3): kernel {kw} exceeds padded length {w + 2 * pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # [B,C,H',W',Kh,Kw]
    h_out, w_out = win.shape[2], win.shape[3]
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))    # [C_out, C_in, Kh, Kw]
        cols = np.tensordot(g, kernel.data, axes=([1], [0]))       # [B, H', W', C_in, Kh, Kw]
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        span_h = sh * (h_out - 1) + 1
        span_w = sw * (w_out - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + span_h:sh, j:j + span_w:sw] += cols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _record("conv2d", out, parents, back)


def glu_gate(features: Tensor, gate_logits: Tensor) -> Tensor:
    """``features * sigmoid(gate_logits)``, elementwise."""
    if features.shape != gate_logits.shape:
        raise ShapeError(f"glu_gate shapes differ: {features.shape} vs {gate_logits.shape}")
    s = _sigmoid(gate_logits.data)
    f = features.data
    return _record("glu_gate", f * s, (features, gate_logits),
                   lambda g: (g * s, g * f * s * (1.0 - s)))


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple, param_axis: int,
               eps: float, name: str) -> Tensor:
    if eps <= 0:
        raise ContractError(f"{name}: eps must be > 0, got {eps}")
    n = int(np.prod([x.shape[a] for a in axes]))
    if n < 2:
        raise ContractError(f"{name}: normalization axis has a single element (degenerate variance)")
    if gamma.shape != (x.shape[param_axis],) or beta.shape != gamma.shape:
        raise ShapeError(f"{name}: affine params must have shape ({x.shape[param_axis]},), "
                         f"got {gamma.shape} and {beta.shape}")
    bshape = [1] * x.ndim
    bshape[param_axis] = x.shape[param_axis]
    gam = gamma.data.reshape(bshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gam * xhat + beta.data.reshape(bshape)
    other = tuple(a for a in range(x.ndim) if a != param_axis)

    def back(g):
        dxhat = g * gam
        gx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    return _record(name, out, (x, gamma, beta), back)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) over all trailing axes, then scale/shift per channel."""
    if x.ndim < 3:
        raise ShapeError(f"instance_norm input must be [B, C, ...], got rank {x.ndim}")
    return _normalize(x, gamma, beta, tuple(range(2, x.ndim)), 1, eps, "instance_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize across a single feature ``axis`` independently at every other position."""
    axis = axis % x.ndim
    return _normalize(x, gamma, beta, (axis,), axis, eps, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def positional_embedding(t: int, d: int, base: float = 10000.0, dtype=np.float64) -> np.ndarray:
    """Sinusoidal table [T, D]: sin on even dims, cos on odd dims."""
    if t < 1 or d < 1:
        raise ContractError(f"positional_embedding needs T, D >= 1, got ({t}, {d})")
    pos = np.arange(t, dtype=np.float64)[:, None]
    pair = np.arange(d) // 2
    angle = pos / np.power(base, 2.0 * pair / d)[None, :]
    table = np.where(np.arange(d) % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def multi_head_attention(x: Tensor, params: dict, heads: int, dropout_p: float = 0.0,
                         rng: Optional[np.random.Generator] = None, training: bool = True,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over ``x`` [B, T, D].

    ``params`` holds ``wq, wk, wv, wo`` ([D, D]) and ``bq, bk, bv, bo`` ([D]).
    With ``return_weights`` the attention matrices [B, H, T, T] (before
    dropout) are returned alongside the output.
    """
    if x.ndim != 3:
        raise ShapeError(f"attention input must be [B, T, D], got rank {x.ndim}")
    b, t, d = x.shape
    if heads < 1 or d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(h):
        return h.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(x, params["wq"], params["bq"]))
    k = split(linear(x, params["wk"], params["bk"]))
    v = split(linear(x, params["wv"], params["bv"]))
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1)
    attn = dropout(weights, dropout_p, rng=rng, training=training)
    ctx = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, t, d)
    out = linear(ctx, params["wo"], params["bo"])
    if return_weights:
        return out, weights.data
    return out
