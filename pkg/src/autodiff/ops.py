"""
ops.py
------
Differentiable primitives. Layout for image-like tensors is NHWC.

No broadcasting: element-wise primitives require identical shapes and
raise ``ShapeError`` naming both shapes otherwise. Per-channel scaling and
bias have their own primitives.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from src.autodiff.tensor import Tensor
from src.utils.errors import ShapeError

ELU_ALPHA = 1.0


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _rank(op: str, x: Tensor, rank: int) -> None:
    if x.values.ndim != rank:
        raise ShapeError(f"{op}: expected a rank-{rank} tensor, got shape {x.shape}")


# ── Element-wise ─────────────────────────────────────────────────────────────

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor.from_op("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor.from_op("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul_elementwise", a, b)
    av, bv = a.values, b.values
    return Tensor.from_op("mul_elementwise", av * bv, (a, b), lambda g: (g * bv, g * av))


mul_elementwise = mul


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor.from_op("scalar_mul", a.values * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return Tensor.from_op("relu", np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    v = x.values
    pos = v > 0
    expv = np.exp(np.minimum(v, 0.0))
    out = np.where(pos, v, alpha * (expv - 1.0))
    return Tensor.from_op("elu", out, (x,), lambda g: (g * np.where(pos, 1.0, alpha * expv),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.values)
    return Tensor.from_op("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    v = x.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(v)
    return Tensor.from_op("log", out, (x,), lambda g: (g / v,))


# ── Linear algebra / convolution ─────────────────────────────────────────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _rank("matmul", a, 2)
    _rank("matmul", b, 2)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return Tensor.from_op("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """
    x : (N, H, W, C_in);  w : (kh, kw, C_in, C_out).
    stride ∈ {1, 2}; padding ∈ {"same", "valid"} (zero padding).
    """
    _rank("conv2d", x, 4)
    _rank("conv2d", w, 4)
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")

    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")

    if padding == "same":
        pt, pb = _same_padding(h, kh, stride)
        pl, pr = _same_padding(wd, kw, stride)
    else:
        pt = pb = pl = pr = 0
    xp = np.pad(x.values, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :ho, :wo]            # (N, Ho, Wo, C, kh, kw)
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wm = w.values.reshape(kh * kw * cin, cout)
    out = (cols @ wm).reshape(n, ho, wo, cout)

    def _backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        dw = (cols.T @ g2).reshape(w.shape)
        dcols = (g2 @ wm.T).reshape(n, ho, wo, kh, kw, cin)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, pt:pt + h, pl:pl + wd, :]
        return dx, dw

    return Tensor.from_op("conv2d", out, (x, w), _backward)


def conv2d_transpose(x: Tensor, w: Tensor, stride: int) -> Tensor:
    """
    Non-overlapping transposed convolution (kernel size == stride).

    x : (N, H, W, C_in);  w : (s, s, C_in, C_out) → (N, H·s, W·s, C_out).
    """
    _rank("conv2d_transpose", x, 4)
    _rank("conv2d_transpose", w, 4)
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if (kh, kw) != (stride, stride) or wcin != cin:
        raise ShapeError(f"conv2d_transpose: shape mismatch {x.shape} vs {w.shape} (stride {stride})")

    xf = x.values.reshape(n * h * wd, cin)
    wm = w.values.transpose(2, 0, 1, 3).reshape(cin, stride * stride * cout)
    y = (xf @ wm).reshape(n, h, wd, stride, stride, cout)
    out = y.transpose(0, 1, 3, 2, 4, 5).reshape(n, h * stride, wd * stride, cout)

    def _backward(g):
        gr = g.reshape(n, h, stride, wd, stride, cout).transpose(0, 1, 3, 2, 4, 5)
        gr = gr.reshape(n * h * wd, stride * stride * cout)
        dx = (gr @ wm.T).reshape(x.shape)
        dw = (xf.T @ gr).reshape(cin, stride, stride, cout).transpose(1, 2, 0, 3)
        return dx, dw

    return Tensor.from_op("conv2d_transpose", out, (x, w), _backward)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    _rank("avg_pool2d", x, 4)
    n, h, wd, c = x.shape
    if h % k or wd % k:
        raise ShapeError(f"avg_pool2d: spatial dims of {x.shape} not divisible by {k}")
    out = x.values.reshape(n, h // k, k, wd // k, k, c).mean(axis=(2, 4))

    def _backward(g):
        return (np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k),)

    return Tensor.from_op("avg_pool2d", out, (x,), _backward)


# ── Channel-wise ─────────────────────────────────────────────────────────────

def softmax_channels(x: Tensor) -> Tensor:
    v = x.values
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return Tensor.from_op(
        "softmax_channels", s, (x,),
        lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),),
    )


def log_softmax_channels(x: Tensor) -> Tensor:
    v = x.values
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return Tensor.from_op(
        "log_softmax_channels", out, (x,),
        lambda g: (g - s * g.sum(axis=-1, keepdims=True),),
    )


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_channels: shape mismatch {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.values for t in tensors], axis=-1)

    def _backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor.from_op("concat_channels", out, tensors, _backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[-1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for shape {x.shape}")

    def _backward(g):
        dx = np.zeros_like(x.values)
        dx[..., start:stop] = g
        return (dx,)

    return Tensor.from_op("slice_channels", x.values[..., start:stop].copy(), (x,), _backward)


def scale_channels(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel scalar multiplication: x[..., c] · w[c]."""
    if w.values.ndim != 1 or w.shape[0] != x.shape[-1]:
        raise ShapeError(f"scale_channels: shape mismatch {x.shape} vs {w.shape}")
    xv, wv = x.values, w.values
    axes = tuple(range(xv.ndim - 1))
    return Tensor.from_op(
        "scale_channels", xv * wv, (x, w),
        lambda g: (g * wv, (g * xv).sum(axis=axes)),
    )


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.values.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_channel_bias: shape mismatch {x.shape} vs {b.shape}")
    axes = tuple(range(x.values.ndim - 1))
    return Tensor.from_op("add_channel_bias", x.values + b.values, (x, b), lambda g: (g, g.sum(axis=axes)))


# ── Norms / reductions / reshapes ────────────────────────────────────────────

def l2_norm(x: Tensor, axis: int | None = None, eps: float = 0.0) -> Tensor:
    """
    Euclidean norm over all elements (``axis=None`` → scalar) or over the
    last axis (``axis=-1``). ``eps`` is added under the square root.
    """
    v = x.values
    if axis is None:
        n = np.sqrt((v * v).sum() + eps)
        return Tensor.from_op("l2_norm", n, (x,), lambda g: (g * v / n,))
    if axis != -1:
        raise ShapeError(f"l2_norm: axis must be None or -1, got {axis}")
    n = np.sqrt((v * v).sum(axis=-1) + eps)
    return Tensor.from_op("l2_norm", n, (x,), lambda g: (g[..., None] * v / n[..., None],))


def normalize_last(x: Tensor, eps: float = 0.0) -> Tensor:
    """x / ‖x‖ along the last axis."""
    v = x.values
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True) + eps)
    y = v / n

    def _backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / n,)

    return Tensor.from_op("normalize_last", y, (x,), _backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - primitive name
    shape = x.shape
    return Tensor.from_op("sum", x.values.sum(), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor.from_op("mean", x.values.mean(), (x,), lambda g: (np.full(shape, float(g) / n),))


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pooling: (N, H, W, C) → (N, C)."""
    _rank("spatial_mean", x, 4)
    n, h, w, c = x.shape

    def _backward(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)

    return Tensor.from_op("spatial_mean", x.values.mean(axis=(1, 2)), (x,), _backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    src = x.shape
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from exc
    return Tensor.from_op("reshape", out.copy(), (x,), lambda g: (g.reshape(src),))
