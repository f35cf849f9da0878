"""
Forward neural operations used by BCPNet.

Each public operation takes and returns :class:`~bcpnet.tensor.Tensor4`
and has an ``*_array`` twin working on raw numpy arrays; the graph executor
and the backward pass use the array twins directly.

Shape contract shared by convolution and pooling::

    out = floor((size + 2 * padding - k) / stride) + 1

MAC contracts (consumed by :mod:`bcpnet.complexity`):

- conv2d: ``out_h * out_w * c_out * k * k * (c_in / groups)`` per image
- separable_conv: depthwise + pointwise terms
- weighted_fusion: two multiplications per element
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from .exceptions import GeometryError, LabelError, ShapeError
from .tensor import Tensor4

PoolKind = Literal["max", "avg"]

IGNORE_INDEX = 255


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ConvParams:
    """Weight ``(c_out, c_in / groups, k, k)``, optional bias ``(1, c_out, 1, 1)``."""

    weight: Tensor4
    bias: Optional[Tensor4] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        c_out, _, kh, kw = self.weight.shape
        if kh != kw or kh % 2 == 0:
            raise GeometryError(f"kernels must be square and odd, got {kh}x{kw}")
        if self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise GeometryError(f"stride {self.stride}, padding {self.padding}, groups {self.groups} invalid")
        if c_out % self.groups:
            raise ShapeError(f"c_out {c_out} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (1, c_out, 1, 1):
            raise ShapeError(f"bias shape {self.bias.shape} does not match c_out {c_out}")

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def is_depthwise(self) -> bool:
        return self.groups > 1 and self.groups == self.c_out and self.weight.shape[1] == 1

    @property
    def is_pointwise(self) -> bool:
        return self.k == 1 and self.groups == 1


@dataclass(frozen=True, slots=True)
class FusionWeights:
    """Learnable scalars of the weighted sum: ``theta * S + sigma * C``."""

    theta: float = 1.0
    sigma: float = 1.0


@dataclass(frozen=True, slots=True)
class PoolParams:
    kind: PoolKind = "max"
    k: int = 3
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        if self.kind not in ("max", "avg"):
            raise GeometryError(f"unknown pool kind {self.kind!r}")
        if self.k < 1 or self.k % 2 == 0:
            raise GeometryError(f"pool kernel must be odd, got {self.k}")
        if not 0 <= self.padding < self.k:
            raise GeometryError(f"pool padding {self.padding} must be in [0, {self.k})")
        if self.stride < 1:
            raise GeometryError(f"pool stride must be positive, got {self.stride}")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def out_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise GeometryError(f"kernel {k} larger than padded input {size} + 2*{padding}")
    return span // stride + 1


def window_slice(start: int, count: int, stride: int) -> slice:
    """Slice selecting ``count`` positions ``start, start+stride, ...``."""
    return slice(start, start + stride * (count - 1) + 1, stride)


def pad_array(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d_array(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> np.ndarray:
    n, c_in, h, w = x.shape
    c_out, cpg, k, _ = weight.shape
    if c_in % groups or cpg * groups != c_in:
        raise ShapeError(
            f"input has {c_in} channels but weight expects {cpg} x {groups} groups",
            {"x": x.shape, "weight": weight.shape, "groups": groups},
        )
    oh = out_size(h, k, stride, padding)
    ow = out_size(w, k, stride, padding)
    dtype = np.result_type(x.dtype, weight.dtype)

    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        out = np.matmul(weight.reshape(c_out, c_in), x.reshape(n, c_in, h * w)).reshape(n, c_out, oh, ow)
    else:
        xp = pad_array(x, padding)
        out = np.zeros((n, c_out, oh, ow), dtype=dtype)
        depthwise = groups == c_in and c_out == c_in and cpg == 1
        for ki in range(k):
            rows = window_slice(ki, oh, stride)
            for kj in range(k):
                xs = xp[:, :, rows, window_slice(kj, ow, stride)]
                if depthwise:
                    out += weight[:, 0, ki, kj][None, :, None, None] * xs
                elif groups == 1:
                    out += np.tensordot(weight[:, :, ki, kj], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
                else:
                    opg = c_out // groups
                    for g in range(groups):
                        o_sl = slice(g * opg, (g + 1) * opg)
                        i_sl = slice(g * cpg, (g + 1) * cpg)
                        out[:, o_sl] += np.tensordot(weight[o_sl, :, ki, kj], xs[:, i_sl], axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.reshape(1, c_out, 1, 1)
    return out.astype(dtype, copy=False)


def conv2d(x: Tensor4, p: ConvParams) -> Tensor4:
    bias = None if p.bias is None else p.bias.data
    return Tensor4(conv2d_array(x.data, p.weight.data, bias, p.stride, p.padding, p.groups))


def separable_conv_array(
    x: np.ndarray,
    dw_weight: np.ndarray,
    pw_weight: np.ndarray,
    pw_bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(out, depthwise_out)``; the intermediate feeds the backward pass."""
    k = dw_weight.shape[2]
    pad = k // 2 if padding is None else padding
    mid = conv2d_array(x, dw_weight, None, stride, pad, groups=x.shape[1])
    return conv2d_array(mid, pw_weight, pw_bias), mid


def separable_conv(x: Tensor4, dw: ConvParams, pw: ConvParams) -> Tensor4:
    if not dw.is_depthwise or dw.c_out != x.c:
        raise ShapeError(f"depthwise stage must map {x.c} channels groupwise, got weight {dw.weight.shape}")
    if not pw.is_pointwise:
        raise ShapeError(f"pointwise stage must be a 1x1 ungrouped conv, got weight {pw.weight.shape}")
    return conv2d(conv2d(x, dw), pw)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def valid_counts(size: int, k: int, stride: int, padding: int, count: int) -> np.ndarray:
    """Number of in-bounds taps of each window along one axis."""
    starts = np.arange(count) * stride - padding
    return np.minimum(starts + k, size) - np.maximum(starts, 0)


def pool2d_array(
    x: np.ndarray, kind: str, k: int, stride: int, padding: int
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Return ``(out, routing)``.

    For max pooling ``routing`` holds, per output element, the row-major
    window tap index of the first maximum; avg pooling returns ``None``.
    """
    n, c, h, w = x.shape
    oh = out_size(h, k, stride, padding)
    ow = out_size(w, k, stride, padding)
    if kind == "max":
        xp = pad_array(x, padding, -np.inf)
        best = np.full((n, c, oh, ow), -np.inf, dtype=x.dtype)
        routing = np.zeros((n, c, oh, ow), dtype=np.int16)
        for ki in range(k):
            rows = window_slice(ki, oh, stride)
            for kj in range(k):
                xs = xp[:, :, rows, window_slice(kj, ow, stride)]
                better = xs > best
                best = np.where(better, xs, best)
                routing[better] = ki * k + kj
        return best, routing
    if kind == "avg":
        xp = pad_array(x, padding, 0.0)
        acc = np.zeros((n, c, oh, ow), dtype=x.dtype)
        for ki in range(k):
            rows = window_slice(ki, oh, stride)
            for kj in range(k):
                acc = acc + xp[:, :, rows, window_slice(kj, ow, stride)]
        counts = np.outer(valid_counts(h, k, stride, padding, oh), valid_counts(w, k, stride, padding, ow))
        return acc / counts.astype(x.dtype), None
    raise GeometryError(f"unknown pool kind {kind!r}")


def pool2d(x: Tensor4, p: PoolParams) -> Tensor4:
    out, _ = pool2d_array(x.data, p.kind, p.k, p.stride, p.padding)
    return Tensor4(out)


# ---------------------------------------------------------------------------
# Resize
# ---------------------------------------------------------------------------


def resize_axis(in_size: int, out_size_: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel source taps ``(i0, i1, frac)`` for one axis, clamped to borders."""
    dst = np.arange(out_size_, dtype=np.float64)
    src = (dst + 0.5) * (in_size / out_size_) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, src - i0


def resize_matrix(in_size: int, out_size_: int, dtype=np.float64) -> np.ndarray:
    """Dense ``(out, in)`` interpolation matrix of :func:`resize_axis`."""
    i0, i1, frac = resize_axis(in_size, out_size_)
    m = np.zeros((out_size_, in_size), dtype=dtype)
    rows = np.arange(out_size_)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"resize target {out_h}x{out_w} must be positive")
    if (out_h, out_w) == (h, w):
        return x.copy()
    dt = x.dtype.type
    y0, y1, fy = resize_axis(h, out_h)
    x0, x1, fx = resize_axis(w, out_w)
    wy1 = fy.astype(dt)[None, None, :, None]
    wy0 = (1.0 - fy).astype(dt)[None, None, :, None]
    wx1 = fx.astype(dt)
    wx0 = (1.0 - fx).astype(dt)
    upper = x[:, :, y0, :]
    lower = x[:, :, y1, :]
    top = upper[..., x0] * wx0 + upper[..., x1] * wx1
    bottom = lower[..., x0] * wx0 + lower[..., x1] * wx1
    return top * wy0 + bottom * wy1


def bilinear_resize(x: Tensor4, out_h: int, out_w: int) -> Tensor4:
    return Tensor4(bilinear_resize_array(x.data, out_h, out_w))


# ---------------------------------------------------------------------------
# Fusion, loss, prediction
# ---------------------------------------------------------------------------


def weighted_fusion_array(s: np.ndarray, c: np.ndarray, theta: float, sigma: float) -> np.ndarray:
    if s.shape != c.shape:
        raise ShapeError(f"fusion inputs differ: S {s.shape} vs C {c.shape}", {"s": s.shape, "c": c.shape})
    dt = s.dtype.type
    return dt(theta) * s + dt(sigma) * c


def weighted_fusion(s: Tensor4, c: Tensor4, w: FusionWeights) -> Tensor4:
    return Tensor4(weighted_fusion_array(s.data, c.data, w.theta, w.sigma))


def check_labels(labels: np.ndarray, num_classes: int, ignore_index: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeError(f"label map must be (n, h, w), got shape {labels.shape}")
    bad = (labels != ignore_index) & ((labels < 0) | (labels >= num_classes))
    if np.any(bad):
        raise LabelError(f"labels outside [0, {num_classes}) and not {ignore_index}: {np.unique(labels[bad])[:8].tolist()}")
    return labels


def softmax_cross_entropy_array(
    logits: np.ndarray, labels: np.ndarray, ignore_index: int = IGNORE_INDEX
) -> Tuple[float, np.ndarray]:
    n, k, h, w = logits.shape
    labels = check_labels(labels, k, ignore_index)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != ignore_index
    count = int(valid.sum())
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    prob = exp / denom
    if count == 0:
        return 0.0, np.zeros_like(logits)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(shifted, safe[:, None], axis=1)[:, 0]
    nll = np.log(denom[:, 0]) - picked
    loss = float(nll[valid].sum() / count)
    grad = prob
    np.put_along_axis(grad, safe[:, None], np.take_along_axis(grad, safe[:, None], axis=1) - 1, axis=1)
    grad *= (valid[:, None] / count).astype(logits.dtype)
    return loss, grad


def softmax_cross_entropy(logits: Tensor4, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tuple[float, Tensor4]:
    loss, grad = softmax_cross_entropy_array(logits.data, labels, ignore_index)
    return loss, Tensor4(grad)


def argmax_labels(logits: Tensor4) -> np.ndarray:
    # numpy argmax returns the first maximum, i.e. the lowest class index.
    return np.argmax(logits.data, axis=1).astype(np.int64)


__all__ = [
    "IGNORE_INDEX",
    "ConvParams",
    "FusionWeights",
    "PoolParams",
    "argmax_labels",
    "bilinear_resize",
    "bilinear_resize_array",
    "conv2d",
    "conv2d_array",
    "out_size",
    "pad_array",
    "pool2d",
    "pool2d_array",
    "resize_axis",
    "resize_matrix",
    "separable_conv",
    "separable_conv_array",
    "softmax_cross_entropy",
    "softmax_cross_entropy_array",
    "valid_counts",
    "weighted_fusion",
    "weighted_fusion_array",
    "window_slice",
]
