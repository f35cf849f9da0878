"""
Dense rank-4 tensors in NCHW layout.

:class:`Tensor4` is the value type every other module passes around:
activations, weights, gradients. It wraps a read-only, C-contiguous numpy
array of ``float32`` (deployment) or ``float64`` (gradient verification).

Example::

    from bcpnet.tensor import create, axpy, map_unary

    x = create((1, 1, 2, 2), 1.0)
    y = create((1, 1, 2, 2), lambda n, c, h, w: h * 2 + w)
    z = axpy(0.5, x, 2.0, y)
    r = map_unary(z, "relu6")
"""

from __future__ import annotations

import math
from typing import Callable, Literal, Tuple, Union

import numpy as np

from .exceptions import InvalidShapeError, NumericError, ShapeError

Shape4 = Tuple[int, int, int, int]
DTypeName = Literal["float32", "float64"]
UnaryKind = Literal["relu", "relu6", "copy"]

DTYPES = {"float32": np.float32, "float64": np.float64}

# Largest element count a float64 buffer can address.
MAX_ELEMENTS = np.iinfo(np.intp).max // 8


def resolve_dtype(dtype: Union[str, np.dtype, type]) -> np.dtype:
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InvalidShapeError(f"unsupported dtype {resolved}; use float32 or float64")
    return resolved


def check_shape(shape) -> Shape4:
    try:
        dims = tuple(int(d) for d in shape)
    except (TypeError, ValueError):
        raise InvalidShapeError(f"shape {shape!r} is not a sequence of integers")
    if len(dims) != 4:
        raise InvalidShapeError(f"expected a 4-tuple (n, c, h, w), got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"every dimension must be >= 1, got {dims}")
    if math.prod(dims) > MAX_ELEMENTS:
        raise InvalidShapeError(f"shape {dims} overflows addressable memory")
    return dims  # type: ignore[return-value]


class Tensor4:
    """Immutable NCHW tensor backed by a numpy array."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        if data.ndim != 4:
            raise InvalidShapeError(f"Tensor4 needs a rank-4 array, got rank {data.ndim}")
        resolve_dtype(data.dtype)
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        data.flags.writeable = False
        self._data = data

    @classmethod
    def from_array(cls, array, dtype: Union[str, np.dtype, None] = None) -> "Tensor4":
        """Copy ``array`` into a new tensor, validating shape and finiteness."""
        arr = np.array(array, dtype=resolve_dtype(dtype or getattr(array, "dtype", np.float32)), copy=True)
        check_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains NaN or Inf")
        return cls(arr)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Shape4:
        return self._data.shape  # type: ignore[return-value]

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def n(self) -> int:
        return self._data.shape[0]

    @property
    def c(self) -> int:
        return self._data.shape[1]

    @property
    def h(self) -> int:
        return self._data.shape[2]

    @property
    def w(self) -> int:
        return self._data.shape[3]

    @property
    def numel(self) -> int:
        return self._data.size

    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def astype(self, dtype: Union[str, np.dtype]) -> "Tensor4":
        target = resolve_dtype(dtype)
        if target == self.dtype:
            return self
        return Tensor4(self._data.astype(target))

    def equals(self, other: "Tensor4") -> bool:
        """Bit-level equality of shape, dtype and values."""
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self._data.tobytes() == other._data.tobytes()
        )

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape}, dtype={self.dtype.name})"


def create(
    shape,
    fill: Union[float, Callable[..., np.ndarray]] = 0.0,
    dtype: Union[str, np.dtype] = "float32",
) -> Tensor4:
    """
    Create a tensor of ``shape``.

    ``fill`` is either a scalar or a generator called with the broadcast
    index arrays ``(n, c, h, w)`` (``numpy.fromfunction`` convention).
    """
    dims = check_shape(shape)
    dt = resolve_dtype(dtype)
    if callable(fill):
        values = np.fromfunction(fill, dims, dtype=np.int64)
        arr = np.broadcast_to(np.asarray(values, dtype=dt), dims).copy()
        if not np.all(np.isfinite(arr)):
            raise NumericError("fill generator produced NaN or Inf")
    else:
        if not math.isfinite(float(fill)):
            raise NumericError(f"fill value {fill!r} is not finite")
        arr = np.full(dims, fill, dtype=dt)
    return Tensor4(arr)


def zeros(shape, dtype: Union[str, np.dtype] = "float32") -> Tensor4:
    return create(shape, 0.0, dtype)


def zeros_like(x: Tensor4) -> Tensor4:
    return Tensor4(np.zeros(x.shape, dtype=x.dtype))


def axpy(alpha: float, x: Tensor4, beta: float, y: Tensor4) -> Tensor4:
    """Return ``alpha * x + beta * y`` elementwise."""
    if x.shape != y.shape:
        raise ShapeError(f"axpy operands differ: {x.shape} vs {y.shape}", {"x": x.shape, "y": y.shape})
    dt = np.result_type(x.dtype, y.dtype)
    a = dt.type(alpha)
    b = dt.type(beta)
    return Tensor4(a * x.data.astype(dt, copy=False) + b * y.data.astype(dt, copy=False))


def unary_array(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(v, 0)
    if kind == "relu6":
        return np.minimum(np.maximum(v, 0), 6)
    if kind == "copy":
        return v.copy()
    raise ValueError(f"unknown unary kind {kind!r}")


def map_unary(x: Tensor4, kind: UnaryKind) -> Tensor4:
    return Tensor4(unary_array(x.data, kind))


__all__ = [
    "DTYPES",
    "MAX_ELEMENTS",
    "Shape4",
    "Tensor4",
    "axpy",
    "check_shape",
    "create",
    "map_unary",
    "resolve_dtype",
    "unary_array",
    "zeros",
    "zeros_like",
]
