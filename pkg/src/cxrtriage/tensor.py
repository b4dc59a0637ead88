"""Dense float tensor primitives.

Every array flowing through the pipeline is a row-major numpy ndarray of
32-bit reals (the gradient-check harness re-runs layers in float64, so the
helpers accept either float width but never mix them). All operations are
pure: inputs are never mutated, and accumulation order is the fixed serial
order numpy uses, so identical inputs give bit-identical outputs on the
same platform.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

DTYPE = np.float32
_ALLOWED = (np.float32, np.float64)


def tensor(data, shape=None, dtype=DTYPE) -> np.ndarray:
    """Build a tensor from nested sequences or a flat buffer plus shape."""
    if dtype not in _ALLOWED:
        raise DomainError(f"unsupported dtype {dtype!r}; use float32 or float64")
    arr = np.asarray(data, dtype=dtype)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(
                f"cannot shape {arr.size} elements into {shape}"
            )
        arr = arr.reshape(shape)
    _check_valid(arr)
    return arr


def zeros(shape, dtype=DTYPE) -> np.ndarray:
    return np.zeros(_checked_shape(shape), dtype=dtype)


def ones(shape, dtype=DTYPE) -> np.ndarray:
    return np.ones(_checked_shape(shape), dtype=dtype)


def _checked_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must be non-empty")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def _check_valid(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 0:
        raise ShapeError("tensor shape must be non-empty (rank >= 1)")
    if any(s < 1 for s in arr.shape):
        raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
    return arr


def _same_dtype(a: np.ndarray, b: np.ndarray) -> None:
    if a.dtype != b.dtype:
        raise DomainError(f"mixed dtypes {a.dtype} vs {b.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[i, j] = sum_t a[i, t] * b[t, j], t ascending."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 tensors, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    _same_dtype(a, b)
    return a @ b


def add(a: np.ndarray, b) -> np.ndarray:
    return _binary(np.add, a, b)


def sub(a: np.ndarray, b) -> np.ndarray:
    return _binary(np.subtract, a, b)


def mul(a: np.ndarray, b) -> np.ndarray:
    return _binary(np.multiply, a, b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * a.dtype.type(s)


def _binary(op, a: np.ndarray, b) -> np.ndarray:
    if np.isscalar(b) or getattr(b, "ndim", None) == 0:
        return op(a, a.dtype.type(b))
    if a.shape != b.shape:
        raise ShapeError(f"elementwise shapes differ: {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    return op(a, b)


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, a.dtype.type(0))


def exp(a: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = np.exp(a)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"exp overflow: max input {a.max()!r} exceeds float range")
    return out


def log(a: np.ndarray) -> np.ndarray:
    if np.any(a <= 0):
        raise DomainError(f"log domain error: min input {a.min()!r} is not positive")
    return np.log(a)


def reduce_sum(a: np.ndarray, axis: int) -> np.ndarray:
    _check_axis(a, axis)
    return np.sum(a, axis=axis)


def reduce_mean(a: np.ndarray, axis: int) -> np.ndarray:
    _check_axis(a, axis)
    return np.mean(a, axis=axis)


def reduce_max(a: np.ndarray, axis: int) -> np.ndarray:
    _check_axis(a, axis)
    return np.max(a, axis=axis)


def argmax(a: np.ndarray, axis: int) -> np.ndarray:
    """Index of the maximum along ``axis``; ties go to the lowest index."""
    _check_axis(a, axis)
    return np.argmax(a, axis=axis)


def _check_axis(a: np.ndarray, axis: int) -> None:
    if not isinstance(axis, (int, np.integer)):
        raise ShapeError(f"axis must be an integer, got {axis!r}")
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")


def reshape(a: np.ndarray, newshape) -> np.ndarray:
    newshape = _checked_shape(newshape)
    if int(np.prod(newshape)) != a.size:
        raise ShapeError(
            f"reshape element count mismatch: {a.shape} has {a.size} elements,"
            f" {newshape} needs {int(np.prod(newshape))}"
        )
    return a.reshape(newshape).copy()


def transpose2d(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise ShapeError(f"transpose2d needs a rank-2 tensor, got {a.shape}")
    return np.ascontiguousarray(a.T)
