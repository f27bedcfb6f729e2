"""Dense n-dimensional arrays of 64-bit reals.

Thin, strict wrappers over numpy: row-major float64 storage, no broadcasting,
hard errors on any shape disagreement. Every other module moves its values
through these helpers so that layout and reduction-order conventions live in
one place.
"""

from __future__ import annotations

import numpy as np

DenseTensor = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for an operation."""


def dense(values) -> DenseTensor:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def zeros(shape) -> DenseTensor:
    return np.zeros(shape, dtype=np.float64)


def _require_same_shape(a: DenseTensor, b: DenseTensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} x {b.shape}")
    return a @ b


def trace(a: DenseTensor) -> float:
    """Sum of the diagonal of a square matrix."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace: expected a square matrix, got {a.shape}")
    return float(np.trace(a))


def reshape(t: DenseTensor, shape) -> DenseTensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"reshape: {t.shape} has {t.size} elements, target {shape} disagrees")
    return np.ascontiguousarray(t).reshape(shape)


def permute_axes(t: DenseTensor, order) -> DenseTensor:
    order = tuple(int(a) for a in order)
    if sorted(order) != list(range(t.ndim)):
        raise ShapeError(f"permute_axes: {order} is not a permutation of rank {t.ndim}")
    return np.ascontiguousarray(np.transpose(t, order))


def slice_index(t: DenseTensor, axis: int, index: int) -> DenseTensor:
    """Sub-tensor at a fixed index along one axis (rank drops by one)."""
    if not 0 <= axis < t.ndim:
        raise ShapeError(f"slice_index: axis {axis} out of range for rank {t.ndim}")
    if not 0 <= index < t.shape[axis]:
        raise ShapeError(f"slice_index: index {index} out of range for extent {t.shape[axis]}")
    return np.ascontiguousarray(np.take(t, index, axis=axis))


def add(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _require_same_shape(a, b, "sub")
    return a - b


def scale(t: DenseTensor, c: float) -> DenseTensor:
    return t * float(c)


def hadamard(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _require_same_shape(a, b, "hadamard")
    return a * b


def sum_sq(t: DenseTensor) -> float:
    """Sum of squared entries."""
    flat = np.ravel(t)
    return float(flat @ flat)
