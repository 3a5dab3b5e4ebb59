"""Dense float64 tensor primitives.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
The functions here add the shape contracts the rest of the package relies on;
layer code calls numpy directly once inputs have been validated.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray

_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def as_tensor(x) -> Tensor:
    """Return ``x`` as a contiguous float64 array with every extent >= 1."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim == 0:
        raise ShapeError("tensors must have rank >= 1")
    if any(n < 1 for n in t.shape):
        raise ShapeError(f"all extents must be >= 1, got shape {t.shape}")
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def transpose2d(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d needs rank 2, got rank {a.ndim}")
    return np.ascontiguousarray(a.T)


def reduce_mean(a: Tensor, axis: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    return np.ascontiguousarray(a.mean(axis=axis))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if op not in _OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}")
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op} needs identical shapes, got {a.shape} and {b.shape}")
    return _OPS[op](a, b)
