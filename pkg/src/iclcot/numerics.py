"""Dense-array primitives with explicit precision discipline.

Arrays are plain numpy ndarrays; the dtype is the precision tag. Two tiers
are used throughout the package: float32 for model weights/activations,
float64 for oracles, metrics and gradient checks. `matmul` always
accumulates in 64-bit regardless of the storage precision.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    """Raise if `a` contains NaN or Inf; returns `a` unchanged."""
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{what} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with 64-bit accumulation, returned in the inputs' dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype != b.dtype:
        raise ShapeError(f"precision tags differ: {a.dtype} vs {b.dtype}")
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))
    return out.astype(a.dtype, copy=False)


def relu(a: np.ndarray) -> np.ndarray:
    """Elementwise max(0, a), dtype preserved."""
    a = np.asarray(a)
    return np.maximum(a, np.array(0, dtype=a.dtype))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probability vector from logits, computed with max-subtraction; float64."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ShapeError("softmax requires finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
