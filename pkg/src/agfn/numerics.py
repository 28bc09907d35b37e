"""Dense float64 kernels and deterministic random streams.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Random
streams are ``numpy.random.Generator`` instances over the counter-based
Philox bit generator, keyed by ``(seed, *stream_id)`` so that any
(epoch, batch, sample) stream can be rebuilt independently of iteration
order.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "as_matrix",
    "matmul",
    "row_softmax",
    "rng_stream",
    "uniform",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce ``m`` to a finite 2-d float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(m) -> np.ndarray:
    """Softmax along each row, stabilised by subtracting the row max."""
    z = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("row_softmax: non-finite input")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Deterministic generator for ``(seed, stream_id...)``.

    Identical keys give bit-identical sequences on every platform; distinct
    keys give independent streams.
    """
    keys = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) & 0xFFFFFFFFFFFFFFFF for s in stream_id]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(keys)))


def uniform(rng: np.random.Generator, size=None):
    """Draw from [0, 1); advances the stream by ``size`` positions."""
    return rng.random(size)
