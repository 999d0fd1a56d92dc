"""Embedding validation, normalization and cosine similarity.

All arithmetic is done in float64, even when callers hand in float32
arrays, so comparisons near the hit threshold do not flip because of
accumulation error.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, ZeroVector

ZERO_NORM = 1e-12

ArrayLike = Union[Sequence[float], np.ndarray]


def as_embedding(values: ArrayLike) -> np.ndarray:
    """Return ``values`` as a 1-d float64 array, rejecting empty or non-finite input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"embedding must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains NaN or infinite values")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.size} vs {b.size}")


def norm(a: ArrayLike) -> float:
    return float(np.linalg.norm(as_embedding(a)))


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1]."""
    a = as_embedding(a)
    b = as_embedding(b)
    _check_dims(a, b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    sim = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, sim))


def normalize(a: ArrayLike) -> np.ndarray:
    a = as_embedding(a)
    n = np.linalg.norm(a)
    if n < ZERO_NORM:
        raise ZeroVector("cannot normalize a zero vector")
    return a / n


def dot(a: ArrayLike, b: ArrayLike) -> float:
    """Dot product of two unit embeddings (the fast path for cosine)."""
    a = as_embedding(a)
    b = as_embedding(b)
    _check_dims(a, b)
    return float(np.dot(a, b))


def is_unit(a: ArrayLike, tol: float = 1e-6) -> bool:
    return abs(norm(a) - 1.0) <= tol
