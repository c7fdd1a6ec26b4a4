"""Geometric and feature primitives shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Embedding = np.ndarray
"""Unit-norm float64 vector. Produced by :func:`normalize`, never mutated."""


def wrap_angle(a: float) -> float:
    """Map an angle in radians onto [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on +pi for tiny negative inputs
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class Pose:
    """Agent or camera pose. ``z`` is carried but the world is planar."""

    x: float
    y: float
    yaw: float = 0.0
    z: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.yaw)):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def normalize(v) -> Embedding:
    """Return ``v / ||v||`` as a read-only float64 array.

    Raises:
        ValueError: for a zero, empty or non-finite vector.
    """
    a = np.array(v, dtype=np.float64).ravel()
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise ValueError("cannot normalize an empty or non-finite vector")
    n = float(np.sqrt(np.dot(a, a)))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    a = a / n
    a.setflags(write=False)
    return a


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # elementwise product + sum is order-symmetric, unlike some BLAS dot paths
    s = float(np.sum(a * b))
    return min(1.0, max(-1.0, s))


@dataclass(frozen=True)
class TokenGrid:
    """Feature map of shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"TokenGrid needs a 3-d array, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("TokenGrid contains non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def spatial_average_pool(grid: TokenGrid, factor: int) -> TokenGrid:
    """Average non-overlapping ``factor x factor`` blocks per channel."""
    if factor < 1 or grid.height % factor or grid.width % factor:
        raise ValueError(
            f"pool factor {factor} does not divide grid {grid.height}x{grid.width}"
        )
    h, w = grid.height // factor, grid.width // factor
    blocks = grid.data.reshape(h, factor, w, factor, grid.channels)
    return TokenGrid(blocks.mean(axis=(1, 3)))


def flatten_tokens(grid: TokenGrid) -> np.ndarray:
    """Row-major token matrix of shape (height*width, channels)."""
    return grid.data.reshape(grid.height * grid.width, grid.channels).copy()
