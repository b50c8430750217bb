"""Dense float64 tensors, parameters, and deterministic RNG streams.

Tensors are plain C-contiguous ``numpy.ndarray`` objects with dtype
float64; every operation here validates shapes and preserves row-major
layout so serialized blobs are portable.  All randomness in the package
flows through :func:`make_rng`, which derives independent PCG64 streams
from ``(seed, *stream_tags)`` so identical seeds give identical streams
on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch


def tensor(data) -> np.ndarray:
    """Copy ``data`` into a C-contiguous float64 array."""
    return np.ascontiguousarray(np.asarray(data, dtype=np.float64))


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def require_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{what} contains non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D ``[m,k]`` by a 2-D ``[k,n]`` array."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose needs a 2-D operand, got {a.shape}")
    return np.ascontiguousarray(a.T)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * float(s)


def reshape(a: np.ndarray, shape) -> np.ndarray:
    """Reshape preserving row-major element order."""
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatch(f"cannot reshape {a.shape} into {tuple(shape)}")
    return np.ascontiguousarray(a).reshape(shape)


class Parameter:
    """A value tensor paired with a same-shape gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = tensor(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} != parameter shape {self.value.shape}"
            )
        self.grad += g


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for (seed, stream...) across platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-s, s) weights with s = sqrt(6 / fan_in)."""
    s = np.sqrt(6.0 / float(fan_in))
    return rng.uniform(-s, s, size=shape).astype(np.float64)
