"""Dense-tensor arithmetic and deterministic randomness.

Tensors are plain row-major numpy arrays: float32 on the forward/training
path, float64 in oracle code. All ops are pure and raise ShapeError with
both offending shapes on mismatch.

Randomness comes from one generator family project-wide: numpy's Philox
counter-based generator. Child streams are derived by keying Philox with
the (master_seed, index) pair, so the same pair yields the same stream on
every platform and run. Normal sampling uses numpy's ziggurat.
"""

from __future__ import annotations

import numpy as np

FLOAT = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def as_tensor(data, dtype=FLOAT) -> np.ndarray:
    return np.asarray(data, dtype=dtype)


def check_shape(x: np.ndarray, shape: tuple, what: str = "tensor") -> None:
    if x.shape != tuple(shape):
        raise ShapeError(f"{what}: expected shape {tuple(shape)}, got {x.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-branch form avoids exp overflow for large |x| in float32.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return a * b


class Rng:
    """Seed-deterministic random source (Philox, single-owner).

    Wraps numpy's counter-based Philox generator. Identical construction
    arguments give bitwise-identical draw streams.
    """

    def __init__(self, master_seed: int, index: int = 0):
        if index < 0:
            raise ValueError("stream index must be >= 0")
        self.master_seed = int(master_seed)
        self.index = int(index)
        key = np.array([self.master_seed & 0xFFFFFFFFFFFFFFFF, self.index], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None, dtype=FLOAT):
        out = np.asarray(self._gen.uniform(low, high, size=size), dtype=dtype)
        return out if size is not None else out.item()

    def normal(self, size=None, std: float = 1.0, dtype=FLOAT):
        out = np.asarray(self._gen.standard_normal(size=size) * std, dtype=dtype)
        return out if size is not None else out.item()

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size=size)


def rng_derive(master_seed: int, index: int) -> Rng:
    """Child generator for stream `index` of a master seed.

    Derivation keys Philox with (master_seed, index), so children are
    mutually independent and reproducible without consuming any parent
    state.
    """
    return Rng(master_seed, index)
