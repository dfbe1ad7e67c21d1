"""
Dense matrix helpers shared by every stage.

Matrices are plain 2-D float64 numpy arrays. Operators that need gradients
ship their own analytic backward functions; `central_difference_gradient`
is the oracle they are all checked against.
"""

from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

import config
from .errors import ConfigError, DimensionError, NumericalError

Matrix = np.ndarray

ACTIVATIONS = ("tanh", "relu", "sigmoid")

_MASK64 = (1 << 64) - 1


def as_matrix(data, name: str = "matrix") -> Matrix:
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return m


def check_shape(m: Matrix, shape: tuple, name: str = "matrix") -> None:
    # None in `shape` matches any size along that axis
    if m.ndim != len(shape) or any(s is not None and s != t for s, t in zip(shape, m.shape)):
        raise DimensionError(f"{name} has shape {m.shape}, expected {shape}")


def row_softmax(m: Matrix) -> Matrix:
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"row_softmax needs a non-empty 2-D matrix, got shape {m.shape}")
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax_backward(s: Matrix, d_s: Matrix) -> Matrix:
    """Gradient w.r.t. the logits given the softmax output `s` and upstream `d_s`."""
    return s * (d_s - np.sum(d_s * s, axis=1, keepdims=True))


def activation(m: Matrix, kind: str) -> Matrix:
    if kind == "tanh":
        return np.tanh(m)
    if kind == "relu":
        return np.maximum(m, 0.0)
    if kind == "sigmoid":
        return expit(m)
    raise ConfigError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


def activation_backward(pre: Matrix, out: Matrix, d_out: Matrix, kind: str) -> Matrix:
    if kind == "tanh":
        return d_out * (1.0 - out * out)
    if kind == "relu":
        return d_out * (pre > 0)
    if kind == "sigmoid":
        return d_out * out * (1.0 - out)
    raise ConfigError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


def central_difference_gradient(
    f: Callable[[Matrix], float], x: Matrix, h: float = config.FD_STEP
) -> Matrix:
    if h <= 0:
        raise ConfigError(f"Finite-difference step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        f_plus = float(f(x))
        x[idx] = old - h
        f_minus = float(f(x))
        x[idx] = old
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"Non-finite function value while differencing entry {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: Matrix, b: Matrix) -> float:
    return gradient_error(a, b, floor=1e-12)


def gradient_error(analytic: Matrix, numeric: Matrix, floor: float = config.GRADCHECK_FLOOR) -> float:
    """Relative error whose denominator never drops below `floor`.

    Central differences carry about eps*|f|/h of roundoff per entry, so a block
    whose gradient norm is near that level is compared in absolute terms.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


class DeterministicRng:
    """
    SplitMix64 generator.

    The algorithm is fixed so that sequences are bit-identical across
    platforms and implementations:
      state += 0x9E3779B97F4A7C15
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
      z = (z ^ (z >> 27)) * 0x94D049BB133111EB
      out = z ^ (z >> 31)
    Floats use the top 53 bits; bounded integers use multiply-high.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.state = self.seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ConfigError(f"below() needs n > 0, got {n}")
        return (self.next_u64() * n) >> 64

    def uniform(self, low: float, high: float, shape: Iterable[int]) -> np.ndarray:
        shape = tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        values = [low + (high - low) * self.next_float() for _ in range(count)]
        return np.array(values, dtype=np.float64).reshape(shape)

    def normal(self, shape: Iterable[int], scale: float = 1.0) -> np.ndarray:
        shape = tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        values = []
        for _ in range(count):
            u1 = 1.0 - self.next_float()
            u2 = self.next_float()
            values.append(scale * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2))
        return np.array(values, dtype=np.float64).reshape(shape)

    def permutation(self, n: int) -> list:
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, n: int, k: int) -> list:
        """k distinct indices from range(n), in draw order (partial Fisher-Yates)."""
        if k > n:
            raise ConfigError(f"Cannot draw {k} distinct items from {n}")
        items = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def choices(self, n: int, k: int) -> list:
        """k indices from range(n) with replacement."""
        return [self.below(n) for _ in range(k)]

    def spawn(self, key: int) -> "DeterministicRng":
        """Independent child stream derived from this generator's seed and `key`."""
        mixer = DeterministicRng((self.seed * 0x9E3779B97F4A7C15 + int(key)) & _MASK64)
        return DeterministicRng(mixer.next_u64())
