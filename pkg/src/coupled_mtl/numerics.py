"""Dense float64 helpers, stable nonlinearities and the seeded generator.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError

DEFAULT_EPS = 1e-8


def as_matrix(values, name="matrix") -> np.ndarray:
    """Validate and coerce to a finite 2-D float64 array (copy-free when possible)."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name}: contains non-finite values")
    return a


def softmax(v) -> np.ndarray:
    """Softmax along the last axis; accepts a vector or a batch of rows."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] < 1:
        raise InvalidInputError("softmax: empty input")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("softmax: non-finite input")
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|.

    Uses ``exp(-|x|)`` on both branches so ``sigmoid(-x) == 1 - sigmoid(x)``
    holds to rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("sigmoid: non-finite input")
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x), stable on both tails."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def _check_eps(eps):
    if not (0.0 < eps <= 1e-3):
        raise ConfigError(f"clamped_log: eps must lie in (0, 1e-3], got {eps}")


def clamped_log(x, eps=DEFAULT_EPS):
    """log(max(x, eps)); never returns -inf."""
    _check_eps(eps)
    out = np.log(np.maximum(np.asarray(x, dtype=np.float64), eps))
    return out if out.ndim else float(out)


def clamped_log_grad(x, eps=DEFAULT_EPS):
    """Derivative of :func:`clamped_log`: 1/x above the clamp, 0 below."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    safe = np.maximum(x, eps)
    return np.where(x > eps, 1.0 / safe, 0.0)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


class SeededRng:
    """Reproducible random stream (PCG64 bit generator).

    Not meant to be shared between threads; use :meth:`child` to derive an
    independent generator with a distinct seed.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def child(self, offset: int) -> "SeededRng":
        return SeededRng((self.seed * 1_000_003 + int(offset) + 1) % 2**64)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)
