"""Dense linear algebra, validation helpers and the seeded random stream.

Matrices and vectors are plain float64 ndarrays; the helpers here enforce
shape and finiteness where values enter the library.
"""
from __future__ import annotations

import numpy as np

from . import _backend
from .errors import DimensionMismatch, InvalidInput, NegativeSd

DEFAULT_JITTER = 1e-8


def as_matrix(a, name="matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


def as_vector(x, name="vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


def cholesky(a, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Lower Cholesky factor of ``a + jitter * I``.

    Raises:
        DimensionMismatch: ``a`` is not square.
        InvalidInput: ``a`` is not symmetric within 1e-10.
        NotPositiveDefinite: a pivot is not strictly positive.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * max(1.0, np.max(np.abs(a))):
        raise InvalidInput("matrix is not symmetric")
    return _backend.cholesky_lower(a, float(jitter))


def cho_solve(l, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor ``L``.

    ``b`` may be a vector or an (n, p) matrix; the result has the same shape.
    """
    l = np.asarray(l, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != l.shape[0]:
        raise DimensionMismatch(
            f"factor is {l.shape[0]}x{l.shape[0]} but rhs has {b.shape[0]} rows")
    rhs = b[:, None] if b.ndim == 1 else b
    x = _backend.solve_lower_t(l, _backend.solve_lower(l, rhs))
    return x[:, 0] if b.ndim == 1 else x


def solve_lower(l, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    rhs = b[:, None] if b.ndim == 1 else b
    x = _backend.solve_lower(np.asarray(l, dtype=np.float64), rhs)
    return x[:, 0] if b.ndim == 1 else x


def pairwise_sqdist(x, y) -> np.ndarray:
    return _backend.pairwise_sqdist(np.ascontiguousarray(x, dtype=np.float64),
                                    np.ascontiguousarray(y, dtype=np.float64))


class Rng:
    """Seeded random stream on a counter-based generator (Philox).

    ``split(*key)`` derives an independent child stream; equal seeds and
    keys always give equal streams.
    """

    def __init__(self, seed: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def gaussian(self, mean=0.0, sd=1.0, size=None):
        if np.any(np.asarray(sd) < 0):
            raise NegativeSd(f"standard deviation must be >= 0, got {sd}")
        z = self._gen.standard_normal(size)
        return mean + sd * z

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace=True, p=None):
        return self._gen.choice(n, size=size, replace=replace, p=p)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)


def rng_gaussian(rng: Rng, mean: float, sd: float) -> float:
    return float(rng.gaussian(mean, sd))


def backend_name() -> str:
    return _backend.NAME
