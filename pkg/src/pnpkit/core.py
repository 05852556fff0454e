"""Image buffers, reductions and seeded randomness shared by all modules.

Images are plain :class:`numpy.ndarray` objects of dtype ``float64`` with
1 to 4 dimensions. The helpers here validate that contract and provide the
few reductions the solvers depend on.

Random numbers come from :class:`SeededRng`, which draws raw 64-bit words
from the PCG64 bit generator (``PCG64 XSL-RR 128/64``, O'Neill 2014, as
shipped by NumPy) and converts them with fixed, documented transforms:

* uniform doubles: ``(word >> 11) * 2**-53`` in ``[0, 1)``;
* open-interval uniforms for logarithms: ``((word >> 11) + 0.5) * 2**-53``;
* normals: the Box-Muller transform on pairs of open-interval uniforms,
  ``r = sqrt(-2 ln u1)``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``;
* integers on ``[0, b)``: ``floor(u * b)`` with ``u`` a uniform double;
* permutations: Fisher-Yates from the last position down.

The raw word stream of PCG64 is covered by NumPy's bit-generator stability
guarantee, so these streams are reproducible across platforms and releases.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "as_image",
    "check_finite",
    "check_same_shape",
    "axpy",
    "dot",
    "norm2",
    "SeededRng",
    "gaussian_noise",
]


class ShapeError(ValueError):
    """Raised when two arrays (or an array and an operator) disagree in shape."""

    def __init__(self, expected, got, what: str = "array"):
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{what} shape mismatch: expected {self.expected}, got {self.got}")


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where a finite value is required."""


def as_image(x, shape: Sequence[int] | None = None) -> np.ndarray:
    """Return `x` as a finite ``float64`` array with 1 to 4 dimensions.

    If `shape` is given, the array must have exactly that shape.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 4 or min(arr.shape) <= 0:
        raise ValueError(f"images need 1-4 positive extents, got shape {arr.shape}")
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeError(shape, arr.shape)
    check_finite(arr)
    return arr


def check_finite(x: np.ndarray, where: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")


def check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if np.shape(x) != np.shape(y):
        raise ShapeError(np.shape(x), np.shape(y))


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``a * x + y`` for arrays of matching shape."""
    check_same_shape(x, y)
    return a * x + y


def dot(x: np.ndarray, y: np.ndarray) -> float:
    """Inner product of two arrays of matching shape.

    The elementwise products of the C-ordered flat views are accumulated
    strictly left to right (``np.cumsum`` is a sequential accumulate), so
    the result depends only on the values and ``dot(x, y) == dot(y, x)``
    bitwise.
    """
    check_same_shape(x, y)
    prod = np.ravel(x) * np.ravel(y)
    if prod.size == 0:
        return 0.0
    return float(np.cumsum(prod)[-1])


def norm2(x: np.ndarray) -> float:
    """Euclidean norm of the flattened array."""
    return float(np.sqrt(dot(x, x)))


class SeededRng:
    """Deterministic random stream built on the PCG64 bit generator.

    A single instance is meant to be owned by one consumer; do not share it
    across threads.

    Args:
        seed: Non-negative integer seed.
        stream: Optional stream id; distinct ids give statistically
            independent streams for the same seed.
    """

    def __init__(self, seed: int = 0, stream: int | None = None):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream = stream
        if stream is None:
            self._bitgen = np.random.PCG64(self.seed)
        else:
            # independent child stream of the same seed
            self._bitgen = np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(int(stream),)))

    def raw(self, size: int) -> np.ndarray:
        """Next `size` raw 64-bit words."""
        if size == 0:
            return np.zeros(0, dtype=np.uint64)
        return np.asarray(self._bitgen.random_raw(size), dtype=np.uint64).reshape(size)

    def uniform(self, size: int) -> np.ndarray:
        """Doubles in ``[0, 1)`` with 53 random bits each."""
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def _open_uniform(self, size: int) -> np.ndarray:
        return ((self.raw(size) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, shape, sigma: float = 1.0) -> np.ndarray:
        """Array of i.i.d. ``N(0, sigma**2)`` samples via Box-Muller."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        n = int(np.prod(shape, dtype=np.int64))
        npairs = (n + 1) // 2
        u = self._open_uniform(2 * npairs).reshape(npairs, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        phase = 2.0 * np.pi * u[:, 1]
        z = np.empty((npairs, 2))
        z[:, 0] = r * np.cos(phase)
        z[:, 1] = r * np.sin(phase)
        return sigma * z.reshape(-1)[:n].reshape(shape)

    def integers(self, b: int, size: int) -> np.ndarray:
        """Integers uniformly distributed on ``{0, ..., b-1}``."""
        if b < 1:
            raise ValueError("b must be at least 1")
        idx = np.floor(self.uniform(size) * b).astype(np.int64)
        return np.minimum(idx, b - 1)

    def permutation(self, b: int) -> np.ndarray:
        """Random permutation of ``0..b-1`` (Fisher-Yates)."""
        perm = np.arange(b)
        if b < 2:
            return perm
        u = self.uniform(b - 1)
        for k, i in enumerate(range(b - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def gaussian_noise(rng: SeededRng, shape, sigma: float) -> np.ndarray:
    """White Gaussian noise with standard deviation `sigma`."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if sigma == 0:
        return np.zeros(shape)
    return rng.normal(shape, sigma)
