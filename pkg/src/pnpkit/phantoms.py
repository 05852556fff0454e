"""Deterministic synthetic ground-truth images with values in [0, 1]."""

from __future__ import annotations

import math

import numpy as np

from .core import SeededRng

__all__ = ["PHANTOMS", "phantom"]

PHANTOMS = ("piecewise_constant_blocks", "smooth_bumps", "random_sparse")


def _blocks(shape, rng: SeededRng, n_blocks: int | None = None):
    img = np.full(shape, 0.1)
    n_blocks = 4 + 2 * len(shape) if n_blocks is None else n_blocks
    levels = 0.2 + 0.8 * rng.uniform(n_blocks)
    for k in range(n_blocks):
        lo = [int(u * 0.7 * n) for u, n in zip(rng.uniform(len(shape)), shape)]
        ext = [max(2, int((0.15 + 0.35 * u) * n)) for u, n in zip(rng.uniform(len(shape)), shape)]
        sl = tuple(slice(a, min(a + e, n)) for a, e, n in zip(lo, ext, shape))
        img[sl] = levels[k]
    return img


def _bumps(shape, rng: SeededRng, n_bumps: int = 6):
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    img = np.zeros(shape)
    for _ in range(n_bumps):
        centre = rng.uniform(len(shape)) * np.array(shape)
        width = (0.08 + 0.12 * rng.uniform(1)[0]) * min(shape)
        amp = 0.3 + 0.7 * rng.uniform(1)[0]
        r2 = sum((gr - c) ** 2 for gr, c in zip(grids, centre))
        img += amp * np.exp(-0.5 * r2 / width**2)
    return img / img.max()


def _sparse(shape, rng: SeededRng, sparsity: float):
    n = int(np.prod(shape))
    k = math.ceil(sparsity * n)
    idx = rng.permutation(n)[:k]
    flat = np.zeros(n)
    flat[idx] = 0.5 + 0.5 * rng.uniform(k)
    return flat.reshape(shape)


def phantom(kind: str, shape, seed: int = 0, sparsity: float = 0.05) -> np.ndarray:
    """Synthetic test image.

    Args:
        kind: ``"piecewise_constant_blocks"`` (overlapping constant
            rectangles on a flat background), ``"smooth_bumps"`` (sum of
            Gaussian bumps scaled to peak 1) or ``"random_sparse"`` (exactly
            ``ceil(sparsity * n)`` nonzeros in ``[0.5, 1)``).
        shape: Image shape (1 to 4 dims).
        seed: Seed; equal arguments give bitwise equal images.
        sparsity: Fraction of nonzeros for ``random_sparse``.
    """
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    if not 1 <= len(shape) <= 4 or min(shape) < 1:
        raise ValueError(f"bad phantom shape {shape}")
    rng = SeededRng(seed)
    if kind == "piecewise_constant_blocks":
        return _blocks(shape, rng)
    if kind == "smooth_bumps":
        return _bumps(shape, rng)
    if kind == "random_sparse":
        if not 0 < sparsity <= 1:
            raise ValueError("sparsity must lie in (0, 1]")
        return _sparse(shape, rng, sparsity)
    raise ValueError(f"unknown phantom kind {kind!r}; expected one of {PHANTOMS}")
