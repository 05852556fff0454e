"""Prior agents: denoisers and proximal maps that plug into the solvers.

Every agent is a callable ``D(v)`` that preserves shape. Agents that act on
a chosen set of spatial axes (:class:`TVProx`, :class:`GaussianSmooth`,
:class:`MedianFilter`) treat the remaining leading axes as a batch, which is
what lets :class:`Slicewise2D` process a whole volume in one call while
staying identical to a per-slice loop.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import SeededRng, ShapeError, norm2
from .linops import gaussian_kernel

__all__ = [
    "Agent",
    "IdentityAgent",
    "ScaledIdentity",
    "ProxL2",
    "SoftThreshold",
    "TVProx",
    "GaussianSmooth",
    "MedianFilter",
    "Slicewise2D",
    "FunctionAgent",
    "residual",
    "nonexpansiveness_estimate",
]


class Agent:
    """Base class for maps ``R^n -> R^n`` used in place of a proximal step.

    Attributes:
        noise_level: Optional declared noise standard deviation. Metadata
            only; nothing enforces it.
        label: Human-readable name used in traces and manifests.
        is_prox: True when the agent is the exact proximal map of a convex
            function, which is what classical ADMM/FISTA require.
    """

    is_prox = False
    label = "agent"

    def __init__(self, noise_level: float | None = None, label: str | None = None):
        self.noise_level = noise_level
        if label is not None:
            self.label = label

    def _apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        out = self._apply(v)
        if out.shape != v.shape:
            raise ShapeError(v.shape, out.shape, what=f"{self.label} output")
        return out

    def residual(self, v) -> np.ndarray:
        """``v - D(v)``."""
        v = np.asarray(v, dtype=np.float64)
        return v - self(v)

    def __repr__(self):
        return f"{type(self).__name__}(label={self.label!r})"


def residual(agent: Agent, v) -> np.ndarray:
    return agent.residual(v)


class FunctionAgent(Agent):
    """Wrap an arbitrary shape-preserving callable as an agent."""

    def __init__(self, fn, label: str = "function", is_prox: bool = False, **kw):
        super().__init__(label=label, **kw)
        self.fn = fn
        self.is_prox = is_prox

    def _apply(self, v):
        return np.asarray(self.fn(v), dtype=np.float64)


class IdentityAgent(Agent):
    is_prox = True  # prox of the zero function
    label = "identity"

    def _apply(self, v):
        return v.copy()


class ScaledIdentity(Agent):
    """``D(v) = alpha * v``; a prox of a quadratic when ``0 < alpha <= 1``."""

    label = "scaled_identity"

    def __init__(self, alpha: float, **kw):
        super().__init__(**kw)
        self.alpha = float(alpha)
        self.is_prox = 0.0 < self.alpha <= 1.0

    def _apply(self, v):
        return self.alpha * v


class ProxL2(Agent):
    """Prox of ``(strength / 2) ||x - reference||^2``: ``(v + s z0) / (1 + s)``."""

    is_prox = True
    label = "prox_l2"

    def __init__(self, reference, strength: float, **kw):
        super().__init__(**kw)
        if strength < 0:
            raise ValueError("strength must be non-negative")
        self.reference = np.asarray(reference, dtype=np.float64)
        self.strength = float(strength)

    def _apply(self, v):
        if v.shape != self.reference.shape:
            raise ShapeError(self.reference.shape, v.shape, what="prox_l2 input")
        return (v + self.strength * self.reference) / (1.0 + self.strength)


class SoftThreshold(Agent):
    """Prox of ``tau * ||x||_1``: ``sign(v) * max(|v| - tau, 0)``."""

    is_prox = True
    label = "soft_threshold"

    def __init__(self, tau: float, **kw):
        super().__init__(**kw)
        if tau < 0:
            raise ValueError("tau must be non-negative")
        self.tau = float(tau)

    def _apply(self, v):
        return np.sign(v) * np.maximum(np.abs(v) - self.tau, 0.0)


def _spatial_axes(ndim: int, spatial: int | None) -> tuple[int, ...]:
    if spatial is None or spatial >= ndim:
        return tuple(range(ndim))
    return tuple(range(ndim - spatial, ndim))


def _fwd_diff(x, axis):
    """Forward difference with a zero in the last slot (Neumann boundary)."""
    d = np.zeros_like(x)
    sl_hi = [slice(None)] * x.ndim
    sl_lo = [slice(None)] * x.ndim
    sl_hi[axis] = slice(1, None)
    sl_lo[axis] = slice(0, -1)
    d[tuple(sl_lo)] = x[tuple(sl_hi)] - x[tuple(sl_lo)]
    return d


def _fwd_diff_adj(p, axis):
    """Adjoint of :func:`_fwd_diff` (a negative divergence)."""
    out = np.zeros_like(p)
    n = p.shape[axis]
    if n == 1:
        return out
    take = lambda s: tuple(slice(None) if a != axis else s for a in range(p.ndim))  # noqa: E731
    out[take(slice(0, 1))] = -p[take(slice(0, 1))]
    out[take(slice(1, n - 1))] = p[take(slice(0, n - 2))] - p[take(slice(1, n - 1))]
    out[take(slice(n - 1, n))] = p[take(slice(n - 2, n - 1))]
    return out


def tv_anisotropic(x, axes: Sequence[int] | None = None) -> float:
    """Anisotropic total variation ``sum_axes ||D_axis x||_1``."""
    x = np.asarray(x, dtype=np.float64)
    axes = range(x.ndim) if axes is None else axes
    return float(sum(np.abs(_fwd_diff(x, a)).sum() for a in axes))


class TVProx(Agent):
    r"""Approximate prox of anisotropic TV, ``argmin_x 1/2||x - v||^2 + tau TV(x)``.

    Solved by projected gradient on the dual: with forward differences
    ``K`` (Neumann boundary), iterate ``p <- clip(p + s K(v - K^T p), -tau, tau)``
    with step ``s = 1 / (4 d)`` for ``d`` spatial dimensions (``1/8`` in 2-D)
    starting from ``p = 0``, and return ``v - K^T p``. A fixed number of
    inner iterations keeps the map deterministic.

    Args:
        tau: Regularization strength.
        inner_iters: Number of dual iterations.
        spatial_dims: Number of trailing axes treated as spatial; leading
            axes are a batch. None means all axes.
    """

    is_prox = True
    label = "tv_prox"

    def __init__(self, tau: float, inner_iters: int = 50, spatial_dims: int | None = None, **kw):
        super().__init__(**kw)
        if tau < 0:
            raise ValueError("tau must be non-negative")
        self.tau = float(tau)
        self.inner_iters = int(inner_iters)
        self.spatial_dims = spatial_dims

    def _apply(self, v):
        return self._apply_axes(v, _spatial_axes(v.ndim, self.spatial_dims))

    def _apply_axes(self, v, axes):
        if self.tau == 0.0:
            return v.copy()
        step = 1.0 / (4.0 * len(axes))
        p = [np.zeros_like(v) for _ in axes]
        x = v
        for _ in range(self.inner_iters):
            for j, a in enumerate(axes):
                p[j] = np.clip(p[j] + step * _fwd_diff(x, a), -self.tau, self.tau)
            kt = _fwd_diff_adj(p[0], axes[0])
            for j in range(1, len(axes)):
                kt = kt + _fwd_diff_adj(p[j], axes[j])
            x = v - kt
        return x


class GaussianSmooth(Agent):
    """Periodic Gaussian smoothing, applied separably along the spatial axes.

    Args:
        sigma: Kernel standard deviation in pixels.
        radius: Kernel half-width; ``ceil(3 sigma)`` by default.
        spatial_dims: Number of trailing axes to smooth; None means all.
    """

    is_prox = True  # symmetric with spectrum in (0, 1]: prox of a quadratic
    label = "gaussian_smooth"

    def __init__(self, sigma: float, radius: int | None = None, spatial_dims: int | None = None, **kw):
        super().__init__(**kw)
        self.sigma = float(sigma)
        self.weights = gaussian_kernel(self.sigma, 1, radius)
        self.radius = len(self.weights) // 2
        self.spatial_dims = spatial_dims

    def _apply(self, v):
        return self._apply_axes(v, _spatial_axes(v.ndim, self.spatial_dims))

    def _apply_axes(self, v, axes):
        out = v
        for a in axes:
            acc = self.weights[self.radius] * out
            for k in range(1, self.radius + 1):
                w = self.weights[self.radius + k]
                acc = acc + w * (np.roll(out, k, axis=a) + np.roll(out, -k, axis=a))
            out = acc
        return out


class MedianFilter(Agent):
    """Median filter with periodic boundary; neither a prox nor a gradient step."""

    label = "median_filter"

    def __init__(self, window: int = 3, spatial_dims: int | None = None, **kw):
        super().__init__(**kw)
        if window < 1:
            raise ValueError("window must be positive")
        self.window = int(window)
        self.spatial_dims = spatial_dims

    def _apply(self, v):
        return self._apply_axes(v, _spatial_axes(v.ndim, self.spatial_dims))

    def _apply_axes(self, v, axes):
        size = [self.window if a in axes else 1 for a in range(v.ndim)]
        return ndimage.median_filter(v, size=size, mode="wrap")


class Slicewise2D(Agent):
    """Apply a 2-D agent independently to every slice orthogonal to `axis`.

    For a volume ``v`` the slices are ``v.take(i, axis)``. Inner agents that
    accept a batch of 2-D images
    (those implementing ``_apply_axes``) are called once on the whole
    stack; others are looped over slices.
    Both paths give bitwise identical results.
    """

    label = "slicewise2d"

    def __init__(self, axis: int, inner: Agent, batched: bool = True, **kw):
        super().__init__(**kw)
        self.axis = int(axis)
        self.inner = inner
        self.batched = batched and hasattr(inner, "_apply_axes")
        self.is_prox = inner.is_prox
        if "label" not in kw:
            self.label = f"slicewise2d[{self.axis}]({inner.label})"

    def _apply(self, v):
        if v.ndim != 3:
            raise ShapeError((0, 0, 0), v.shape, what="slicewise2d volume (3-D)")
        moved = np.moveaxis(v, self.axis, 0)
        if self.batched:
            out = self.inner._apply_axes(np.ascontiguousarray(moved), (1, 2))
        else:
            out = np.stack([self.inner(np.ascontiguousarray(s)) for s in moved])
        return np.ascontiguousarray(np.moveaxis(out, 0, self.axis))


def nonexpansiveness_estimate(
    agent: Agent,
    rng: SeededRng,
    shape,
    n_pairs: int = 20,
    perturb_scale: float = 1e-2,
) -> float:
    """Largest observed ratio ``||D(a) - D(b)|| / ||a - b||`` over random pairs.

    Each pair draws ``a ~ N(0, I)`` and ``b = a + perturb_scale * N(0, I)``.
    The result is a lower bound on the Lipschitz constant of `agent`.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    best = 0.0
    for _ in range(n_pairs):
        a = rng.normal(shape)
        b = a + rng.normal(shape, perturb_scale)
        den = norm2(a - b)
        if den == 0.0:
            continue
        best = max(best, norm2(agent(a) - agent(b)) / den)
    return best
