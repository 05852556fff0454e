"""Equilibrium residuals for PnP fixed points, and image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import check_same_shape, norm2

__all__ = [
    "EPS",
    "EquilibriumReport",
    "consensus_equilibrium_residuals",
    "pnp_ista_residual",
    "red_residual",
    "red_relative_residual",
    "mse",
    "psnr",
]

EPS = 1e-12


def _rel(num: float, x) -> float:
    return num / max(norm2(x), EPS)


@dataclass(frozen=True)
class EquilibriumReport:
    """Residuals of the fixed-point conditions at one point.

    Attributes:
        ce_residual_g: ``||x - G(x - u)|| / ||x||`` with ``G = prox_{gamma g}``.
        ce_residual_d: ``||x - D(x + u)|| / ||x||``.
        u_identity_residual: ``||u + gamma grad g(x)|| / ||x||``.
        pnp_ista_residual: ``||x - D(x - gamma grad g(x))|| / ||x||``.
        red_residual: ``||grad g(x) + tau (x - D(x))||`` (None without tau).
    """

    ce_residual_g: float
    ce_residual_d: float
    u_identity_residual: float
    pnp_ista_residual: float
    red_residual: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def consensus_equilibrium_residuals(
    g,
    D,
    x,
    u,
    gamma: float,
    tau: float | None = None,
    prox_kwargs: dict | None = None,
) -> EquilibriumReport:
    """Evaluate the consensus-equilibrium conditions ``x = G(x-u)``, ``x = D(x+u)``.

    Also reports the identity ``u = -gamma grad g(x)`` that holds at a
    fixed point, the PnP-ISTA residual, and the RED residual when `tau` is
    given. `prox_kwargs` are forwarded to ``g.prox``.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    check_same_shape(x, u)
    grad = g.grad(x)
    ce_g = _rel(norm2(x - g.prox(x - u, gamma, **(prox_kwargs or {}))), x)
    ce_d = _rel(norm2(x - D(x + u)), x)
    ident = _rel(norm2(u + gamma * grad), x)
    ista = _rel(norm2(x - D(x - gamma * grad)), x)
    red = None if tau is None else norm2(grad + tau * (x - D(x)))
    return EquilibriumReport(ce_g, ce_d, ident, ista, red)


def pnp_ista_residual(g, D, x, gamma: float) -> float:
    """``||x - D(x - gamma grad g(x))|| / ||x||``."""
    return _rel(norm2(x - D(x - gamma * g.grad(x))), x)


def red_residual(g, D, x, tau: float) -> float:
    """``||grad g(x) + tau (x - D(x))||``, zero exactly at a RED equilibrium."""
    return norm2(g.grad(x) + tau * (x - D(x)))


def red_relative_residual(g, D, x, tau: float, gamma: float) -> float:
    """RED residual scaled like a fixed-point residual: ``gamma ||H(x)|| / ||x||``."""
    return _rel(gamma * red_residual(g, D, x, tau), x)


def mse(x, reference) -> float:
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    check_same_shape(x, reference)
    return float(np.mean((x - reference) ** 2))


def psnr(x, reference, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are equal."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(x, reference)
    if err == 0.0:
        return math.inf
    if not math.isfinite(err):
        return math.nan if math.isnan(err) else -math.inf
    return 10.0 * math.log10(peak**2 / err)
