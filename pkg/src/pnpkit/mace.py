"""Multi-Agent Consensus Equilibrium.

A stack ``v = [v_1, ..., v_l]`` is stored as one array with the agent index
on axis 0. ``F`` applies agent ``j`` to ``v_j``; ``G`` replaces every
component by the weighted average. The solver runs the Mann iteration of
``T = (2G - I)(2F - I)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agents import Agent
from .core import NonFiniteError, ShapeError, norm2
from .diagnostics import EPS, psnr
from .solvers import SolverConfig, SolverTrace, _rel_change

__all__ = [
    "AgentStack",
    "stack_apply_F",
    "averaging_G",
    "reflect_G",
    "mace_operator",
    "mace_solve",
]


@dataclass
class AgentStack:
    """Ordered agents ``F_1 .. F_l`` with averaging weights ``mu``.

    Args:
        agents: At least two agents acting on images of one shape.
        weights: Non-negative weights summing to 1; uniform if omitted.
    """

    agents: Sequence[Agent]
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.agents = list(self.agents)
        if len(self.agents) < 2:
            raise ValueError("MACE needs at least two agents")
        n = len(self.agents)
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (n,):
            raise ShapeError((n,), self.weights.shape, what="MACE weights")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("MACE weights must be non-negative and sum to 1")

    def __len__(self):
        return len(self.agents)


def _check_stack(stack: AgentStack, v: np.ndarray):
    if v.ndim < 2 or v.shape[0] != len(stack):
        raise ShapeError((len(stack), "..."), v.shape, what="stacked image")


def stack_apply_F(stack: AgentStack, v) -> np.ndarray:
    """``F(v) = [F_1(v_1), ..., F_l(v_l)]``."""
    v = np.asarray(v, dtype=np.float64)
    _check_stack(stack, v)
    return np.stack([f(vj) for f, vj in zip(stack.agents, v)])


def _weighted_mean(v: np.ndarray, weights) -> np.ndarray:
    # v_0 + sum_j mu_j (v_j - v_0): exact on stacks with identical
    # components, which makes G bitwise idempotent.
    if weights is None:
        weights = np.full(v.shape[0], 1.0 / v.shape[0])
    acc = np.zeros_like(v[0])
    for w, vj in zip(weights[1:], v[1:]):
        acc = acc + w * (vj - v[0])
    return v[0] + acc


def averaging_G(v, weights=None) -> np.ndarray:
    """``G(v) = (vbar, ..., vbar)`` with ``vbar = sum_j mu_j v_j``."""
    v = np.asarray(v, dtype=np.float64)
    vbar = _weighted_mean(v, weights)
    return np.broadcast_to(vbar, v.shape).copy()


def reflect_G(v, weights=None) -> np.ndarray:
    """``(2G - I) v``, an involution."""
    v = np.asarray(v, dtype=np.float64)
    return 2.0 * averaging_G(v, weights) - v


def mace_operator(stack: AgentStack):
    """The map ``T = (2G - I)(2F - I)`` on stacked images."""

    def T(v):
        return reflect_G(2.0 * stack_apply_F(stack, v) - v, stack.weights)

    return T


def _consensus(x: np.ndarray, zbar: np.ndarray) -> float:
    return max(norm2(xj - zbar) for xj in x) / max(norm2(zbar), EPS)


def mace_solve(stack: AgentStack, x0, rho: float | None = None, cfg: SolverConfig | None = None,
               reference=None, callback=None):
    """Solve ``F(v*) = G(v*)`` by Mann iteration and return the consensus image.

    Starting from ``v = (x0, ..., x0)``, each iteration applies every agent
    (``x = F(v)``), averages ``w = 2x - v`` into ``zbar`` and updates
    ``v <- v + 2 rho (z - x)``. Stops when ``||v^k - v^{k-1}|| / ||v^{k-1}||``
    drops below ``cfg.fp_tol``.

    Each trace record carries ``consensus_residual``
    (``max_j ||F_j(v_j) - xbar|| / ||xbar||`` with ``xbar`` the weighted mean
    of the agent outputs) and ``equilibrium_residual``
    (``||sum_j mu_j (v_j - F_j(v_j))|| / ||xbar||``), both evaluated on the
    agent outputs of that iteration.

    Returns:
        ``(x_star, trace)`` with the final stack in ``trace.state["v"]``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    rho = cfg.rho if rho is None else rho
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    x0 = np.asarray(x0, dtype=np.float64)
    mu = stack.weights
    trace = SolverTrace("mace", rho)
    v = np.stack([x0] * len(stack))
    zbar = x0.copy()
    for k in range(1, cfg.max_iters + 1):
        x = stack_apply_F(stack, v)
        xbar = _weighted_mean(x, mu)
        zbar = _weighted_mean(2.0 * x - v, mu)
        v_new = v + 2.0 * rho * (zbar[None] - x)
        fp = _rel_change((v_new,), (v,))
        if not np.isfinite(fp):
            raise NonFiniteError(f"mace: non-finite iterate at iteration {k}")
        rec = {
            "iter": k,
            "fp_residual": fp,
            "objective": float("nan"),
            "consensus_residual": _consensus(x, xbar),
            "equilibrium_residual": norm2(_weighted_mean(v - x, mu)) / max(norm2(xbar), EPS),
        }
        if reference is not None:
            rec["psnr"] = psnr(zbar, reference)
        trace.records.append(rec)
        v = v_new
        if callback is not None:
            callback(k, zbar)
        if fp <= cfg.fp_tol:
            trace.stop_reason = "tol_reached"
            break
    else:
        trace.stop_reason = "max_iters"
    x_final = stack_apply_F(stack, v)
    zfinal = _weighted_mean(x_final, mu)
    trace.equilibrium = {
        "consensus_residual": _consensus(x_final, zfinal),
        "equilibrium_residual": norm2(_weighted_mean(v - x_final, mu)) / max(norm2(zfinal), EPS),
    }
    trace.state = {"v": v}
    return zbar, trace
