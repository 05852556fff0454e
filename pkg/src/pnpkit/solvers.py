"""Iterative PnP solvers and their classical counterparts.

All solvers share the same calling convention::

    x, trace = solver(g, D, cfg, x0=None, reference=None, objective=None)

where `g` is a data-fidelity term, `D` an agent, `cfg` a
:class:`SolverConfig`, `reference` an optional ground truth used for PSNR
logging and `objective` an optional callable replacing ``g(x)`` in the
trace. Runs are deterministic: the same inputs and config give bitwise
identical iterates and traces.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .agents import Agent
from .core import NonFiniteError, SeededRng, norm2
from .diagnostics import (
    EPS,
    consensus_equilibrium_residuals,
    pnp_ista_residual,
    psnr,
    red_relative_residual,
    red_residual,
)
from .fidelity import BlockFidelity, BlockSampler, DataFidelity, ProxWarmState
from .linops import operator_norm

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "admm",
    "pnp_admm",
    "fista",
    "pnp_fista",
    "pnp_ista",
    "red_sd",
    "online_pnp",
    "simba",
    "mann_iterate",
    "default_step",
]

log = logging.getLogger(__name__)

THETA_SCHEDULES = ("ista", "nesterov")


@dataclass
class SolverConfig:
    """Hyperparameters shared by the solvers.

    Attributes:
        gamma: Step size (gradient methods) or penalty (ADMM-type methods).
            None picks a default: ``1.0`` for ADMM-type solvers and
            ``0.9 / L`` for gradient solvers, with ``L`` the Lipschitz
            constant of the gradient estimated by power iteration.
        tau: RED regularization weight.
        rho: Mann relaxation in ``(0, 1)``.
        theta_schedule: ``"ista"`` (theta = 1), ``"nesterov"``, or a
            constant theta in ``(0, 1]``.
        max_iters: Iteration cap.
        fp_tol: Relative fixed-point tolerance for early stopping.
        seed: Seed for power iteration and block sampling.
        prox_method, cg_tol, cg_maxiter, k_inner: Options for the data prox
            (see :meth:`DataFidelity.prox`).
        minibatch: Blocks per iteration for online solvers.
        sampling: Block selection rule for online solvers.
        track_equilibrium: Log equilibrium residuals at every iteration
            (costs extra agent and prox evaluations).
    """

    gamma: float | None = None
    tau: float = 1.0
    rho: float = 0.5
    theta_schedule: str | float = "nesterov"
    max_iters: int = 100
    fp_tol: float = 1e-6
    seed: int = 0
    prox_method: str = "auto"
    cg_tol: float = 1e-3
    cg_maxiter: int = 10
    k_inner: int = 3
    minibatch: int = 1
    sampling: str = "iid_uniform"
    track_equilibrium: bool = False

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if isinstance(self.theta_schedule, str):
            if self.theta_schedule not in THETA_SCHEDULES:
                raise ValueError(f"unknown theta_schedule {self.theta_schedule!r}")
        elif not 0 < float(self.theta_schedule) <= 1:
            raise ValueError(f"constant theta must lie in (0, 1], got {self.theta_schedule}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.minibatch < 1:
            raise ValueError("minibatch must be at least 1")

    def replace(self, **changes) -> "SolverConfig":
        return SolverConfig(**{**asdict(self), **changes})

    def prox_kwargs(self, warm_state: ProxWarmState | None = None) -> dict:
        return dict(
            method=self.prox_method,
            tol=self.cg_tol,
            maxiter=self.cg_maxiter,
            warm_state=warm_state,
            k_inner=self.k_inner,
        )


@dataclass
class SolverTrace:
    """Per-iteration log of a solver run.

    Attributes:
        solver: Solver name.
        gamma: Step or penalty actually used.
        records: One dict per iteration with keys ``iter``, ``fp_residual``,
            ``objective`` and, when available, ``psnr``, ``ce_residual_g``,
            ``ce_residual_d``, ``red_residual``.
        stop_reason: ``"tol_reached"`` or ``"max_iters"``.
        equilibrium: Residuals of the solver's defining fixed-point
            condition at the returned point.
        state: Final auxiliary variables (e.g. ``u`` and ``z`` for ADMM).
    """

    solver: str
    gamma: float
    records: list[dict] = field(default_factory=list)
    stop_reason: str | None = None
    equilibrium: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def column(self, key: str) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.records], dtype=np.float64)

    def same_as(self, other: "SolverTrace") -> bool:
        """Bitwise comparison of records and stop reason."""
        if self.stop_reason != other.stop_reason or len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if a.keys() != b.keys():
                return False
            for k in a:
                if not (a[k] == b[k] or (np.isnan(a[k]) and np.isnan(b[k]))):
                    return False
        return True


def _rel_change(new_parts, old_parts) -> float:
    num = math.sqrt(sum(norm2(a - b) ** 2 for a, b in zip(new_parts, old_parts)))
    den = math.sqrt(sum(norm2(b) ** 2 for b in old_parts))
    return num / max(den, EPS)


class _Logger:
    def __init__(self, trace, g, cfg, reference, objective):
        self.trace = trace
        self.g = g
        self.cfg = cfg
        self.reference = reference
        self.objective = objective if objective is not None else g

    def record(self, k, x, fp, **extra) -> bool:
        if not math.isfinite(fp):
            raise NonFiniteError(f"{self.trace.solver}: non-finite iterate at iteration {k}")
        rec = {"iter": k, "fp_residual": fp, "objective": float(self.objective(x))}
        if self.reference is not None:
            rec["psnr"] = psnr(x, self.reference)
        rec.update(extra)
        self.trace.records.append(rec)
        if fp <= self.cfg.fp_tol:
            self.trace.stop_reason = "tol_reached"
            return True
        if k >= self.cfg.max_iters:
            self.trace.stop_reason = "max_iters"
            return True
        return False


def _lipschitz(g, seed: int) -> float:
    blocks = g.blocks if isinstance(g, BlockFidelity) else [g]
    return max(operator_norm(b.op, SeededRng(seed), 100) ** 2 * b.weight for b in blocks)


def default_step(g, cfg: SolverConfig, red_tau: float | None = None) -> float:
    """``0.9 / L`` for the gradient Lipschitz constant ``L`` (plus ``tau`` for RED)."""
    lip = _lipschitz(g, cfg.seed)
    if red_tau is not None:
        lip += red_tau
    return 0.9 / lip if lip > 0 else 1.0


def _start(g, x0):
    return (g.default_init() if x0 is None else np.array(x0, dtype=np.float64)).copy()


# ---------------------------------------------------------------------------
# ADMM family


def _admm_core(name, g: DataFidelity, D, cfg, x0, reference, objective, callback):
    gamma = 1.0 if cfg.gamma is None else cfg.gamma
    trace = SolverTrace(name, gamma)
    logger = _Logger(trace, g, cfg, reference, objective)
    warm = ProxWarmState()
    pk = cfg.prox_kwargs(warm)
    x = _start(g, x0)
    u = np.zeros_like(x)
    z = x.copy()
    for k in range(1, cfg.max_iters + 1):
        x_old, z_old, u_old = x, z, u
        z = g.prox(x - u, gamma, **pk)
        x = D(z + u)
        u = u + (z - x)
        fp = _rel_change((x, z, u), (x_old, z_old, u_old))
        extra = {}
        if cfg.track_equilibrium:
            rep = consensus_equilibrium_residuals(g, D, x, u, gamma, prox_kwargs=_exact_prox(g))
            extra = {"ce_residual_g": rep.ce_residual_g, "ce_residual_d": rep.ce_residual_d}
        if callback is not None:
            callback(k, x)
        if logger.record(k, x, fp, **extra):
            break
    rep = consensus_equilibrium_residuals(g, D, x, u, gamma, prox_kwargs=_exact_prox(g))
    trace.equilibrium = rep.as_dict()
    trace.state = {"u": u, "z": z, "prox_warm_residuals": list(warm.residuals)}
    return x, trace


def _exact_prox(g: DataFidelity) -> dict:
    if g.has_closed_form_prox():
        return {"method": "closed_form"}
    return {"method": "cg", "tol": 1e-12, "maxiter": max(1000, 2 * int(np.prod(g.input_shape)))}


def admm(g: DataFidelity, h_prox: Agent, cfg: SolverConfig, x0=None, reference=None,
         objective=None, callback=None):
    """Classical ADMM for ``g + h`` with ``h_prox`` the proximal map of ``gamma h``.

    Iterates::

        z = prox_{gamma g}(x - u);  x = h_prox(z + u);  u = u + z - x

    from ``u = 0``. Stops when the joint relative change of ``(x, z, u)``
    drops below ``cfg.fp_tol``.
    """
    if not getattr(h_prox, "is_prox", False):
        warnings.warn(f"admm expects a proximal-map agent; {h_prox.label} is not declared as one")
    return _admm_core("admm", g, h_prox, cfg, x0, reference, objective, callback)


def pnp_admm(g: DataFidelity, D: Agent, cfg: SolverConfig, x0=None, reference=None,
             objective=None, callback=None):
    """PnP-ADMM: ADMM with the regularizer's prox replaced by the agent `D`.

    The trace's ``equilibrium`` holds the consensus-equilibrium residuals
    ``x = G(x - u)`` and ``x = D(x + u)`` at the returned ``(x, u)``.
    """
    return _admm_core("pnp_admm", g, D, cfg, x0, reference, objective, callback)


# ---------------------------------------------------------------------------
# Proximal-gradient family


def _theta_update(schedule, s, s_prev, q):
    """Return the next extrapolated point and momentum state."""
    if schedule == "ista":
        return s, q
    if schedule == "nesterov":
        q_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * q * q))
        return s + ((q - 1.0) / q_new) * (s - s_prev), q_new
    theta = float(schedule)
    return (1.0 - theta) * s_prev + theta * s, q


def _prox_grad_core(name, g, D, grad_fn, gamma, schedule, cfg, x0, reference, objective, callback):
    trace = SolverTrace(name, gamma)
    logger = _Logger(trace, g, cfg, reference, objective)
    x = _start(g, x0)
    s_prev = x
    q = 1.0
    for k in range(1, cfg.max_iters + 1):
        z = x - gamma * grad_fn(x)
        s = D(z)
        # s = T(x), so ||s - x|| bounds ||s - T(s)|| for nonexpansive T;
        # with theta = 1 this is the plain change between iterates
        fp = _rel_change((s,), (x,))
        x, q = _theta_update(schedule, s, s_prev, q)
        s_prev = s
        extra = {}
        if cfg.track_equilibrium and isinstance(g, DataFidelity):
            rep = consensus_equilibrium_residuals(
                g, D, s, -gamma * g.grad(s), gamma, prox_kwargs=_exact_prox(g)
            )
            extra = {"ce_residual_g": rep.ce_residual_g, "ce_residual_d": rep.ce_residual_d}
        if callback is not None:
            callback(k, s)
        if logger.record(k, s, fp, **extra):
            break
    trace.equilibrium = {"pnp_ista_residual": pnp_ista_residual(g, D, s_prev, gamma)}
    return s_prev, trace


def _check_step(g, gamma, seed):
    lip = _lipschitz(g, seed)
    if gamma * lip > 1.0 + 1e-12:
        warnings.warn(f"step {gamma:g} exceeds 1/L = {1.0 / lip:g}; convergence is not guaranteed")


def fista(g: DataFidelity, h_prox: Agent, cfg: SolverConfig, x0=None, reference=None,
          objective=None, callback=None):
    """Classical FISTA / proximal gradient for ``g + h``.

    Iterates ``z = x - gamma grad g(x)``, ``s = h_prox(z)`` and then the
    momentum step selected by ``cfg.theta_schedule``. Returns the last
    ``s``. A step larger than ``1 / L`` triggers a warning.
    """
    if not getattr(h_prox, "is_prox", False):
        warnings.warn(f"fista expects a proximal-map agent; {h_prox.label} is not declared as one")
    return _pnp_fista("fista", g, h_prox, cfg, x0, reference, objective, callback)


def _pnp_fista(name, g, D, cfg, x0, reference, objective, callback, schedule=None):
    if cfg.gamma is None:
        gamma = default_step(g, cfg)
    else:
        gamma = cfg.gamma
        _check_step(g, gamma, cfg.seed)
    schedule = cfg.theta_schedule if schedule is None else schedule
    return _prox_grad_core(name, g, D, g.grad, gamma, schedule, cfg, x0, reference, objective, callback)


def pnp_fista(g: DataFidelity, D: Agent, cfg: SolverConfig, x0=None, reference=None,
              objective=None, callback=None):
    """PnP-FISTA: FISTA with the prox replaced by `D`.

    With theta ``1`` every step is ``x = D(x - gamma grad g(x))``, whose fixed
    points satisfy the same consensus equilibrium as PnP-ADMM. The trace's
    ``equilibrium`` holds ``||x - D(x - gamma grad g(x))|| / ||x||``.
    """
    return _pnp_fista("pnp_fista", g, D, cfg, x0, reference, objective, callback)


def pnp_ista(g: DataFidelity, D: Agent, cfg: SolverConfig, x0=None, reference=None,
             objective=None, callback=None):
    """PnP-ISTA: :func:`pnp_fista` with theta fixed to 1."""
    return _pnp_fista("pnp_ista", g, D, cfg, x0, reference, objective, callback, schedule="ista")


def online_pnp(bf: BlockFidelity, D: Agent, sampler: BlockSampler, cfg: SolverConfig,
               x0=None, reference=None, objective=None, callback=None):
    """Online PnP-ISTA using ``cfg.minibatch`` sampled blocks per iteration.

    Each step uses ``x = D(x - gamma * (1/p) sum_j grad g_{i_j}(x))`` with
    indices drawn from `sampler`. With a single block this is exactly
    :func:`pnp_ista`.
    """
    gamma = default_step(bf, cfg) if cfg.gamma is None else cfg.gamma

    def grad_fn(x):
        return bf.minibatch_grad(sampler.sample(cfg.minibatch), x)

    return _prox_grad_core("online_pnp", bf, D, grad_fn, gamma, "ista", cfg, x0, reference,
                           objective, callback)


# ---------------------------------------------------------------------------
# RED family


def _red_core(name, g, D, grad_fn, gamma, cfg, x0, reference, objective, callback):
    trace = SolverTrace(name, gamma)
    logger = _Logger(trace, g, cfg, reference, objective)
    tau = cfg.tau
    x = _start(g, x0)
    for k in range(1, cfg.max_iters + 1):
        h = grad_fn(x) + tau * (x - D(x))
        x_old = x
        x = x - gamma * h
        fp = _rel_change((x,), (x_old,))
        if callback is not None:
            callback(k, x)
        if logger.record(k, x, fp, red_residual=norm2(h)):
            break
    trace.equilibrium = {
        "red_residual": red_residual(g, D, x, tau),
        "red_relative_residual": red_relative_residual(g, D, x, tau, gamma),
    }
    return x, trace


def red_sd(g, D: Agent, cfg: SolverConfig, x0=None, reference=None, objective=None, callback=None):
    """RED steepest descent ``x <- x - gamma (grad g(x) + tau (x - D(x)))``.

    Each record's ``red_residual`` is ``||H||`` evaluated at the iterate the
    step started from. The default step is ``0.9 / (L + tau)``.
    """
    gamma = default_step(g, cfg, red_tau=cfg.tau) if cfg.gamma is None else cfg.gamma
    return _red_core("red_sd", g, D, g.grad, gamma, cfg, x0, reference, objective, callback)


def simba(bf: BlockFidelity, D: Agent, sampler: BlockSampler, cfg: SolverConfig,
          x0=None, reference=None, objective=None, callback=None):
    """Online RED (SIMBA): RED-SD with a minibatch gradient of ``cfg.minibatch`` blocks."""
    gamma = default_step(bf, cfg, red_tau=cfg.tau) if cfg.gamma is None else cfg.gamma

    def grad_fn(x):
        return bf.minibatch_grad(sampler.sample(cfg.minibatch), x)

    return _red_core("simba", bf, D, grad_fn, gamma, cfg, x0, reference, objective, callback)


# ---------------------------------------------------------------------------


def mann_iterate(T: Callable[[np.ndarray], np.ndarray], v0, rho: float | None = None,
                 cfg: SolverConfig | None = None, callback=None):
    """Relaxed fixed-point iteration ``v <- (1 - rho) v + rho T(v)``.

    Returns ``(v, trace)``; the trace objective column is ``||T(v) - v||``
    at the previous iterate.
    """
    cfg = SolverConfig() if cfg is None else cfg
    rho = cfg.rho if rho is None else rho
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    trace = SolverTrace("mann", rho)
    v = np.array(v0, dtype=np.float64)
    for k in range(1, cfg.max_iters + 1):
        tv = T(v)
        v_new = (1.0 - rho) * v + rho * tv
        fp = _rel_change((v_new,), (v,))
        gap = norm2(tv - v)
        v = v_new
        if callback is not None:
            callback(k, v)
        trace.records.append({"iter": k, "fp_residual": fp, "objective": gap})
        if fp <= cfg.fp_tol:
            trace.stop_reason = "tol_reached"
            break
    else:
        trace.stop_reason = "max_iters"
    return v, trace
