"""Config-driven experiments: simulate measurements, reconstruct, report.

A config is a JSON object; :func:`validate_config` fills in every default
and returns the resolved dict that ends up in the run manifest. Rerunning
:func:`run_experiment` on ``manifest["config"]`` reproduces the images and
trace bit for bit.

Pipeline (mirrors a typical PnP super-resolution script):

1. load or synthesize the ground truth image;
2. build the forward operator and simulate ``y = A x + noise``;
3. baseline: CG pseudo-inverse of ``A^T A x = A^T y`` from zero, then one
   agent application (the "denoised pseudo-inverse");
4. run the configured solver from the chosen initializer;
5. write images, ``trace.csv`` and ``manifest.json``.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .agents import (
    Agent,
    GaussianSmooth,
    IdentityAgent,
    MedianFilter,
    ScaledIdentity,
    Slicewise2D,
    SoftThreshold,
    TVProx,
)
from .core import SeededRng, gaussian_noise
from .diagnostics import psnr
from .fidelity import BlockFidelity, BlockSampler, DataFidelity
from .imageio import read_image, write_image
from .linops import (
    DenseRandomProjection,
    Diagonal,
    Identity,
    PeriodicConvolution,
    cg_solve,
    gaussian_kernel,
    superres_operator,
)
from .mace import AgentStack, mace_solve
from .phantoms import PHANTOMS, phantom
from . import solvers as S

__all__ = [
    "ConfigError",
    "SOLVERS",
    "PROBLEMS",
    "AGENTS",
    "TRACE_COLUMNS",
    "validate_config",
    "build_problem",
    "run_experiment",
    "load_demo",
    "DEMOS",
]

SOLVERS = ("admm", "fista", "pnp_admm", "pnp_fista", "pnp_ista", "red_sd",
           "online_pnp", "simba", "mace")
PROBLEMS = ("superres", "deblur", "compressive_sensing", "inpaint", "denoise", "identity",
            "volume_fusion")
AGENTS = ("identity", "scaled_identity", "soft_threshold", "tv_prox", "gaussian_smooth",
          "median_filter")
INITS = ("denoised_pinv", "pinv", "adjoint", "zeros", "measurements")
TRACE_COLUMNS = ("iter", "fp_residual", "objective", "psnr", "ce_residual_g", "ce_residual_d",
                 "red_residual", "consensus_residual", "equilibrium_residual")
DEMOS = ("superres2x", "superres4x", "cs20", "deblur", "fusion3d")

_NOISE_STREAM, _MASK_STREAM, _SAMPLER_STREAM = 1, 2, 3

_DEMO_DIR = Path(__file__).with_name("demos")


class ConfigError(ValueError):
    """Invalid experiment config; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# validation

_SOLVER_DEFAULTS: dict[str, Any] = {
    "name": "pnp_admm",
    "gamma": None,
    "admm_penalty": None,
    "tau": 1.0,
    "rho": 0.5,
    "theta_schedule": "nesterov",
    "max_iters": 100,
    "fp_tol": 1e-6,
    "prox_method": "auto",
    "cg_tol": 1e-3,
    "cg_maxiter": 10,
    "k_inner": 3,
    "minibatch": 1,
    "sampling": "iid_uniform",
    "blocks": 1,
    "track_equilibrium": False,
}

_PROBLEM_DEFAULTS: dict[str, dict[str, Any]] = {
    "superres": {"rate": 4, "blur_sigma": 1.0, "noise_sigma": 0.02},
    "deblur": {"kernel": {"gaussian_sigma": 1.0}, "noise_sigma": 0.02},
    "compressive_sensing": {"subsample_fraction": 0.2, "seed": 0, "noise_sigma": 0.0},
    "inpaint": {"mask_fraction": 0.5, "seed": 0, "noise_sigma": 0.0},
    "denoise": {"noise_sigma": 0.0},
    "identity": {"noise_sigma": 0.0},
    "volume_fusion": {"axes": [0, 1, 2], "mask_fraction": 1.0, "seed": 0, "noise_sigma": 0.1,
                      "fidelity_gamma": 1.0, "weights": None},
}

_AGENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "identity": {},
    "scaled_identity": {"alpha": 0.5},
    "soft_threshold": {"tau": 0.1},
    "tv_prox": {"tau": 0.05, "inner_iters": 50},
    "gaussian_smooth": {"sigma": 1.0},
    "median_filter": {"window": 3},
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(path, "expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _need(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _positive(value, path):
    _need(isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0,
          path, f"must be a positive number, got {value!r}")


def _nonneg(value, path):
    _need(isinstance(value, (int, float)) and not isinstance(value, bool) and value >= 0,
          path, f"must be a non-negative number, got {value!r}")


def _validate_agent(agent_cfg, path) -> dict:
    _need(isinstance(agent_cfg, dict) and "kind" in agent_cfg, f"{path}.kind", "agent kind is required")
    kind = agent_cfg["kind"]
    _need(kind in AGENTS, f"{path}.kind", f"unknown agent {kind!r}; expected one of {AGENTS}")
    rest = {k: v for k, v in agent_cfg.items() if k not in ("kind", "noise_level")}
    out = {"kind": kind, "noise_level": agent_cfg.get("noise_level"), **_merge(_AGENT_DEFAULTS[kind], rest, path)}
    for key in ("tau", "sigma", "alpha"):
        if key in out:
            _nonneg(out[key], f"{path}.{key}")
    if kind == "tv_prox":
        _need(isinstance(out["inner_iters"], int) and out["inner_iters"] >= 1,
              f"{path}.inner_iters", "must be a positive integer")
    if kind == "median_filter":
        _need(isinstance(out["window"], int) and out["window"] >= 1, f"{path}.window",
              "must be a positive integer")
    return out


def validate_config(config: dict, base_dir: Path | None = None) -> dict:
    """Check `config` and return a fully resolved copy.

    Raises:
        ConfigError: With a dotted path to the first invalid field.
    """
    _need(isinstance(config, dict), "$", "config must be a JSON object")
    allowed = {"name", "seed", "image", "problem", "solver", "agent", "init", "pinv",
               "output_dir", "write_images"}
    unknown = set(config) - allowed
    _need(not unknown, f"$.{sorted(unknown)[0] if unknown else ''}", "unknown field")
    out: dict[str, Any] = {"name": config.get("name", "experiment")}
    out["seed"] = config.get("seed", 0)
    _need(isinstance(out["seed"], int) and out["seed"] >= 0, "seed", "must be a non-negative integer")

    image = config.get("image", {"phantom": "piecewise_constant_blocks", "shape": [64, 64]})
    _need(isinstance(image, dict), "image", "expected an object")
    if "path" in image:
        p = Path(image["path"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        _need(p.exists(), "image.path", f"file does not exist: {p}")
        out["image"] = {"path": str(p), "format": image.get("format")}
    else:
        img = _merge({"phantom": "piecewise_constant_blocks", "shape": [64, 64], "seed": None},
                     image, "image")
        _need(img["phantom"] in PHANTOMS, "image.phantom", f"expected one of {PHANTOMS}")
        _need(isinstance(img["shape"], list) and 1 <= len(img["shape"]) <= 4
              and all(isinstance(n, int) and n > 0 for n in img["shape"]),
              "image.shape", "must be a list of 1-4 positive integers")
        if img["seed"] is None:
            img["seed"] = out["seed"]
        out["image"] = img

    problem = config.get("problem", {"kind": "deblur"})
    _need(isinstance(problem, dict) and "kind" in problem, "problem.kind", "problem kind is required")
    kind = problem["kind"]
    _need(kind in PROBLEMS, "problem.kind", f"unknown problem {kind!r}; expected one of {PROBLEMS}")
    prob = {"kind": kind, **_merge(_PROBLEM_DEFAULTS[kind],
                                   {k: v for k, v in problem.items() if k != "kind"}, "problem")}
    _nonneg(prob["noise_sigma"], "problem.noise_sigma")
    if kind == "superres":
        _need(prob["rate"] in (2, 3, 4), "problem.rate", f"must be 2, 3 or 4, got {prob['rate']!r}")
        _positive(prob["blur_sigma"], "problem.blur_sigma")
    if kind == "compressive_sensing":
        f = prob["subsample_fraction"]
        _need(isinstance(f, (int, float)) and 0 < f <= 1, "problem.subsample_fraction",
              f"must lie in (0, 1], got {f!r}")
    if kind in ("inpaint", "volume_fusion"):
        f = prob["mask_fraction"]
        _need(isinstance(f, (int, float)) and 0 < f <= 1, "problem.mask_fraction",
              f"must lie in (0, 1], got {f!r}")
    if kind == "deblur":
        k = prob["kernel"]
        _need(isinstance(k, dict) and ("gaussian_sigma" in k) != ("array" in k), "problem.kernel",
              "give exactly one of gaussian_sigma or array")
        if "gaussian_sigma" in k:
            _positive(k["gaussian_sigma"], "problem.kernel.gaussian_sigma")
    out["problem"] = prob

    solver = _merge(_SOLVER_DEFAULTS, config.get("solver", {}), "solver")
    _need(solver["name"] in SOLVERS, "solver.name", f"unknown solver {solver['name']!r}; expected one of {SOLVERS}")
    if solver["gamma"] is not None:
        _positive(solver["gamma"], "solver.gamma")
    if solver["admm_penalty"] is not None:
        _positive(solver["admm_penalty"], "solver.admm_penalty")
        _need(solver["gamma"] is None, "solver.admm_penalty", "give either gamma or admm_penalty")
    _need(isinstance(solver["blocks"], int) and solver["blocks"] >= 1, "solver.blocks",
          "must be a positive integer")
    _need(solver["sampling"] in BlockSampler.RULES, "solver.sampling",
          f"expected one of {BlockSampler.RULES}")
    try:
        _solver_config(solver, out["seed"])
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None
    if kind == "volume_fusion":
        _need(solver["name"] == "mace", "solver.name", "volume_fusion runs with the mace solver")
        axes = prob["axes"]
        _need(isinstance(axes, list) and len(axes) >= 1 and all(a in (0, 1, 2) for a in axes)
              and len(set(axes)) == len(axes), "problem.axes", "must be distinct axes from 0, 1, 2")
        _need(len(out["image"].get("shape", [0, 0, 0])) == 3, "image.shape", "volume_fusion needs a 3-D image")
        _positive(prob["fidelity_gamma"], "problem.fidelity_gamma")
    elif solver["name"] == "mace":
        raise ConfigError("solver.name", "mace is only wired up for the volume_fusion problem")
    out["solver"] = solver

    out["agent"] = _validate_agent(config.get("agent", {"kind": "tv_prox"}), "agent")
    out["init"] = config.get("init", "denoised_pinv")
    _need(out["init"] in INITS, "init", f"expected one of {INITS}")
    out["pinv"] = _merge({"tol": 1e-5, "maxiter": 1000}, config.get("pinv", {}), "pinv")
    _positive(out["pinv"]["tol"], "pinv.tol")
    out["output_dir"] = str(config.get("output_dir", f"pnpkit_out/{out['name']}"))
    out["write_images"] = bool(config.get("write_images", True))
    return out


def _solver_config(solver: dict, seed: int) -> S.SolverConfig:
    gamma = solver["gamma"]
    if solver["admm_penalty"] is not None:
        gamma = 1.0 / solver["admm_penalty"]
    return S.SolverConfig(
        gamma=gamma, tau=solver["tau"], rho=solver["rho"], theta_schedule=solver["theta_schedule"],
        max_iters=solver["max_iters"], fp_tol=solver["fp_tol"], seed=seed,
        prox_method=solver["prox_method"], cg_tol=solver["cg_tol"], cg_maxiter=solver["cg_maxiter"],
        k_inner=solver["k_inner"], minibatch=solver["minibatch"], sampling=solver["sampling"],
        track_equilibrium=solver["track_equilibrium"],
    )


# ---------------------------------------------------------------------------
# construction


def make_agent(agent_cfg: dict) -> Agent:
    kind = agent_cfg["kind"]
    kw = {"noise_level": agent_cfg.get("noise_level")}
    if kind == "identity":
        return IdentityAgent(**kw)
    if kind == "scaled_identity":
        return ScaledIdentity(agent_cfg["alpha"], **kw)
    if kind == "soft_threshold":
        return SoftThreshold(agent_cfg["tau"], **kw)
    if kind == "tv_prox":
        return TVProx(agent_cfg["tau"], agent_cfg["inner_iters"], **kw)
    if kind == "gaussian_smooth":
        return GaussianSmooth(agent_cfg["sigma"], **kw)
    if kind == "median_filter":
        return MedianFilter(agent_cfg["window"], **kw)
    raise ConfigError("agent.kind", f"unknown agent {kind!r}")


def _ground_truth(cfg: dict) -> np.ndarray:
    img = cfg["image"]
    if "path" in img:
        return read_image(img["path"], img.get("format"))
    return phantom(img["phantom"], img["shape"], img["seed"])


def build_problem(cfg: dict):
    """Return ``(x_true, op, y)`` for a resolved config."""
    x_true = _ground_truth(cfg)
    prob = cfg["problem"]
    kind = prob["kind"]
    shape = x_true.shape
    rng = SeededRng(cfg["seed"], stream=_NOISE_STREAM)
    if kind == "superres":
        op = superres_operator(shape, prob["rate"], prob["blur_sigma"])
    elif kind == "deblur":
        k = prob["kernel"]
        kernel = (gaussian_kernel(k["gaussian_sigma"], len(shape)) if "gaussian_sigma" in k
                  else np.asarray(k["array"], dtype=np.float64))
        op = PeriodicConvolution(kernel, shape)
    elif kind == "compressive_sensing":
        n = int(np.prod(shape))
        m = max(1, int(round(prob["subsample_fraction"] * n)))
        op = DenseRandomProjection(m, shape, seed=prob["seed"])
    elif kind in ("inpaint", "volume_fusion"):
        mask = (SeededRng(prob["seed"], stream=_MASK_STREAM).uniform(int(np.prod(shape))) < prob["mask_fraction"])
        op = Diagonal(mask.reshape(shape).astype(np.float64))
    else:
        op = Identity(shape)
    clean = op(x_true)
    y = clean + gaussian_noise(rng, clean.shape, prob["noise_sigma"])
    return x_true, op, y


def _pinv(op, y, pinv_cfg):
    def normal(v):
        return op.adjoint(op.apply(v))

    info = cg_solve(normal, op.adjoint(y), None, tol=pinv_cfg["tol"], maxiter=pinv_cfg["maxiter"])
    return info[0]


def _fidelity_prox_agent(g: DataFidelity, gamma: float, scfg: S.SolverConfig) -> Agent:
    from .agents import FunctionAgent

    return FunctionAgent(lambda v: g.prox(v, gamma, **scfg.prox_kwargs()), label="fidelity_prox",
                         is_prox=True)


def _run_solver(cfg, g, D, x_init, x_true):
    solver = cfg["solver"]
    name = solver["name"]
    scfg = _solver_config(solver, cfg["seed"])
    if name == "mace":
        prob = cfg["problem"]
        agents = [_fidelity_prox_agent(g, prob["fidelity_gamma"], scfg)]
        agents += [Slicewise2D(a, D) for a in prob["axes"]]
        weights = prob["weights"]
        stack = AgentStack(agents, None if weights is None else np.asarray(weights, dtype=np.float64))
        return mace_solve(stack, x_init, cfg=scfg, reference=x_true)
    if name in ("online_pnp", "simba"):
        b = solver["blocks"]
        bf = BlockFidelity.split(g, b, weight=b * g.weight)
        sampler = BlockSampler(SeededRng(cfg["seed"], stream=_SAMPLER_STREAM), b, solver["sampling"])
        fn = S.online_pnp if name == "online_pnp" else S.simba
        return fn(bf, D, sampler, scfg, x0=x_init, reference=x_true)
    fn = getattr(S, name)
    return fn(g, D, scfg, x0=x_init, reference=x_true)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_trace_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec.get(c)) for c in TRACE_COLUMNS])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return None
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _matching_residual(name: str, equilibrium: dict) -> tuple[str, float] | None:
    key = {
        "admm": "ce_residual_g", "pnp_admm": "ce_residual_g",
        "fista": "pnp_ista_residual", "pnp_fista": "pnp_ista_residual",
        "pnp_ista": "pnp_ista_residual", "online_pnp": "pnp_ista_residual",
        "red_sd": "red_relative_residual", "simba": "red_relative_residual",
        "mace": "consensus_residual",
    }[name]
    if key not in equilibrium:
        return None
    value = equilibrium[key]
    if name in ("admm", "pnp_admm"):
        value = max(value, equilibrium["ce_residual_d"])
    return key, value


def _reconstruct(cfg, op, y, g, D, x_true, metrics):
    x_pinv = _pinv(op, y, cfg["pinv"])
    x_den = D(x_pinv)
    metrics["psnr_pinv"] = psnr(x_pinv, x_true)
    metrics["psnr_denoised_pinv"] = psnr(x_den, x_true)
    x_init = {
        "denoised_pinv": x_den, "pinv": x_pinv, "adjoint": op.adjoint(y),
        "zeros": np.zeros(x_true.shape), "measurements": y.copy(),
    }[cfg["init"]]
    x_rec, trace = _run_solver(cfg, g, D, x_init, x_true)
    return x_rec, trace, x_den


def run_experiment(config: dict, output_dir=None, quiet: bool = True, base_dir=None) -> dict:
    """Run one experiment and return its manifest (also written to disk).

    Args:
        config: Raw or resolved config dict.
        output_dir: Overrides ``config["output_dir"]``.
        quiet: Suppress progress printing.
        base_dir: Directory that relative image paths are resolved against.
    """
    cfg = validate_config(config, None if base_dir is None else Path(base_dir))
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest: dict[str, Any] = {
        "config": cfg, "seed": cfg["seed"], "version": __version__,
        "trace_path": "trace.csv", "status": "ok",
    }
    x_true, op, y = build_problem(cfg)
    g = DataFidelity(op, y)
    D = make_agent(cfg["agent"])
    metrics: dict[str, Any] = {}
    if cfg["init"] == "measurements" and op.output_shape != op.input_shape:
        raise ConfigError("init", "measurements init needs a same-shape forward operator")
    try:
        x_rec, trace, x_den = _reconstruct(cfg, op, y, g, D, x_true, metrics)
    except Exception as exc:  # reported in the manifest rather than raised
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
        manifest["metrics"] = _jsonable(metrics)
        manifest["wall_time"] = time.perf_counter() - t0
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return manifest
    write_trace_csv(out / "trace.csv", trace.records)
    metrics.update({
        "psnr": psnr(x_rec, x_true),
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
        "gamma": trace.gamma,
        "final_fp_residual": trace.records[-1]["fp_residual"] if trace.records else None,
        "equilibrium": trace.equilibrium,
    })
    match = _matching_residual(cfg["solver"]["name"], trace.equilibrium)
    if match is not None:
        metrics["matching_residual"] = {"name": match[0], "value": match[1]}
    manifest["metrics"] = _jsonable(metrics)
    outputs = {}
    if cfg["write_images"]:
        for label, img in (("reconstruction", x_rec), ("ground_truth", x_true),
                           ("denoised_pinv", x_den)):
            write_image(out / f"{label}.rawf64", img, "rawf64")
            outputs[label] = f"{label}.rawf64"
            if img.ndim == 2:
                write_image(out / f"{label}.pgm", img, "pgm")
    manifest["outputs"] = outputs
    manifest["wall_time"] = time.perf_counter() - t0
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if not quiet:
        print(f"{cfg['name']}: {cfg['solver']['name']} {trace.iterations} iters "
              f"({trace.stop_reason}), PSNR {metrics['psnr']:.2f} dB "
              f"(denoised pinv {metrics['psnr_denoised_pinv']:.2f} dB), "
              f"{manifest['wall_time']:.2f}s -> {out}")
    return manifest


def load_demo(name: str) -> dict:
    """Packaged config for one of :data:`DEMOS`."""
    if name not in DEMOS:
        raise ConfigError("demo", f"unknown demo {name!r}; expected one of {DEMOS}")
    return json.loads((_DEMO_DIR / f"{name}.json").read_text())
