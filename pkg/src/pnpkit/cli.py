"""Command-line entry point: ``pnpkit run|demo|validate``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .experiment import DEMOS, ConfigError, load_demo, run_experiment, validate_config


def _load(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError("$", f"cannot read {p}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"{p} is not valid JSON (line {exc.lineno}, column {exc.colno})") from None
    # a manifest carries its resolved config under "config"
    if isinstance(data, dict) and "config" in data and "version" in data:
        data = data["config"]
    return data, p.parent


def _apply_overrides(cfg: dict, args, out: str | None) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if out is not None:
        cfg["output_dir"] = out
    return cfg


def _run_one(job):
    cfg, base_dir, quiet = job
    return run_experiment(cfg, quiet=quiet, base_dir=base_dir)


def _report(manifest: dict) -> int:
    if manifest["status"] != "ok":
        err = manifest["error"]
        print(f"solver failed: {err['type']}: {err['message']}", file=sys.stderr)
        return 2
    return 0


def _cmd_run(args) -> int:
    jobs = []
    multi = len(args.configs) > 1
    for i, path in enumerate(args.configs):
        cfg, base = _load(path)
        out = args.out
        if out is not None and multi:
            out = str(Path(out) / f"{i:02d}_{Path(path).stem}")
        jobs.append((_apply_overrides(cfg, args, out), base, args.quiet))
    # validate everything up front so a bad file fails before any work
    for cfg, base, _ in jobs:
        validate_config(cfg, base)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(_run_one, jobs))
    else:
        manifests = [_run_one(j) for j in jobs]
    return max(_report(m) for m in manifests)


def _cmd_demo(args) -> int:
    cfg = _apply_overrides(load_demo(args.name), args, args.out)
    return _report(run_experiment(cfg, quiet=args.quiet))


def _cmd_validate(args) -> int:
    cfg, base = _load(args.config)
    resolved = validate_config(cfg, base)
    if not args.quiet:
        print(json.dumps(resolved, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="pnpkit", description="Plug-and-Play reconstruction runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run config or manifest files")
    run.add_argument("configs", nargs="+", metavar="config.json")
    run.add_argument("--jobs", type=int, default=1, help="run independent configs in N processes")
    run.set_defaults(func=_cmd_run)

    demo = sub.add_parser("demo", parents=[common], help="run a packaged demo")
    demo.add_argument("name", choices=DEMOS)
    demo.set_defaults(func=_cmd_demo)

    val = sub.add_parser("validate", parents=[common], help="check a config and print it resolved")
    val.add_argument("config", metavar="config.json")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
