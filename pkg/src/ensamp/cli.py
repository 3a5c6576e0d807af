"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(partial outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    KernelConfig,
    ResourceConfig,
    load_kernel_config,
    load_resource_config,
    serialize_kernel_config,
    serialize_resource_config,
)
from .dynamics import Potential
from .executor import Pilot
from .metrics import overhead_csv, overhead_sweep, oversubscription_run, strong_scaling, weak_scaling
from .workflow import SALWorkflow, plain_md_baseline

log = logging.getLogger("ensamp")

SEED_ENV = "ENSAMP_SEED"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _pairs(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        try:
            n, s = item.split(":")
            out.append((int(n), int(s)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected instances:slots pairs, got {item!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = Parser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    common.add_argument("--seed", type=int, default=None, help=f"seed override (fallback: ${SEED_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="ensamp", description="Ensemble simulation-analysis workflows on a local pilot.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    for name, helptext in (("run", "run the adaptive workflow named in the kernel config"),
                           ("baseline", "plain MD with the same step budget")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--resource", required=True, type=Path)
        s.add_argument("--kernel", required=True, type=Path)
        if name == "baseline":
            s.add_argument("--steps", type=int, default=None, help="total step budget (default: iterations x replicas x n_steps)")

    s = sub.add_parser("overhead", parents=[common], help="null-task overhead for one or more batch sizes")
    s.add_argument("--tasks", type=_int_list, default=[1, 4, 16, 64])
    s.add_argument("--repeats", type=int, default=5)

    for name, helptext in (("scale-strong", "fixed instances, growing slot count"),
                           ("scale-weak", "instances and slots grow together")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--kernel", required=True, type=Path)
        s.add_argument("--padding", type=float, default=0.05, help="seconds of sleep added to each simulation task")
        s.add_argument("--repeats", type=int, default=5)
        if name == "scale-strong":
            s.add_argument("--slots", type=_int_list, default=[1, 2, 4, 8])
        else:
            s.add_argument("--points", type=_pairs, default=[(4, 4), (8, 8), (16, 16)], help="e.g. 8:8,16:16")

    s = sub.add_parser("oversub", parents=[common], help="more equal tasks than slots")
    s.add_argument("--instances", type=_int_list, default=[2, 4, 8])
    s.add_argument("--slots", type=int, default=2)
    s.add_argument("--task-seconds", type=float, default=0.1)
    s.add_argument("--mode", choices=["burn", "sleep"], default="burn")
    s.add_argument("--repeats", type=int, default=5)

    s = sub.add_parser("demo-potential", parents=[common], help="tabulate a model potential on a grid")
    s.add_argument("--kernel", type=Path, default=None)
    s.add_argument("--potential", choices=["double_well_1d", "double_well_2d", "mueller_brown"], default=None)
    s.add_argument("--barrier", type=float, default=None, help="barrier height in kT (double wells)")
    s.add_argument("--grid", type=int, default=61)
    return p


def _resolve_seed(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise UsageError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _kernel(args, seed) -> KernelConfig:
    cfg = load_kernel_config(args.kernel)
    return cfg.replace(seed=seed) if seed is not None else cfg


def _write_manifest(out: Path, args, seed, outputs, resource=None, kernel=None, status="ok", started=0.0):
    manifest = {
        "ensamp_version": __version__,
        "command": args.command,
        "argv": args.argv,
        "seed": seed,
        "status": status,
        "resource_config": serialize_resource_config(resource) if resource else None,
        "kernel_config": serialize_kernel_config(kernel) if kernel else None,
        "outputs": sorted(str(p.name) for p in outputs),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "elapsed_s": time.perf_counter() - started,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _cmd_run(args, out, seed):
    resource: ResourceConfig = load_resource_config(args.resource)
    kernel = _kernel(args, seed)
    with Pilot(resource.handle(), poll_interval=resource.poll_interval) as pilot:
        if args.command == "run":
            report = SALWorkflow(kernel).run(pilot, resource.walltime_limit)
        else:
            report = plain_md_baseline(kernel, pilot, args.steps)
    paths = list(report.write(out).values())
    status = "aborted: " + report.error if report.aborted else "ok"
    return paths, resource, kernel, status


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def _cmd_overhead(args, out, seed):
    reports = overhead_sweep(args.tasks, repeats=args.repeats)
    return [_write(out, "overhead.csv", overhead_csv(reports))], None, None, "ok"


def _cmd_strong(args, out, seed):
    kernel = _kernel(args, seed)
    rep = strong_scaling(kernel, args.slots, padding_s=args.padding, repeats=args.repeats)
    return [_write(out, "strong_scaling.csv", rep.to_csv())], None, kernel, "ok"


def _cmd_weak(args, out, seed):
    kernel = _kernel(args, seed)
    rep = weak_scaling(kernel, args.points, padding_s=args.padding, repeats=args.repeats)
    return [_write(out, "weak_scaling.csv", rep.to_csv())], None, kernel, "ok"


def _cmd_oversub(args, out, seed):
    rep = oversubscription_run(args.instances, args.slots, task_s=args.task_seconds, mode=args.mode,
                               repeats=args.repeats)
    return [_write(out, "oversubscription.csv", rep.to_csv())], None, None, "ok"


def _cmd_potential(args, out, seed):
    kernel = _kernel(args, seed) if args.kernel else None
    kind = args.potential or (kernel.potential if kernel else "double_well_2d")
    barrier = args.barrier if args.barrier is not None else (kernel.barrier_height if kernel else 8.0)
    kT = kernel.temperature if kernel else 1.0
    pot = Potential(kind, height=barrier * kT)
    if pot.dim == 1:
        xs = np.linspace(-2.0, 2.0, args.grid)
        rows = ["x,energy"] + [f"{x:.6g},{pot.energy([x]):.10g}" for x in xs]
    else:
        if kind == "mueller_brown":
            xs, ys = np.linspace(-1.5, 1.2, args.grid), np.linspace(-0.5, 2.0, args.grid)
        else:
            xs, ys = np.linspace(-2.0, 2.0, args.grid), np.linspace(-1.0, 1.0, args.grid)
        rows = ["x,y,energy"] + [f"{x:.6g},{y:.6g},{pot.energy([x, y]):.10g}" for x in xs for y in ys]
    paths = [_write(out, "potential.csv", "\n".join(rows) + "\n")]
    minima = ["index," + ",".join(f"x{j}" for j in range(pot.dim)) + ",energy"]
    minima += [f"{i}," + ",".join(f"{v:.10g}" for v in m) + f",{pot.energy(m):.10g}" for i, m in enumerate(pot.minima)]
    paths.append(_write(out, "minima.csv", "\n".join(minima) + "\n"))
    return paths, None, kernel, "ok"


COMMANDS = {
    "run": _cmd_run,
    "baseline": _cmd_run,
    "overhead": _cmd_overhead,
    "scale-strong": _cmd_strong,
    "scale-weak": _cmd_weak,
    "oversub": _cmd_oversub,
    "demo-potential": _cmd_potential,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        seed = _resolve_seed(args.seed)
        out = _prepare_out(Path(args.out), args.force)
    except UsageError as exc:
        print(f"ensamp: error: {exc}", file=sys.stderr)
        return 1
    try:
        paths, resource, kernel, status = COMMANDS[args.command](args, out, seed)
    except ConfigError as exc:
        print(f"ensamp: config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:  # arguments that parse but make no sense together
        print(f"ensamp: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: keep what we have
        log.exception("run failed")
        _write_manifest(out, args, seed, [], status=f"failed: {type(exc).__name__}: {exc}", started=started)
        return 2
    _write_manifest(out, args, seed, paths, resource, kernel, status, started)
    if status != "ok":
        print(f"ensamp: {status}", file=sys.stderr)
        return 2
    return 0
