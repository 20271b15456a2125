"""Command-line entry point.

Exit status: 0 on success, 2 when an input fails validation, 3 when a
``verify`` check fails.
"""
from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path

import numpy as np

from .distributions import InvalidParameterError, RngStream
from .estimators import DepthExceededError, estimate
from .experiments import CHECKS, default_workers, run_experiment
from .io import (
    ConfigError,
    TreeFormatError,
    dumps_json,
    experiment_config,
    load_config,
    params_from_config,
    read_tree_csv,
    tree_to_csv,
    write_trajectory_csv,
)
from .limits import PositiveDefiniteError, limit_matrices_mc, limit_matrices_tree
from .model import derive_moments, validate_hypotheses
from .tree import CapacityError, simulate_tree

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3

# stream tags separating the commands' draws under one master seed
_SIMULATE_TAG = 0
_LIMITS_TAG = 3
_LIMITS_TREE_TAG = 4


class UsageError(ValueError):
    pass


def _flatten(obj, prefix="") -> list[tuple[str, object]]:
    if isinstance(obj, dict):
        rows = []
        for k in sorted(obj):
            rows += _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
        return rows
    if isinstance(obj, (list, tuple, np.ndarray)):
        rows = []
        for i, v in enumerate(obj):
            rows += _flatten(v, f"{prefix}[{i}]")
        return rows
    return [(prefix, obj)]


def _render(doc, fmt: str) -> str:
    if fmt == "json":
        return dumps_json(doc)
    buf = io.StringIO()
    buf.write("key,value\n")
    for k, v in _flatten(doc):
        buf.write(f"{k},{'' if v is None else v}\n")
    return buf.getvalue()


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_bytes(text.encode("utf-8"))
    print(path, file=sys.stderr)


def _config(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return value


def cmd_simulate(args) -> int:
    cfg = _config(args)
    params = params_from_config(cfg)
    depth = cfg["simulate"]["depth"] if args.depth is None else args.depth
    tree = simulate_tree(params, depth, RngStream(cfg["seed"]).child(_SIMULATE_TAG), cfg["simulate"]["max_depth"])
    _emit(tree_to_csv(tree), args.out, "tree.csv")
    return EXIT_OK


def cmd_estimate(args) -> int:
    tree = read_tree_csv(args.tree)
    cfg = _config(args)
    n = args.n if args.n is not None else cfg["estimate"]["generation"]
    if n is not None and (isinstance(n, bool) or not isinstance(n, int)):
        raise ConfigError("estimate.generation", f"expected an integer, got {n!r}")
    if tree.depth < 1:
        raise UsageError("estimation needs a tree with at least one generation of daughters")
    est = estimate(tree, n)
    _emit(_render(est.to_dict(), args.format), args.out, f"estimates.{args.format}")
    return EXIT_OK


def cmd_limits(args) -> int:
    cfg = _config(args)
    params = params_from_config(cfg)
    m = derive_moments(params)
    draws = cfg["limits"]["draws"] if args.draws is None else args.draws
    root = RngStream(cfg["seed"])
    doc = {}
    if args.route in ("mc", "both"):
        mc = limit_matrices_mc(params, draws, root.child(_LIMITS_TAG).generator(), cfg["limits"]["tail_tol"])
        doc["mc"] = mc.to_dict()
    if args.route in ("tree", "both"):
        depth = cfg["limits"]["tree_depth"]
        tree = simulate_tree(params, depth, root.child(_LIMITS_TREE_TAG), cfg["simulate"]["max_depth"])
        doc["tree"] = limit_matrices_tree(tree, m).to_dict()
    _emit(_render(doc, args.format), args.out, f"limits.{args.format}")
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = _config(args)
    m = derive_moments(params_from_config(cfg))
    report = validate_hypotheses(m)
    doc = {"moments": m.to_dict(), "hypotheses": report.to_list(), "all_passed": report.passed}
    _emit(_render(doc, args.format), args.out, f"moments.{args.format}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    if args.checks:
        bad = [c for c in args.checks if c not in CHECKS]
        if bad:
            raise UsageError(f"unknown checks {bad}; choose from {list(CHECKS)}")
        cfg["experiment"]["checks"] = list(dict.fromkeys(args.checks))
    config = experiment_config(cfg, workers=default_workers())
    report = run_experiment(config)
    out = args.out if args.out is not None else Path("binar-report")
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    (out / f"report.{args.format}").write_bytes(_render(doc, args.format).encode("utf-8"))
    if report.trajectories:
        A = report.limits.A if report.limits is not None else None
        write_trajectory_csv(report.trajectories, out / "trajectories.csv", config.resolved_truth(), A)
    from .plotting import save_report_figures

    save_report_figures(report, out)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}")
    print(f"report written to {out}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML file overriding the packaged defaults")
    common.add_argument("--seed", type=_seed, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (default: stdout; verify: ./binar-report)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(prog="binar", description="Simulate and estimate BINAR processes on binary trees.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one tree and write it as CSV")
    p.add_argument("--depth", type=int, help="number of generations after the ancestor")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="estimate all parameters from a tree CSV")
    p.add_argument("tree", type=Path)
    p.add_argument("-n", type=int, help="generation to estimate at (default: tree depth)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("limits", parents=[common], help="estimate the limit matrices")
    p.add_argument("--draws", type=int, help="number of draws of T")
    p.add_argument("--route", choices=("mc", "tree", "both"), default="mc")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("verify", parents=[common], help="run the Monte Carlo checks")
    # validated in cmd_verify: argparse rejects an empty list when choices are set
    p.add_argument("checks", nargs="*", metavar="CHECK", help=f"subset of {', '.join(CHECKS)}")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("moments", parents=[common], help="derived moments and hypothesis report")
    p.set_defaults(func=cmd_moments)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TreeFormatError, InvalidParameterError, CapacityError, DepthExceededError,
            PositiveDefiniteError, UsageError, FileNotFoundError) as exc:
        print(f"binar: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
