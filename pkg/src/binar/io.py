"""Tree CSV, results JSON, trajectory CSV and the YAML run configuration."""
from __future__ import annotations

import copy
import io
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .distributions import ImmigrationSpec, InvalidParameterError, OffspringFamily
from .experiments import CHECKS, ExperimentConfig, Tolerances, Truth
from .model import ModelParams, derive_moments
from .tree import BinarTree, generation_of, tree_size

__all__ = [
    "TREE_HEADER",
    "TreeFormatError",
    "ConfigError",
    "write_tree_csv",
    "read_tree_csv",
    "tree_to_csv",
    "tree_from_csv",
    "dumps_json",
    "write_json",
    "trajectory_rows",
    "write_trajectory_csv",
    "load_defaults",
    "load_config",
    "merge_config",
    "params_from_config",
    "experiment_config",
]

TREE_HEADER = "label,generation,value"


class TreeFormatError(ValueError):
    """Malformed tree CSV; ``line`` is the 1-based line number of the offending row."""

    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class ConfigError(ValueError):
    """Schema violation; ``path`` is the dotted key path."""

    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {msg}")


# --- tree CSV ---------------------------------------------------------------

def tree_to_csv(tree: BinarTree) -> str:
    labels = tree.labels()
    gens = np.floor(np.log2(labels)).astype(np.int64)
    vals = tree.values[1:]
    body = "".join(f"{k},{g},{v}\n" for k, g, v in zip(labels.tolist(), gens.tolist(), vals.tolist()))
    return TREE_HEADER + "\n" + body


def write_tree_csv(tree: BinarTree, path) -> None:
    Path(path).write_bytes(tree_to_csv(tree).encode("ascii"))


def _parse_int(field: str, line: int, what: str) -> int:
    if not field or not (field.isdigit() or (field[0] == "-" and field[1:].isdigit())):
        raise TreeFormatError(line, f"{what} {field!r} is not a decimal integer")
    return int(field)


def tree_from_csv(text: str) -> BinarTree:
    """Parse and validate a tree CSV.

    Rows must list labels ``1 .. 2^(n+1) - 1`` in ascending order with no gap
    or duplicate, a generation column consistent with the label, and a
    nonnegative integer value.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TreeFormatError(1, "empty file")
    if lines[0].rstrip("\r") != TREE_HEADER:
        raise TreeFormatError(1, f"expected header {TREE_HEADER!r}, got {lines[0]!r}")
    values = []
    for i, raw in enumerate(lines[1:], start=2):
        if raw.endswith("\r"):
            raise TreeFormatError(i, "CR line ending; use LF")
        parts = raw.split(",")
        if len(parts) != 3:
            raise TreeFormatError(i, f"expected 3 fields, got {len(parts)}")
        label = _parse_int(parts[0], i, "label")
        gen = _parse_int(parts[1], i, "generation")
        value = _parse_int(parts[2], i, "value")
        expected = len(values) + 1
        if label != expected:
            kind = "duplicate" if label < expected else "gap before"
            raise TreeFormatError(i, f"{kind} label {label} (expected {expected})")
        if gen != generation_of(label):
            raise TreeFormatError(i, f"generation {gen} does not match label {label} (expected {generation_of(label)})")
        if value < 0:
            raise TreeFormatError(i, f"value {value} is negative")
        values.append(value)
    if not values:
        raise TreeFormatError(2, "no data rows")
    depth = int(math.log2(len(values) + 1)) - 1
    if tree_size(depth) != len(values):
        raise TreeFormatError(len(values) + 1, f"{len(values)} rows do not form a complete tree")
    return BinarTree.from_labels(values)


def read_tree_csv(path) -> BinarTree:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        raise TreeFormatError(line, "non-ASCII byte") from None
    return tree_from_csv(text)


# --- JSON and trajectory CSV -----------------------------------------------

def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default, allow_nan=True) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_bytes(dumps_json(obj).encode("utf-8"))


_STATS = (
    ("a_hat", lambda t: t.theta[:, 0]),
    ("c_hat", lambda t: t.theta[:, 1]),
    ("b_hat", lambda t: t.theta[:, 2]),
    ("d_hat", lambda t: t.theta[:, 3]),
    ("sigma2_a_hat", lambda t: t.eta[:, 0]),
    ("sigma2_c_hat", lambda t: t.eta[:, 1]),
    ("sigma2_b_hat", lambda t: t.zeta[:, 0]),
    ("sigma2_d_hat", lambda t: t.zeta[:, 1]),
    ("rho_hat", lambda t: t.rho),
    ("regularized", lambda t: t.regularized.astype(int)),
)


def trajectory_rows(trajectories, truth: Truth | None = None, A=None):
    """Rows ``(replicate, n, stat, value)``; error and QSL rows need ``truth`` (and ``A``)."""
    from .experiments import qsl_running_average

    for t in trajectories:
        extra = []
        if truth is not None:
            err = ((t.theta - np.array(truth.theta)) ** 2).sum(axis=1)
            extra.append(("theta_error_sq", err))
            if A is not None:
                extra.append(("qsl_running_average", qsl_running_average(t, truth, A)))
        cols = [(name, f(t)) for name, f in _STATS] + extra
        for i, n in enumerate(t.generations.tolist()):
            for name, col in cols:
                yield t.replicate, n, name, col[i]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trajectory_csv(trajectories, path, truth: Truth | None = None, A=None) -> None:
    buf = io.StringIO()
    buf.write("replicate,n,stat,value\n")
    for rep, n, stat, value in trajectory_rows(trajectories, truth, A):
        buf.write(f"{rep},{n},{stat},{_fmt(value)}\n")
    Path(path).write_bytes(buf.getvalue().encode("ascii"))


# --- configuration ---------------------------------------------------------

def load_defaults() -> dict:
    text = resources.files("binar").joinpath("defaults.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _check_schema(value, schema, path: str):
    """Every key of ``value`` must exist in ``schema``; leaf types must match."""
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        for k, v in value.items():
            sub = f"{path}.{k}" if path else str(k)
            if k not in schema:
                raise ConfigError(sub, "unknown key")
            if schema[k] is None:
                # optional section whose default is null; validated where it is used
                continue
            _check_schema(v, schema[k], sub)
    elif isinstance(schema, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
    elif isinstance(schema, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
    elif isinstance(schema, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
    elif isinstance(schema, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")


def merge_config(overrides: dict | None) -> dict:
    """Defaults overlaid with ``overrides`` after strict schema validation."""
    base = load_defaults()
    if overrides is None:
        return base
    _check_schema(overrides, base, "")

    def merge(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                merge(dst[k], v)
            else:
                dst[k] = v
        return dst

    return merge(copy.deepcopy(base), overrides)


def load_config(path=None) -> dict:
    if path is None:
        return merge_config(None)
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("", f"invalid YAML: {exc}") from None
    return merge_config(raw or {})


def params_from_config(cfg: dict) -> ModelParams:
    model = cfg["model"]
    try:
        fa = OffspringFamily(model["offspring_a"]["family"], model["offspring_a"]["mean"])
    except InvalidParameterError as exc:
        raise ConfigError("model.offspring_a", str(exc)) from None
    try:
        fb = OffspringFamily(model["offspring_b"]["family"], model["offspring_b"]["mean"])
    except InvalidParameterError as exc:
        raise ConfigError("model.offspring_b", str(exc)) from None
    imm = model["immigration"]
    try:
        spec = ImmigrationSpec(imm["lambda0"], imm["lambda1"], imm["lambda2"])
    except InvalidParameterError as exc:
        raise ConfigError("model.immigration", str(exc)) from None
    try:
        return ModelParams(fa, fb, spec, model["x1"])
    except InvalidParameterError as exc:
        raise ConfigError("model", str(exc)) from None


_TRUTH_SHAPES = {"theta": 4, "eta": 2, "zeta": 2, "rho": None}


def _truth(cfg: dict, params: ModelParams) -> Truth | None:
    raw = cfg["experiment"].get("truth")
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError("experiment.truth", "expected a mapping")
    for k, v in raw.items():
        path = f"experiment.truth.{k}"
        if k not in _TRUTH_SHAPES:
            raise ConfigError(path, "unknown key")
        size = _TRUTH_SHAPES[k]
        if size is None:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(path, "expected a number")
        elif not (isinstance(v, list) and len(v) == size and all(isinstance(x, (int, float)) for x in v)):
            raise ConfigError(path, f"expected a list of {size} numbers")
    return Truth.from_moments(derive_moments(params)).override(**raw)


def experiment_config(cfg: dict, workers: int = 1) -> ExperimentConfig:
    params = params_from_config(cfg)
    exp = cfg["experiment"]
    checks = tuple(exp["checks"])
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise ConfigError("experiment.checks", f"unknown checks {bad}; choose from {list(CHECKS)}")
    lim = cfg["limits"]
    try:
        return ExperimentConfig(
            params=params,
            n_min=exp["n_min"],
            n_max=exp["n_max"],
            replicates=exp["replicates"],
            seed=cfg["seed"],
            checks=checks,
            tolerances=Tolerances(**{k: float(v) for k, v in cfg["tolerances"].items()}),
            clt_generation=exp["clt_generation"],
            clt_replicates=exp["clt_replicates"],
            limit_draws=lim["draws"],
            tail_tol=lim["tail_tol"],
            truth=_truth(cfg, params),
            max_depth=cfg["simulate"]["max_depth"],
            workers=workers,
        )
    except (ValueError, MemoryError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("experiment", str(exc)) from None
