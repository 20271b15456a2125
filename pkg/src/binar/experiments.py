"""Monte Carlo harness for the asymptotic claims.

Replicate ``i`` simulates its tree from ``RngStream(seed).child(tag, i)``,
so results are independent of worker count and of scheduling order.  All
statistics are computed after sorting trajectories by replicate index.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from . import linalg
from .distributions import RngStream
from .estimators import estimate, estimate_path
from .limits import (
    LimitObjects,
    eta_clt_cov,
    limit_matrices_mc,
    qsl_target,
    sigma_rho_sq,
    theta_clt_cov,
    zeta_clt_cov,
)
from .model import DerivedMoments, ModelParams, derive_moments
from .tree import MAX_DEPTH, CapacityError, simulate_tree, tree_size

__all__ = [
    "CHECKS",
    "InsufficientDataError",
    "Tolerances",
    "Truth",
    "ExperimentConfig",
    "ReplicateTrajectory",
    "CheckReport",
    "CltReport",
    "ExperimentReport",
    "run_replicates",
    "clt_samples",
    "rate_check",
    "qsl_check",
    "qsl_running_average",
    "clt_check",
    "variance_consistency_check",
    "run_experiment",
    "default_workers",
]

CHECKS = ("rate", "qsl", "clt", "variance")

# stream tags keep the trajectory run and the CLT run on disjoint streams
_TRAJECTORY_TAG = 1
_CLT_TAG = 2
_LIMITS_TAG = 3


class InsufficientDataError(ValueError):
    pass


def default_workers() -> int:
    raw = os.environ.get("BINAR_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"BINAR_WORKERS must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ValueError(f"BINAR_WORKERS must be a positive integer, got {raw!r}")
    return workers


@dataclass(frozen=True)
class Tolerances:
    rate_factor: float = 3.0
    sup_error: float = 0.1
    sup_fraction: float = 0.9
    qsl_rel_tol: float = 0.25
    clt_frobenius: float = 0.15
    rho_variance_rel: float = 0.20
    ks_alpha: float = 0.01


@dataclass(frozen=True)
class Truth:
    """Parameter values the estimates are compared against."""

    theta: tuple[float, float, float, float]
    eta: tuple[float, float]
    zeta: tuple[float, float]
    rho: float

    @classmethod
    def from_moments(cls, m: DerivedMoments) -> "Truth":
        return cls(tuple(m.theta), tuple(m.eta), tuple(m.zeta), m.rho)

    def override(self, **values) -> "Truth":
        clean = {k: (tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in values.items() if v is not None}
        return replace(self, **clean)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    n_min: int = 6
    n_max: int = 14
    replicates: int = 200
    seed: int = 0
    checks: tuple[str, ...] = CHECKS
    tolerances: Tolerances = field(default_factory=Tolerances)
    clt_generation: int = 12
    clt_replicates: int = 1000
    limit_draws: int = 1_000_000
    tail_tol: float = 1e-8
    truth: Truth | None = None
    max_depth: int = MAX_DEPTH
    workers: int = 1

    def __post_init__(self):
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ValueError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
        if self.replicates < 1 or self.clt_replicates < 1:
            raise ValueError("replicate counts must be at least 1")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("generation range needs 1 <= n_min <= n_max")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for depth in (self.n_max, self.clt_generation):
            if depth > self.max_depth:
                raise CapacityError(f"depth {depth} exceeds the memory budget (max depth {self.max_depth})")

    def resolved_truth(self) -> Truth:
        return self.truth or Truth.from_moments(derive_moments(self.params))


@dataclass(frozen=True)
class ReplicateTrajectory:
    """Estimates of one replicate at ``n = 1 .. n_max`` (row ``n - 1``)."""

    replicate: int
    theta: np.ndarray  # (n_max, 4) in the order (a, c, b, d)
    eta: np.ndarray  # (n_max, 2)
    zeta: np.ndarray  # (n_max, 2)
    rho: np.ndarray  # (n_max,)
    regularized: np.ndarray  # (n_max,) bool

    @property
    def n_max(self) -> int:
        return len(self.rho)

    @property
    def generations(self) -> np.ndarray:
        return np.arange(1, self.n_max + 1)

    @property
    def mothers(self) -> np.ndarray:
        """``|T_{n-1}|`` for every ``n``."""
        return np.array([tree_size(n - 1) for n in self.generations], dtype=float)


def _one_trajectory(args) -> ReplicateTrajectory:
    params, n_max, stream, index = args
    tree = simulate_tree(params, n_max, stream)
    path = estimate_path(tree, n_max)
    return ReplicateTrajectory(
        replicate=index,
        theta=np.array([e.theta.vec for e in path]),
        eta=np.array([e.variances.eta for e in path]),
        zeta=np.array([e.variances.zeta for e in path]),
        rho=np.array([e.variances.rho for e in path]),
        regularized=np.array([e.theta.regularized or e.variances.regularized for e in path]),
    )


def _pool_map(fn, jobs, workers: int):
    if workers == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_replicates(config: ExperimentConfig, replicates=None) -> list[ReplicateTrajectory]:
    """Simulate and estimate incrementally ``config.replicates`` independent trees.

    ``replicates`` optionally restricts the run to a subset of replicate
    indices; each index always reproduces the same trajectory.
    """
    idx = range(config.replicates) if replicates is None else replicates
    root = RngStream(config.seed).child(_TRAJECTORY_TAG)
    jobs = [(config.params, config.n_max, root.child(int(i)), int(i)) for i in idx]
    out = _pool_map(_one_trajectory, jobs, config.workers)
    return sorted(out, key=lambda t: t.replicate)


def _one_endpoint(args):
    params, n, stream, index = args
    est = estimate(simulate_tree(params, n, stream), n)
    return index, est.theta.vec, est.variances.eta, est.variances.zeta, est.variances.rho


def clt_samples(config: ExperimentConfig) -> dict[str, np.ndarray]:
    """``sqrt(|T_{n-1}|) (estimate - truth)`` at ``n = clt_generation`` for every replicate."""
    n = config.clt_generation
    root = RngStream(config.seed).child(_CLT_TAG)
    jobs = [(config.params, n, root.child(i), i) for i in range(config.clt_replicates)]
    rows = sorted(_pool_map(_one_endpoint, jobs, config.workers), key=lambda r: r[0])
    truth = config.resolved_truth()
    scale = math.sqrt(tree_size(n - 1))
    return {
        "theta": scale * (np.array([r[1] for r in rows]) - np.array(truth.theta)),
        "eta": scale * (np.array([r[2] for r in rows]) - np.array(truth.eta)),
        "zeta": scale * (np.array([r[3] for r in rows]) - np.array(truth.zeta)),
        "rho": scale * (np.array([r[4] for r in rows]) - truth.rho)[:, None],
    }


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    statistics: dict
    thresholds: dict

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _require(trajectories, n_min: int, n_max: int, min_replicates: int = 50, min_generations: int = 5):
    if len(trajectories) < min_replicates:
        raise InsufficientDataError(f"need at least {min_replicates} replicates, got {len(trajectories)}")
    if n_max - n_min + 1 < min_generations:
        raise InsufficientDataError(f"need at least {min_generations} generations, got {n_min}..{n_max}")
    short = [t.replicate for t in trajectories if t.n_max < n_max]
    if short:
        raise InsufficientDataError(f"replicates {short[:5]} stop before generation {n_max}")


def _boundedness(errors_sq: np.ndarray, n_min: int, n_max: int, factor: float) -> dict:
    """Normalized errors ``e_n = err_n * |T_{n-1}| / n`` and the boundedness verdict.

    ``errors_sq`` has shape ``(replicates, n_max_available)``; column ``n - 1``
    holds the squared error at generation ``n``.
    """
    n = np.arange(1, errors_sq.shape[1] + 1)
    sizes = np.array([tree_size(k - 1) for k in n], dtype=float)
    e = errors_sq * sizes / n
    first = np.arange(n_min, n_min + (n_max - n_min) // 2 + 1)
    baseline = float(np.median(e[:, first - 1]))
    final = float(np.median(e[:, n_max - 1]))
    return {
        "median_e_final": final,
        "median_e_baseline": baseline,
        "baseline_generations": first.tolist(),
        "median_e_by_n": {int(k): float(np.median(e[:, k - 1])) for k in range(n_min, n_max + 1)},
        "ratio": final / baseline if baseline > 0 else math.inf,
        "passed": bool(final <= factor * baseline),
    }


def rate_check(
    trajectories,
    truth: Truth,
    n_min: int,
    n_max: int,
    tolerances: Tolerances = Tolerances(),
) -> CheckReport:
    """Boundedness of ``||theta_hat_n - theta||^2 |T_{n-1}| / n`` plus a sup-norm consistency gate."""
    _require(trajectories, n_min, n_max)
    diff = np.stack([t.theta[:n_max] for t in trajectories]) - np.array(truth.theta)
    bound = _boundedness((diff**2).sum(axis=2), n_min, n_max, tolerances.rate_factor)
    sup = np.abs(diff[:, n_max - 1]).max(axis=1)
    frac = float(np.mean(sup < tolerances.sup_error))
    late_reg = [int(t.replicate) for t in trajectories if t.regularized[3:n_max].any()]
    passed = bound.pop("passed") and frac >= tolerances.sup_fraction
    return CheckReport(
        "rate",
        passed,
        {**bound, "sup_error_fraction": frac, "replicates": len(trajectories),
         "regularized_after_n3": late_reg},
        {"rate_factor": tolerances.rate_factor, "sup_error": tolerances.sup_error,
         "sup_fraction": tolerances.sup_fraction},
    )


def qsl_running_average(trajectory: ReplicateTrajectory, truth: Truth, A: np.ndarray) -> np.ndarray:
    """``(1/n) sum_{k<=n} |T_{k-1}| (theta_hat_k - theta)^T Lambda (theta_hat_k - theta)`` for every ``n``."""
    diff = trajectory.theta - np.array(truth.theta)
    lam = linalg.kron2(np.eye(2), A)
    quad = np.einsum("ni,ij,nj->n", diff, lam, diff) * trajectory.mothers
    return np.cumsum(quad) / trajectory.generations


def qsl_check(
    trajectories,
    objs: LimitObjects,
    truth: Truth,
    n_max: int,
    tolerances: Tolerances = Tolerances(),
) -> CheckReport:
    """Cross-replicate median of the QSL running average at ``n_max`` against its limit."""
    target = qsl_target(objs)
    running = np.stack([qsl_running_average(t, truth, objs.A)[:n_max] for t in trajectories])
    med = float(np.median(running[:, n_max - 1]))
    rel = abs(med - target) / target
    return CheckReport(
        "qsl",
        bool(rel <= tolerances.qsl_rel_tol),
        {"median_running_average": med, "target": target, "relative_error": rel,
         "median_by_n": {int(k): float(np.median(running[:, k - 1])) for k in range(1, n_max + 1)},
         "replicates": len(trajectories)},
        {"qsl_rel_tol": tolerances.qsl_rel_tol},
    )


@dataclass(frozen=True)
class CltReport:
    kind: str
    passed: bool
    empirical_cov: np.ndarray
    theoretical_cov: np.ndarray
    relative_error: float
    ks_statistics: np.ndarray
    ks_pvalues: np.ndarray
    standardized: np.ndarray
    tolerance: float
    alpha: float

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "standardized"}
        d["replicates"] = int(self.standardized.shape[0])
        return _jsonable(d)

    def as_check(self) -> CheckReport:
        d = self.to_dict()
        return CheckReport(
            f"clt_{self.kind}", self.passed,
            {k: d[k] for k in ("relative_error", "ks_statistics", "ks_pvalues", "empirical_cov",
                               "theoretical_cov", "replicates")},
            {"tolerance": self.tolerance, "ks_alpha": self.alpha},
        )


def clt_check(samples, sigma_theory, kind: str, tolerance: float, alpha: float = 0.01) -> CltReport:
    """Compare scaled estimation errors with their limiting normal law.

    The relative Frobenius error of the sample covariance is checked against
    ``tolerance`` (for the scalar ``rho`` this is the relative variance error),
    and each component, scaled by its theoretical standard deviation, is
    tested against ``N(0, 1)`` by Kolmogorov-Smirnov at level ``alpha``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    sig = np.atleast_2d(np.asarray(sigma_theory, dtype=float))
    if sig.shape != (x.shape[1], x.shape[1]):
        raise ValueError(f"covariance shape {sig.shape} does not match {x.shape[1]} components")
    if sig.shape[0] == 1:
        if not sig[0, 0] > 0:
            raise linalg.SingularMatrixError(sig[0, 0], "theoretical variance is not positive")
    elif not linalg.is_positive_definite(sig):
        raise linalg.SingularMatrixError(linalg.det(sig), "theoretical covariance is singular")
    emp = np.atleast_2d(np.cov(x, rowvar=False))
    rel = float(np.linalg.norm(emp - sig) / np.linalg.norm(sig))
    z = x / np.sqrt(np.diag(sig))
    ks = [stats.kstest(z[:, j], "norm") for j in range(z.shape[1])]
    ks_stat = np.array([r.statistic for r in ks])
    ks_p = np.array([r.pvalue for r in ks])
    passed = rel <= tolerance and bool(np.all(ks_p > alpha))
    return CltReport(kind, passed, emp, sig, rel, ks_stat, ks_p, z, tolerance, alpha)


def variance_consistency_check(
    trajectories,
    truth: Truth,
    n_min: int,
    n_max: int,
    tolerances: Tolerances = Tolerances(),
) -> CheckReport:
    """Rate boundedness applied separately to ``eta_hat``, ``zeta_hat`` and ``rho_hat``."""
    _require(trajectories, n_min, n_max)
    parts = {
        "eta": np.stack([t.eta[:n_max] for t in trajectories]) - np.array(truth.eta),
        "zeta": np.stack([t.zeta[:n_max] for t in trajectories]) - np.array(truth.zeta),
        "rho": np.stack([t.rho[:n_max] for t in trajectories])[..., None] - truth.rho,
    }
    out = {k: _boundedness((v**2).sum(axis=2), n_min, n_max, tolerances.rate_factor) for k, v in parts.items()}
    return CheckReport(
        "variance",
        all(v["passed"] for v in out.values()),
        out,
        {"rate_factor": tolerances.rate_factor},
    )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    checks: list[CheckReport] = field(default_factory=list)
    trajectories: list[ReplicateTrajectory] = field(default_factory=list)
    limits: LimitObjects | None = None
    clt: list[CltReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        cfg = self.config
        truth = cfg.resolved_truth()
        return {
            "passed": self.passed,
            "seed": cfg.seed,
            "generations": [cfg.n_min, cfg.n_max],
            "replicates": cfg.replicates,
            "clt_generation": cfg.clt_generation,
            "clt_replicates": cfg.clt_replicates,
            "truth": _jsonable(asdict(truth)),
            "tolerances": _jsonable(asdict(cfg.tolerances)),
            "checks": [c.to_dict() for c in self.checks],
            "limits": self.limits.to_dict() if self.limits is not None else None,
        }


def run_experiment(config: ExperimentConfig, limits: LimitObjects | None = None) -> ExperimentReport:
    """Run every requested check; ``limits`` may be supplied to reuse a Monte Carlo run."""
    report = ExperimentReport(config)
    if not config.checks:
        return report
    truth = config.resolved_truth()
    tol = config.tolerances
    m = derive_moments(config.params)
    needs_limits = {"qsl", "clt"} & set(config.checks)
    if needs_limits and limits is None:
        limits = limit_matrices_mc(
            config.params, config.limit_draws, RngStream(config.seed).child(_LIMITS_TAG).generator(),
            tail_tol=config.tail_tol,
        )
    report.limits = limits
    if {"rate", "qsl", "variance"} & set(config.checks):
        report.trajectories = run_replicates(config)
    traj = report.trajectories
    if "rate" in config.checks:
        report.checks.append(rate_check(traj, truth, config.n_min, config.n_max, tol))
    if "qsl" in config.checks:
        report.checks.append(qsl_check(traj, limits, truth, config.n_max, tol))
    if "variance" in config.checks:
        report.checks.append(variance_consistency_check(traj, truth, config.n_min, config.n_max, tol))
    if "clt" in config.checks:
        samples = clt_samples(config)
        theory = {
            "theta": theta_clt_cov(limits),
            "eta": eta_clt_cov(limits),
            "zeta": zeta_clt_cov(limits),
            "rho": np.array([[sigma_rho_sq(m)]]),
        }
        for kind in ("theta", "eta", "zeta", "rho"):
            t = tol.rho_variance_rel if kind == "rho" else tol.clt_frobenius
            rep = clt_check(samples[kind], theory[kind], kind, t, tol.ks_alpha)
            report.clt.append(rep)
            report.checks.append(rep.as_check())
    return report
