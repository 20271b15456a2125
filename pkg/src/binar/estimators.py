"""Weighted least-squares estimation from an observed BINAR tree.

All estimators at generation ``n`` use the mothers in ``T_{n-1}`` together
with their daughters in ``G_1 .. G_n``.  Mean parameters are fitted with
weights ``1 / c_k``, ``c_k = 1 + X_k``; the variance parameters with
``1 / d_k``, ``d_k = (1 + X_k)^2``.

Sums are accumulated one generation at a time with ``math.fsum``; the full
sum is the ``fsum`` of the per-generation partials, so incremental and
from-scratch estimates agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .model import DerivedMoments
from .tree import BinarTree, tree_size

__all__ = [
    "DepthExceededError",
    "ThetaHat",
    "VarianceEstimates",
    "EstimateSet",
    "MartingaleDiagnostic",
    "WlsAccumulator",
    "generation_sums",
    "wls_theta",
    "residuals",
    "wls_eta",
    "wls_zeta",
    "rho_hat",
    "estimate",
    "estimate_path",
    "increasing_process",
]


class DepthExceededError(ValueError):
    pass


def _fsum(x) -> float:
    return math.fsum(np.asarray(x, dtype=float).ravel().tolist())


# Order of the per-generation partial sums kept by the accumulator.
_KEYS = ("wxx", "wx", "w", "wx_even", "w_even", "wx_odd", "w_odd", "vxx", "vx", "v")


def generation_sums(mothers, even, odd) -> dict[str, float]:
    """Partial sums of the normal equations over one set of mothers.

    ``w = 1/(1+X)`` enters ``S`` and the mean right-hand sides; ``v = w^2``
    enters ``Q``.
    """
    x = np.asarray(mothers, dtype=float)
    xe = np.asarray(even, dtype=float)
    xo = np.asarray(odd, dtype=float)
    w = 1.0 / (1.0 + x)
    v = w * w
    return {
        "wxx": _fsum(w * x * x),
        "wx": _fsum(w * x),
        "w": _fsum(w),
        "wx_even": _fsum(w * x * xe),
        "w_even": _fsum(w * xe),
        "wx_odd": _fsum(w * x * xo),
        "w_odd": _fsum(w * xo),
        "vxx": _fsum(v * x * x),
        "vx": _fsum(v * x),
        "v": _fsum(v),
    }


@dataclass(frozen=True)
class ThetaHat:
    """WLS estimate of ``(a, c, b, d)`` at generation ``n``."""

    a: float
    c: float
    b: float
    d: float
    S: np.ndarray
    regularized: bool
    n: int

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.a, self.c, self.b, self.d])

    def to_dict(self) -> dict:
        return {
            "a": self.a, "c": self.c, "b": self.b, "d": self.d,
            "S": self.S.tolist(), "regularized": self.regularized, "n": self.n,
        }


@dataclass(frozen=True)
class VarianceEstimates:
    """``eta = (sigma2_a, sigma2_c)``, ``zeta = (sigma2_b, sigma2_d)`` and ``rho``.

    Values are the raw WLS output; negative variance estimates are possible
    for small trees and are not clipped.
    """

    eta: np.ndarray
    zeta: np.ndarray
    rho: float
    Q: np.ndarray
    regularized: bool
    n: int

    def to_dict(self) -> dict:
        return {
            "eta": self.eta.tolist(), "zeta": self.zeta.tolist(), "rho": self.rho,
            "Q": self.Q.tolist(), "regularized": self.regularized, "n": self.n,
        }


@dataclass(frozen=True)
class EstimateSet:
    theta: ThetaHat
    variances: VarianceEstimates
    nodes: int = field(default=0)

    @property
    def n(self) -> int:
        return self.theta.n

    def to_dict(self) -> dict:
        return {
            "generation": self.n,
            "node_count": self.nodes,
            "mother_count": tree_size(self.n - 1),
            "theta": self.theta.to_dict(),
            "variances": self.variances.to_dict(),
        }


class WlsAccumulator:
    """Generation-incremental normal equations for one tree.

    ``advance()`` folds in the mothers of the next generation; after ``n``
    calls the accumulator holds the sums over ``T_{n-1}``.
    """

    def __init__(self, tree: BinarTree):
        self.tree = tree
        self.n = 0
        self._parts: dict[str, list[float]] = {k: [] for k in _KEYS}

    def advance(self) -> None:
        r = self.n
        if r + 1 > self.tree.depth:
            raise DepthExceededError(f"generation {r + 1} exceeds tree depth {self.tree.depth}")
        vals = self.tree.values
        mothers = vals[2**r: 2 ** (r + 1)]
        kids = vals[2 ** (r + 1): 2 ** (r + 2)]
        sums = generation_sums(mothers, kids[0::2], kids[1::2])
        for k in _KEYS:
            self._parts[k].append(sums[k])
        self.n += 1

    def total(self, key: str) -> float:
        return math.fsum(self._parts[key])

    def S(self) -> np.ndarray:
        t = self.total
        return np.array([[t("wxx"), t("wx")], [t("wx"), t("w")]])

    def Q(self) -> np.ndarray:
        t = self.total
        return np.array([[t("vxx"), t("vx")], [t("vx"), t("v")]])

    def theta(self) -> ThetaHat:
        if self.n < 1:
            raise DepthExceededError("at least one generation of daughters is needed")
        s_raw = self.S()
        s, reg = linalg.regularize_if_singular(s_raw)
        t = self.total
        a, c = linalg.solve(s, np.array([t("wx_even"), t("w_even")]))
        b, d = linalg.solve(s, np.array([t("wx_odd"), t("w_odd")]))
        return ThetaHat(float(a), float(c), float(b), float(d), s, reg, self.n)

    def variances(self, theta: ThetaHat) -> VarianceEstimates:
        ve, vo = residuals(self.tree, theta, self.n)
        x = self.tree.upto(self.n - 1).astype(float)
        return _variance_estimates(x, ve, vo, self.Q(), self.n)


def _check_n(tree: BinarTree, n: int) -> int:
    n = int(n)
    if not 1 <= n <= tree.depth:
        raise DepthExceededError(f"generation n={n} must lie in 1..{tree.depth}")
    return n


def _accumulate(tree: BinarTree, n: int) -> WlsAccumulator:
    acc = WlsAccumulator(tree)
    for _ in range(n):
        acc.advance()
    return acc


def wls_theta(tree: BinarTree, n: int) -> ThetaHat:
    """``theta_hat_n = S_{n-1}^{-1} sum_{k in T_{n-1}} (1/c_k) Phi_k chi_k^T``.

    ``S_{n-1}`` gets ``I_2`` added when it is singular at the conditioning
    floor; ``ThetaHat.regularized`` records it.  The even and odd daughters
    give two independent 2x2 solves.
    """
    n = _check_n(tree, n)
    return _accumulate(tree, n).theta()


def residuals(tree: BinarTree, theta: ThetaHat, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(V_hat_{2k}, V_hat_{2k+1})`` for every mother ``k`` in ``T_{n-1}`` (label order)."""
    n = _check_n(tree, n)
    x = tree.upto(n - 1).astype(float)
    kids = tree.values[2: 2 ** (n + 1)].astype(float)
    ve = kids[0::2] - theta.a * x - theta.c
    vo = kids[1::2] - theta.b * x - theta.d
    return ve, vo


def _variance_estimates(x, ve, vo, q_raw, n) -> VarianceEstimates:
    q, reg = linalg.regularize_if_singular(q_raw)
    v = 1.0 / (1.0 + x) ** 2
    ve2 = ve * ve
    vo2 = vo * vo
    eta = linalg.solve(q, np.array([_fsum(v * ve2 * x), _fsum(v * ve2)]))
    zeta = linalg.solve(q, np.array([_fsum(v * vo2 * x), _fsum(v * vo2)]))
    rho = _fsum(ve * vo) / len(x)
    return VarianceEstimates(eta, zeta, float(rho), q, reg, n)


def _variances(tree: BinarTree, n: int, theta: ThetaHat | None) -> VarianceEstimates:
    n = _check_n(tree, n)
    acc = _accumulate(tree, n)
    if theta is None:
        theta = acc.theta()
    return acc.variances(theta)


def wls_eta(tree: BinarTree, n: int, theta: ThetaHat | None = None) -> np.ndarray:
    """``eta_hat_n = Q_{n-1}^{-1} sum (1/d_k) V_hat_{2k}^2 Phi_k``; estimates ``(sigma2_a, sigma2_c)``."""
    return _variances(tree, n, theta).eta


def wls_zeta(tree: BinarTree, n: int, theta: ThetaHat | None = None) -> np.ndarray:
    """Odd-daughter counterpart of :func:`wls_eta`; estimates ``(sigma2_b, sigma2_d)``."""
    return _variances(tree, n, theta).zeta


def rho_hat(tree: BinarTree, n: int, theta: ThetaHat | None = None) -> float:
    """Average of ``V_hat_{2k} V_hat_{2k+1}`` over ``T_{n-1}``."""
    return _variances(tree, n, theta).rho


def estimate(tree: BinarTree, n: int | None = None) -> EstimateSet:
    n = tree.depth if n is None else n
    n = _check_n(tree, n)
    acc = _accumulate(tree, n)
    theta = acc.theta()
    return EstimateSet(theta, acc.variances(theta), nodes=tree_size(n))


def estimate_path(tree: BinarTree, n_max: int | None = None) -> list[EstimateSet]:
    """Estimates at every generation ``1 .. n_max``, computed incrementally."""
    n_max = tree.depth if n_max is None else _check_n(tree, n_max)
    acc = WlsAccumulator(tree)
    out = []
    for _ in range(n_max):
        acc.advance()
        theta = acc.theta()
        out.append(EstimateSet(theta, acc.variances(theta), nodes=tree_size(acc.n)))
    return out


@dataclass(frozen=True)
class MartingaleDiagnostic:
    bracket: np.ndarray
    normalized: np.ndarray
    n: int


def increasing_process(tree: BinarTree, m: DerivedMoments, n: int) -> MartingaleDiagnostic:
    """Predictable quadratic variation ``<M>_n = sum_{k<n} L_k`` under the true moments."""
    n = _check_n(tree, n)
    x = tree.upto(n - 1).astype(float)
    w2 = 1.0 / (1.0 + x) ** 2
    g11 = m.sigma2_a * x + m.sigma2_c
    g22 = m.sigma2_b * x + m.sigma2_d
    phi = (x * x, x, np.ones_like(x))  # entries of [[X^2, X], [X, 1]]
    gam = {(0, 0): g11, (0, 1): np.full_like(x, m.rho), (1, 1): g22}
    bracket = np.empty((4, 4))
    for i in range(2):
        for j in range(2):
            g = gam[(min(i, j), max(i, j))]
            for p in range(2):
                for q in range(2):
                    bracket[2 * i + p, 2 * j + q] = _fsum(w2 * g * phi[p + q])
    return MartingaleDiagnostic(bracket, bracket / tree_size(n - 1), n)
