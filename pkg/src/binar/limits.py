"""Limit objects of the asymptotic theory.

Every matrix limit is an expectation ``E[f(T)]`` over the limit variable
``T``.  Two independent routes estimate them:

* Monte Carlo over draws of :func:`binar.tree.sample_T`
  (:func:`limit_matrices_mc`), and
* node averages over one deep simulated tree
  (:func:`limit_matrices_tree`), which converge to the same expectations.

``T`` is integer valued, so both routes reduce the sample to counts per
support point and evaluate every integrand once per distinct value.
Closed forms are available for ``E[T]``, ``E[T^2]`` and ``sigma_rho^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .distributions import RngStream
from .model import DerivedMoments, ModelParams, derive_moments
from .tree import BinarTree, sample_T, tree_size

__all__ = [
    "PositiveDefiniteError",
    "LimitObjects",
    "mean_T",
    "second_moment_T",
    "second_moment_T_recursion",
    "sigma_rho_sq",
    "limit_matrices_mc",
    "limit_matrices_tree",
    "limit_objects_from_sample",
    "tree_average",
    "theta_clt_cov",
    "eta_clt_cov",
    "zeta_clt_cov",
    "qsl_target",
    "qsl_target_trace",
    "MATRIX_FIELDS",
]

MATRIX_FIELDS = ("A", "B", "L", "M_ac", "M_bd")


class PositiveDefiniteError(ValueError):
    pass


def mean_T(m: DerivedMoments) -> float:
    """``E[T] = c_bar / (1 - a_bar)``."""
    return m.c_bar / (1.0 - m.a_bar)


def second_moment_T(m: DerivedMoments) -> float:
    """Closed form for ``E[T^2]``.

    The third term's denominator is ``(1 - a_bar)(1 - a_bar**2)`` with the
    square of the mean ``a_bar``, not ``a2_bar``.  The expression treats
    distinct series terms as uncorrelated; it is exact when ``a == b``
    (compare :func:`second_moment_T_recursion`).
    """
    if m.c_bar == 0.0 and m.c2_bar == 0.0:
        return 0.0
    ab, a2b, cb = m.a_bar, m.a2_bar, m.c_bar
    return (
        m.upsilon * cb / (1.0 - ab)
        + (m.c2_bar - m.upsilon * cb) / (1.0 - a2b)
        + 2.0 * ab * cb**2 / ((1.0 - ab) * (1.0 - ab**2))
    )


def second_moment_T_recursion(m: DerivedMoments, tol: float = 1e-15, max_iter: int = 100_000) -> float:
    """Fixed point of the exact first/second moment recursion along a random branch.

    ``Y' = a_kappa ∘ Y + e_kappa`` with the offspring mean and the immigration
    coordinate chosen by the same fair coin gives

    ``E[Y'] = a_bar E[Y] + c_bar``,
    ``E[Y'^2] = s E[Y] + a2_bar E[Y^2] + (a c + b d) E[Y] + c2_bar``

    with ``s = (sigma2_a + sigma2_b) / 2``.  The recursion is iterated from
    ``Y = 0`` until it stops moving.
    """
    s = 0.5 * (m.sigma2_a + m.sigma2_b)
    cross = m.a * m.c + m.b * m.d
    m1 = m2 = 0.0
    for _ in range(max_iter):
        n1 = m.a_bar * m1 + m.c_bar
        n2 = s * m1 + m.a2_bar * m2 + cross * m1 + m.c2_bar
        if abs(n1 - m1) <= tol * max(1.0, n1) and abs(n2 - m2) <= tol * max(1.0, n2):
            return n2
        m1, m2 = n1, n2
    raise RuntimeError("second-moment recursion did not converge")


def sigma_rho_sq(m: DerivedMoments) -> float:
    """Asymptotic variance of ``sqrt(|T_{n-1}|) (rho_hat_n - rho)``."""
    return (
        m.sigma2_a * m.sigma2_b * second_moment_T(m)
        + (m.sigma2_a * m.sigma2_d + m.sigma2_b * m.sigma2_c) * mean_T(m)
        + m.nu2
        - m.rho**2
    )


def _integrands(t: np.ndarray, m: DerivedMoments) -> dict[str, np.ndarray]:
    """Every integrand evaluated on the support points ``t`` (shape ``(K, ...)``)."""
    t = t.astype(float)
    one = np.ones_like(t)
    phi = np.stack([np.stack([t * t, t], -1), np.stack([t, one], -1)], -2)  # (K, 2, 2)
    w = 1.0 / (1.0 + t)
    gam = np.stack(
        [
            np.stack([m.sigma2_a * t + m.sigma2_c, m.rho * one], -1),
            np.stack([m.rho * one, m.sigma2_b * t + m.sigma2_d], -1),
        ],
        -2,
    )
    # row-major Kronecker product gam ⊗ phi for every support point
    L = np.einsum("kij,kpq->kipjq", gam, phi).reshape(-1, 4, 4)
    num_ac = 2 * m.sigma2_a**2 * t**2 + (m.mu4_a - 3 * m.sigma2_a**2 + 4 * m.sigma2_a * m.sigma2_c) * t + m.mu4_c - m.sigma2_c**2
    num_bd = 2 * m.sigma2_b**2 * t**2 + (m.mu4_b - 3 * m.sigma2_b**2 + 4 * m.sigma2_b * m.sigma2_d) * t + m.mu4_d - m.sigma2_d**2
    return {
        "mean_T": t,
        "second_moment_T": t * t,
        "A": w[:, None, None] * phi,
        "B": (w**2)[:, None, None] * phi,
        "L": (w**2)[:, None, None] * L,
        "M_ac": (num_ac * w**4)[:, None, None] * phi,
        "M_bd": (num_bd * w**4)[:, None, None] * phi,
        "sigma_rho2": m.sigma2_a * m.sigma2_b * t**2
        + (m.sigma2_a * m.sigma2_d + m.sigma2_b * m.sigma2_c) * t
        + m.nu2
        - m.rho**2,
    }


def _moments_from_counts(support: np.ndarray, counts: np.ndarray, m: DerivedMoments):
    """Means and per-sample variances of every integrand under the empirical law."""
    total = counts.sum()
    p = counts / total
    f = _integrands(support, m)
    means = {k: np.tensordot(p, v, axes=1) for k, v in f.items()}
    var = {k: np.maximum(np.tensordot(p, v * v, axes=1) - means[k] ** 2, 0.0) for k, v in f.items()}
    return means, var, int(total)


def _counts(values) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.int64)
    counts = np.bincount(values)
    support = np.flatnonzero(counts)
    return support, counts[support]


@dataclass(frozen=True)
class LimitObjects:
    """Estimated limit expectations with per-entry standard errors."""

    mean_T: float
    second_moment_T: float
    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    M_ac: np.ndarray
    M_bd: np.ndarray
    sigma_rho2: float
    se: dict = field(default_factory=dict)
    route: str = "mc"
    samples: int = 0

    @property
    def Lambda(self) -> np.ndarray:
        return linalg.kron2(np.eye(2), self.A)

    def is_positive_definite(self) -> bool:
        return all(linalg.is_positive_definite(getattr(self, k)) for k in ("A", "B", "L"))

    def require_positive_definite(self) -> None:
        bad = [k for k in ("A", "B", "L") if not linalg.is_positive_definite(getattr(self, k))]
        if bad:
            raise PositiveDefiniteError(
                f"limit matrices {', '.join(bad)} are not positive definite "
                "(degenerate T, too few draws, or inconsistent moments)"
            )

    def to_dict(self) -> dict:
        out = {
            "route": self.route,
            "samples": self.samples,
            "mean_T": self.mean_T,
            "second_moment_T": self.second_moment_T,
            "sigma_rho2": self.sigma_rho2,
        }
        for k in MATRIX_FIELDS:
            out[k] = getattr(self, k).tolist()
        out["standard_errors"] = {k: np.asarray(v).tolist() for k, v in sorted(self.se.items())}
        if self.is_positive_definite():
            out["theta_clt_cov"] = theta_clt_cov(self).tolist()
            out["eta_clt_cov"] = eta_clt_cov(self).tolist()
            out["zeta_clt_cov"] = zeta_clt_cov(self).tolist()
            out["qsl_target"] = qsl_target(self)
        return out


def _build(means, se, route, samples) -> LimitObjects:
    return LimitObjects(
        mean_T=float(means["mean_T"]),
        second_moment_T=float(means["second_moment_T"]),
        A=means["A"], B=means["B"], L=means["L"], M_ac=means["M_ac"], M_bd=means["M_bd"],
        sigma_rho2=float(means["sigma_rho2"]),
        se=se, route=route, samples=samples,
    )


def limit_objects_from_sample(values, m: DerivedMoments, route: str = "sample") -> LimitObjects:
    """Limit objects from i.i.d. draws of ``T`` with standard errors ``sd / sqrt(N)``."""
    support, counts = _counts(values)
    means, var, total = _moments_from_counts(support, counts, m)
    se = {k: np.sqrt(v / total) for k, v in var.items()}
    return _build(means, se, route, total)


def limit_matrices_mc(
    params: ModelParams,
    draws: int,
    rng,
    tail_tol: float = 1e-8,
    min_draws: int = 10_000,
    check: bool = True,
) -> LimitObjects:
    """Monte Carlo estimate of every limit object from ``draws`` samples of ``T``.

    Raises :class:`PositiveDefiniteError` when ``A``, ``B`` or ``L`` is not
    positive definite (unless ``check=False``).
    """
    if draws < min_draws:
        raise ValueError(f"at least {min_draws} draws of T are required, got {draws}")
    m = derive_moments(params)
    t = sample_T(params, tail_tol, rng, size=draws)
    objs = limit_objects_from_sample(t, m, route="mc")
    if check:
        objs.require_positive_definite()
    return objs


def tree_average(tree: BinarTree, f, depth: int | None = None):
    """``(1/|T_depth|) sum_{k in T_depth} f(X_k)`` with ``f`` vectorized over integer values.

    ``f`` is evaluated once per distinct value and weighted by its count.
    """
    depth = tree.depth if depth is None else depth
    support, counts = _counts(tree.upto(depth))
    vals = np.asarray(f(support), dtype=float)
    return np.tensordot(counts, vals, axes=1) / counts.sum()


def limit_matrices_tree(
    tree: BinarTree,
    m: DerivedMoments,
    batch_generation: int | None = None,
) -> LimitObjects:
    """Node averages ``(1/|T_n|) sum_k f(X_k)`` over a whole tree.

    Standard errors come from batch means: the subtrees rooted at generation
    ``batch_generation`` (default ``depth // 2 - 2``, at least 1) are
    conditionally independent given their roots, so the spread of their
    averages reflects the within-tree correlation that plain i.i.d. errors
    would miss.
    """
    vals = tree.upto(tree.depth)
    support, counts = _counts(vals)
    means, _, total = _moments_from_counts(support, counts, m)
    if batch_generation is None:
        batch_generation = max(1, tree.depth // 2 - 2)
    if not 1 <= batch_generation < tree.depth:
        raise ValueError(f"batch_generation must lie in 1..{tree.depth - 1}")
    nb = 2**batch_generation
    width = int(vals.max()) + 1
    batch_counts = np.zeros((nb, width), dtype=np.int64)
    for g in range(batch_generation, tree.depth + 1):
        block = tree.generation(g).reshape(nb, -1)
        rows = np.repeat(np.arange(nb), block.shape[1])
        np.add.at(batch_counts, (rows, block.ravel()), 1)
    f = _integrands(np.arange(width), m)
    p = batch_counts / batch_counts.sum(axis=1, keepdims=True)
    se = {}
    for k, v in f.items():
        bm = np.tensordot(p, v, axes=1)  # (nb, ...)
        se[k] = bm.std(axis=0, ddof=1) / math.sqrt(nb)
    return _build(means, se, "tree", total)


def theta_clt_cov(objs: LimitObjects) -> np.ndarray:
    """``(I2 ⊗ A^{-1}) L (I2 ⊗ A^{-1})``."""
    objs.require_positive_definite()
    k = linalg.kron2(np.eye(2), linalg.inverse(objs.A))
    return k @ objs.L @ k


def eta_clt_cov(objs: LimitObjects) -> np.ndarray:
    """``B^{-1} M_ac B^{-1}``."""
    objs.require_positive_definite()
    binv = linalg.inverse(objs.B)
    return binv @ objs.M_ac @ binv


def zeta_clt_cov(objs: LimitObjects) -> np.ndarray:
    objs.require_positive_definite()
    binv = linalg.inverse(objs.B)
    return binv @ objs.M_bd @ binv


def qsl_target(objs: LimitObjects) -> float:
    """``tr(Lambda^{-1/2} L Lambda^{-1/2})`` with ``Lambda^{-1/2} = I2 ⊗ A^{-1/2}``."""
    objs.require_positive_definite()
    k = linalg.kron2(np.eye(2), linalg.sym_power2(objs.A, -0.5))
    return linalg.trace(k @ objs.L @ k)


def qsl_target_trace(objs: LimitObjects) -> float:
    """``tr(Lambda^{-1} L)``; equals :func:`qsl_target` by cyclicity of the trace."""
    objs.require_positive_definite()
    return linalg.trace(linalg.kron2(np.eye(2), linalg.inverse(objs.A)) @ objs.L)
