"""BINAR trees: labelling arithmetic, simulation, branch process and the limit variable T.

Node ``k`` lives in generation ``floor(log2 k)``; its children are ``2k`` and
``2k + 1``.  A tree of depth ``n`` stores ``X_1 .. X_{2^(n+1)-1}`` in a flat
int64 array indexed directly by label (slot 0 is unused), so generation
``r`` is the contiguous slice ``values[2^r : 2^(r+1)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import BERNOULLI, RngStream, as_generator, sample_immigration_pair, thin
from .model import DerivedMoments, ModelParams, derive_moments

__all__ = [
    "MAX_DEPTH",
    "CapacityError",
    "LabelError",
    "BinarTree",
    "BranchPath",
    "mother",
    "children",
    "generation_of",
    "tree_size",
    "simulate_tree",
    "simulate_trees",
    "simulate_branch",
    "sample_T",
    "truncation_depth",
]

MAX_DEPTH = 24


class CapacityError(MemoryError):
    pass


class LabelError(IndexError):
    pass


def _check_label(k) -> int:
    k = int(k)
    if k < 1:
        raise LabelError(f"node labels start at 1, got {k}")
    return k


def mother(k: int) -> int:
    k = _check_label(k)
    if k == 1:
        raise LabelError("the ancestor (label 1) has no mother")
    return k // 2


def children(k: int) -> tuple[int, int]:
    k = _check_label(k)
    return 2 * k, 2 * k + 1


def generation_of(k: int) -> int:
    return _check_label(k).bit_length() - 1


def tree_size(depth: int) -> int:
    """``|T_depth| = 2^(depth+1) - 1``."""
    return 2 ** (depth + 1) - 1


@dataclass(frozen=True, eq=False)
class BinarTree:
    """Immutable, label-indexed storage of a complete tree up to ``depth``."""

    values: np.ndarray
    depth: int

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.int64, copy=True)
        depth = int(self.depth)
        if depth < 0:
            raise ValueError("depth must be nonnegative")
        if vals.shape != (2 ** (depth + 1),):
            raise ValueError(
                f"a depth-{depth} tree needs {2 ** (depth + 1)} slots (slot 0 unused), got {vals.shape}"
            )
        if np.any(vals[1:] < 0):
            raise ValueError("tree values must be nonnegative integers")
        vals[0] = 0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "depth", depth)

    @classmethod
    def from_labels(cls, values) -> "BinarTree":
        """Build from ``X_1, X_2, ...`` (label order, no unused slot)."""
        vals = np.asarray(values, dtype=np.int64)
        depth = int(math.log2(len(vals) + 1)) - 1
        if tree_size(depth) != len(vals):
            raise ValueError(f"{len(vals)} values do not form a complete binary tree")
        return cls(np.concatenate([[0], vals]), depth)

    def __len__(self) -> int:
        return tree_size(self.depth)

    def __getitem__(self, k: int) -> int:
        k = _check_label(k)
        if k > tree_size(self.depth):
            raise LabelError(f"label {k} is outside a depth-{self.depth} tree")
        return int(self.values[k])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinarTree)
            and self.depth == other.depth
            and np.array_equal(self.values, other.values)
        )

    def generation(self, r: int) -> np.ndarray:
        return generation_slice(self, r)

    def labels(self) -> np.ndarray:
        return np.arange(1, tree_size(self.depth) + 1)

    def upto(self, r: int) -> np.ndarray:
        """Values over the subtree ``T_r`` in label order."""
        if not 0 <= r <= self.depth:
            raise LabelError(f"generation {r} outside 0..{self.depth}")
        return self.values[1:2 ** (r + 1)]

    def truncate(self, depth: int) -> "BinarTree":
        if not 0 <= depth <= self.depth:
            raise ValueError(f"cannot truncate a depth-{self.depth} tree to depth {depth}")
        return BinarTree(self.values[: 2 ** (depth + 1)], depth)


def generation_slice(tree: BinarTree, r: int) -> np.ndarray:
    if not 0 <= r <= tree.depth:
        raise LabelError(f"generation {r} outside 0..{tree.depth}")
    return tree.values[2**r: 2 ** (r + 1)]


def _check_depth(depth: int, max_depth: int) -> int:
    depth = int(depth)
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if depth > max_depth:
        raise CapacityError(
            f"depth {depth} needs {tree_size(depth)} nodes, beyond the budget (max depth {max_depth})"
        )
    return depth


def _next_generation(params: ModelParams, mothers: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    # fixed draw order within a generation: a-thinning, b-thinning, immigration
    even = thin(params.offspring_a, mothers, gen)
    odd = thin(params.offspring_b, mothers, gen)
    eps_even, eps_odd = sample_immigration_pair(params.immigration, gen, size=mothers.shape)
    out = np.empty(mothers.shape[:-1] + (2 * mothers.shape[-1],), dtype=np.int64)
    out[..., 0::2] = even + eps_even
    out[..., 1::2] = odd + eps_odd
    return out


def simulate_tree(params: ModelParams, depth: int, rng: RngStream, max_depth: int = MAX_DEPTH) -> BinarTree:
    """Simulate generations ``G_0 .. G_depth`` of the BINAR process.

    Each generation ``r -> r+1`` draws from the sub-stream ``rng.child(r)``,
    so a deeper tree built from the same stream extends a shallower one.
    """
    depth = _check_depth(depth, max_depth)
    if not isinstance(rng, RngStream):
        raise TypeError("simulate_tree needs an RngStream so generations can be keyed")
    values = np.zeros(2 ** (depth + 1), dtype=np.int64)
    values[1] = params.x1
    for r in range(depth):
        mothers = values[2**r: 2 ** (r + 1)]
        values[2 ** (r + 1): 2 ** (r + 2)] = _next_generation(params, mothers, rng.child(r).generator())
    return BinarTree(values, depth)


def simulate_trees(params: ModelParams, depth: int, rng: RngStream, replicates, max_depth: int = MAX_DEPTH):
    """Simulate one tree per replicate index, each from ``rng.child(index)``."""
    return [simulate_tree(params, depth, rng.child(int(i)), max_depth) for i in replicates]


@dataclass(frozen=True, eq=False)
class BranchPath:
    """Values ``Y_1 .. Y_m`` along random branches and the selector bits ``kappa``.

    ``values`` has shape ``(paths, steps + 1)`` and ``kappa`` ``(paths, steps)``;
    ``kappa[:, i] == 0`` means step ``i`` followed the even (``a``) child.
    """

    values: np.ndarray
    kappa: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def _select_step(params: ModelParams, y: np.ndarray, kappa: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """One coupled step ``a_kappa ∘ y + e_kappa`` for every path."""
    fa, fb, imm = params.offspring_a, params.offspring_b, params.immigration
    even = kappa == 0
    if fa.family == fb.family:
        mean = np.where(even, fa.mean, fb.mean)
        if fa.family == BERNOULLI:
            thinned = gen.binomial(y, mean)
        else:
            thinned = gen.poisson(mean * y)
    else:
        thinned = np.where(even, thin(fa, y, gen), thin(fb, y, gen))
    # e_kappa = U + W_kappa with the common shock U shared by both coordinates
    shock = gen.poisson(imm.lambda0, size=y.shape)
    own = gen.poisson(np.where(even, imm.lambda1, imm.lambda2))
    return (thinned + shock + own).astype(np.int64)


def simulate_branch(params: ModelParams, steps: int, rng, paths: int = 1) -> BranchPath:
    """Follow uniformly random branches from the ancestor for ``steps`` generations."""
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    gen = as_generator(rng)
    values = np.empty((paths, steps + 1), dtype=np.int64)
    kappa = np.empty((paths, steps), dtype=np.int8)
    values[:, 0] = params.x1
    y = values[:, 0].copy()
    for i in range(steps):
        k = gen.integers(0, 2, size=paths, dtype=np.int8)
        y = _select_step(params, y, k, gen)
        values[:, i + 1] = y
        kappa[:, i] = k
    return BranchPath(values, kappa)


def truncation_depth(m: DerivedMoments, tail_tol: float) -> int:
    """Smallest ``K`` with ``a_bar^K * c_bar / (1 - a_bar) < tail_tol``.

    ``a_bar^K c_bar / (1 - a_bar)`` bounds the expected mass of the series
    terms left out after the first ``K``.
    """
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    if m.c_bar == 0.0:
        return 1
    head = m.c_bar / (1.0 - m.a_bar)
    k = max(1, math.ceil(math.log(tail_tol / head) / math.log(m.a_bar)))
    while m.a_bar**k * head >= tail_tol:
        k += 1
    while k > 1 and m.a_bar ** (k - 1) * head < tail_tol:
        k -= 1
    return k


def sample_T(params: ModelParams, tail_tol: float, rng, size=None):
    """Draw from the limit law ``T = sum_k a_2 ∘ ... ∘ a_{k-1} ∘ e_k``.

    The first ``K = truncation_depth(...)`` terms are kept.  The composition
    is evaluated from the innermost term outwards,
    ``S <- e_k + a_k ∘ S``, where each step picks ``(a_k, e_k)`` jointly by a
    fair coin (``a`` with the even immigration coordinate, ``b`` with the
    odd one) and every thinning uses fresh offspring draws.
    """
    m = derive_moments(params)
    k_terms = truncation_depth(m, tail_tol)
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    s = np.zeros(n, dtype=np.int64)
    # innermost term first: e_{K+1} (= e + a ∘ 0), then e_k + a_k ∘ S down to k = 2
    for j in range(k_terms):
        kappa = gen.integers(0, 2, size=n, dtype=np.int8)
        s = _select_step(params, s, kappa, gen)
    if size is None:
        return int(s[0])
    return s
