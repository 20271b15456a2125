"""Offspring and immigration distributions, and seeded random streams.

Randomness is organised as counter-based streams: a :class:`RngStream` is a
``(seed, key)`` value, and every generator it hands out is a fresh Philox
instance keyed from that pair.  A stream therefore behaves like a value; the
same stream always reproduces the same draws, and sub-streams derived with
:meth:`RngStream.child` are statistically independent of their parent and of
each other.  Trees key their draws by ``(replicate, generation)`` so the
output does not depend on how replicates are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BERNOULLI",
    "POISSON",
    "OffspringFamily",
    "ImmigrationSpec",
    "RngStream",
    "as_generator",
    "thin",
    "sample_immigration_pair",
    "family_central_moment",
    "poisson_central_moment",
    "poisson_raw_moment",
]

BERNOULLI = "bernoulli"
POISSON = "poisson"
_FAMILIES = (BERNOULLI, POISSON)


class InvalidParameterError(ValueError):
    """A distribution parameter lies outside its admissible range."""


@dataclass(frozen=True)
class OffspringFamily:
    """Law of the i.i.d. summands used by a thinning operator.

    Only families whose mean lies strictly in (0, 1) are accepted, which is
    what the stability condition on the autoregression requires and keeps
    the variance strictly positive.
    """

    family: str
    mean: float

    def __post_init__(self):
        fam = str(self.family).lower()
        if fam not in _FAMILIES:
            raise InvalidParameterError(
                f"unknown offspring family {self.family!r}; expected one of {_FAMILIES}"
            )
        object.__setattr__(self, "family", fam)
        mean = float(self.mean)
        if not (0.0 < mean < 1.0) or not math.isfinite(mean):
            raise InvalidParameterError(
                f"{fam} offspring mean must lie in (0, 1), got {self.mean!r}"
            )
        object.__setattr__(self, "mean", mean)

    @property
    def variance(self) -> float:
        return family_central_moment(self, 2)

    @classmethod
    def bernoulli(cls, p: float) -> "OffspringFamily":
        return cls(BERNOULLI, p)

    @classmethod
    def poisson(cls, lam: float) -> "OffspringFamily":
        return cls(POISSON, lam)


@dataclass(frozen=True)
class ImmigrationSpec:
    """Common-shock Poisson immigration pair.

    ``eps_even = U + W1`` and ``eps_odd = U + W2`` with independent
    ``U ~ Poisson(lambda0)``, ``W1 ~ Poisson(lambda1)``, ``W2 ~ Poisson(lambda2)``.
    Hence ``c = lambda0 + lambda1``, ``d = lambda0 + lambda2`` and the
    covariance of the pair is ``lambda0``.

    All-zero rates are accepted (degenerate immigration is useful as a
    control); the moment hypotheses are checked separately by
    :func:`binar.model.validate_hypotheses`.
    """

    lambda0: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0.0:
                raise InvalidParameterError(f"{name} must be a finite nonnegative real, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def c(self) -> float:
        return self.lambda0 + self.lambda1

    @property
    def d(self) -> float:
        return self.lambda0 + self.lambda2

    @property
    def rho(self) -> float:
        return self.lambda0


@dataclass(frozen=True)
class RngStream:
    """Seeded, keyed random stream.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    key : tuple of int
        Stream identifier, e.g. ``(replicate,)`` or ``(replicate, generation)``.
    """

    seed: int
    key: tuple[int, ...] = field(default=())

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        object.__setattr__(self, "seed", seed)
        key = tuple(int(k) for k in self.key)
        if any(k < 0 or k >= 2**64 for k in key):
            raise ValueError(f"stream keys must be 64-bit unsigned integers, got {self.key!r}")
        object.__setattr__(self, "key", key)

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngStream`, a ``Generator`` or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def thin(family: OffspringFamily, x, rng):
    """Apply the thinning operator ``family ∘ x``.

    Returns the sum of ``x`` i.i.d. draws from ``family``.  ``x`` may be a
    scalar or an integer array (one independent thinning per entry).

    Bernoulli thinning is drawn as one ``Binomial(x, p)`` variate and
    Poisson thinning as one ``Poisson(x * lam)`` variate; both are exact
    distributional identities for the sum.
    """
    gen = as_generator(rng)
    x_arr = np.asarray(x, dtype=np.int64)
    if np.any(x_arr < 0):
        raise ValueError("thinning is defined for nonnegative integers only")
    if family.family == BERNOULLI:
        out = gen.binomial(x_arr, family.mean)
    else:
        out = gen.poisson(family.mean * x_arr)
    out = np.asarray(out, dtype=np.int64)
    if np.ndim(x) == 0:
        return int(out)
    return out


def sample_immigration_pair(spec: ImmigrationSpec, rng, size=None):
    """Draw ``(eps_even, eps_odd)`` from the common-shock construction.

    With ``size=None`` a pair of Python ints is returned; otherwise two int64
    arrays of the given size.
    """
    gen = as_generator(rng)
    u = gen.poisson(spec.lambda0, size=size)
    w1 = gen.poisson(spec.lambda1, size=size)
    w2 = gen.poisson(spec.lambda2, size=size)
    if size is None:
        return int(u + w1), int(u + w2)
    return (u + w1).astype(np.int64), (u + w2).astype(np.int64)


def poisson_central_moment(lam: float, order: int) -> float:
    lam = float(lam)
    table = {
        1: 0.0,
        2: lam,
        3: lam,
        4: lam + 3.0 * lam**2,
        5: lam + 10.0 * lam**2,
        6: lam + 25.0 * lam**2 + 15.0 * lam**3,
    }
    if order not in table:
        raise ValueError(f"unsupported central moment order {order}")
    return table[order]


def poisson_raw_moment(lam: float, order: int) -> float:
    """Raw moment ``E[N^order]`` of a Poisson law (Touchard polynomial)."""
    lam = float(lam)
    # Stirling numbers of the second kind S(order, j)
    s = [[0] * (order + 1) for _ in range(order + 1)]
    s[0][0] = 1
    for i in range(1, order + 1):
        for j in range(1, i + 1):
            s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1]
    return float(sum(s[order][j] * lam**j for j in range(order + 1)))


def _bernoulli_central_moment(p: float, order: int) -> float:
    q = 1.0 - p
    return p * q**order + q * (-p) ** order


_SUPPORTED_ORDERS = (1, 2, 3, 4, 6)


def family_central_moment(family: OffspringFamily, order: int) -> float:
    """Closed-form central moment ``E[(Y - mean)^order]`` of an offspring law.

    Supported orders are 1, 2, 3, 4 and 6.
    """
    if order not in _SUPPORTED_ORDERS:
        raise ValueError(f"unsupported central moment order {order}; expected one of {_SUPPORTED_ORDERS}")
    if family.family == BERNOULLI:
        return _bernoulli_central_moment(family.mean, order)
    return poisson_central_moment(family.mean, order)
