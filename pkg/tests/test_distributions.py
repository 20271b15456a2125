import math

import numpy as np
import pytest
from scipy import stats

from binar.distributions import (
    ImmigrationSpec,
    InvalidParameterError,
    OffspringFamily,
    RngStream,
    as_generator,
    family_central_moment,
    poisson_central_moment,
    poisson_raw_moment,
    sample_immigration_pair,
    thin,
)
from binar.model import derive_moments, preset

from conftest import mc_mean_and_se


def poisson_central_brute(lam, order):
    # sum over the support until the remaining tail mass is below 1e-12
    hi = int(stats.poisson.isf(1e-13, lam)) + 5
    k = np.arange(hi + 1)
    return float(np.sum(stats.poisson.pmf(k, lam) * (k - lam) ** order))


def bernoulli_central_brute(p, order):
    return (1 - p) * (0 - p) ** order + p * (1 - p) ** order


@pytest.mark.parametrize("p", [0.1, 0.5, 0.73])
@pytest.mark.parametrize("order", [1, 2, 3, 4, 6])
def test_bernoulli_central_moments_match_two_point_sum(p, order):
    got = family_central_moment(OffspringFamily.bernoulli(p), order)
    assert got == pytest.approx(bernoulli_central_brute(p, order), abs=1e-15)


@pytest.mark.parametrize("lam", [0.05, 0.4, 0.9])
@pytest.mark.parametrize("order", [1, 2, 3, 4, 6])
def test_poisson_central_moments_match_truncated_sum(lam, order):
    got = family_central_moment(OffspringFamily.poisson(lam), order)
    assert got == pytest.approx(poisson_central_brute(lam, order), rel=1e-10, abs=1e-14)


def test_frozen_moment_values():
    # frozen from the brute-force sums above
    assert family_central_moment(OffspringFamily.bernoulli(0.5), 4) == pytest.approx(0.0625, abs=1e-15)
    assert family_central_moment(OffspringFamily.poisson(0.4), 4) == pytest.approx(0.88, abs=1e-15)
    assert family_central_moment(OffspringFamily.poisson(0.4), 1) == 0.0
    assert family_central_moment(OffspringFamily.bernoulli(0.3), 1) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("order", [0, 5, 8])
def test_unsupported_order_rejected(order):
    with pytest.raises(ValueError):
        family_central_moment(OffspringFamily.bernoulli(0.5), order)


def test_poisson_raw_moments_match_truncated_sum():
    lam = 1.7
    k = np.arange(80)
    pmf = stats.poisson.pmf(k, lam)
    for order in range(1, 7):
        assert poisson_raw_moment(lam, order) == pytest.approx(float(np.sum(pmf * k**order)), rel=1e-12)


def test_poisson_central_order_five_matches_sum():
    assert poisson_central_moment(0.8, 5) == pytest.approx(poisson_central_brute(0.8, 5), rel=1e-10)


@pytest.mark.parametrize("family", [OffspringFamily.bernoulli(0.5), OffspringFamily.poisson(0.4)])
@pytest.mark.parametrize("order", [2, 4, 6])
def test_central_moments_match_monte_carlo(family, order):
    gen = RngStream(11, (order,)).generator()
    if family.family == "bernoulli":
        y = gen.binomial(1, family.mean, size=10**6)
    else:
        y = gen.poisson(family.mean, size=10**6)
    mean, se = mc_mean_and_se((y - family.mean) ** order)
    # Bernoulli(0.5) has a constant |Y - 1/2|, so even orders carry no sampling error
    assert abs(mean - family_central_moment(family, order)) <= 4 * se + 1e-12


@pytest.mark.parametrize("bad", [0.0, 1.0, 1.2, -0.1, float("nan")])
def test_offspring_mean_range(bad):
    with pytest.raises(InvalidParameterError):
        OffspringFamily.poisson(bad)


def test_unknown_family_rejected():
    with pytest.raises(InvalidParameterError):
        OffspringFamily("geometric", 0.5)


def test_immigration_rates_validated():
    with pytest.raises(InvalidParameterError):
        ImmigrationSpec(-0.1, 1.0, 1.0)
    with pytest.raises(InvalidParameterError):
        ImmigrationSpec(0.1, float("inf"), 1.0)
    spec = ImmigrationSpec(0.3, 0.7, 0.5)
    assert (spec.c, spec.d, spec.rho) == pytest.approx((1.0, 0.8, 0.3))


def test_thin_zero_is_zero():
    for fam in (OffspringFamily.bernoulli(0.5), OffspringFamily.poisson(0.4)):
        assert thin(fam, 0, RngStream(1)) == 0
        assert np.all(thin(fam, np.zeros(50, dtype=int), RngStream(1)) == 0)


def test_thin_rejects_negative():
    with pytest.raises(ValueError):
        thin(OffspringFamily.bernoulli(0.5), -1, RngStream(1))


def test_thin_bernoulli_mean():
    draws = thin(OffspringFamily.bernoulli(0.5), np.full(10**5, 10), RngStream(2))
    mean, se = mc_mean_and_se(draws)
    assert abs(mean - 5.0) < 3 * se


def test_thin_poisson_variance():
    draws = thin(OffspringFamily.poisson(0.4), np.full(10**5, 7), RngStream(3)).astype(float)
    var = draws.var(ddof=1)
    # SE of a sample variance: sqrt((mu4 - sigma^4) / N) for Poisson(2.8)
    lam = 2.8
    se = math.sqrt((poisson_central_moment(lam, 4) - lam**2) / len(draws))
    assert abs(var - lam) < 3 * se


def test_thin_scalar_returns_int():
    assert isinstance(thin(OffspringFamily.poisson(0.4), 5, RngStream(4)), int)


@pytest.mark.parametrize("family", [OffspringFamily.bernoulli(0.35), OffspringFamily.poisson(0.6)])
def test_thin_is_additive_in_distribution(family):
    n = 10**5
    whole = thin(family, np.full(n, 9), RngStream(5, (0,))).astype(float)
    parts = (
        thin(family, np.full(n, 4), RngStream(5, (1,))) + thin(family, np.full(n, 5), RngStream(5, (2,)))
    ).astype(float)
    # two-sample comparison of the first two moments
    for f in (lambda x: x, lambda x: x**2):
        a, b = f(whole), f(parts)
        se = math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        assert abs(a.mean() - b.mean()) < 4 * se
    assert stats.ks_2samp(whole, parts).pvalue > 0.001


def test_degenerate_immigration_is_zero():
    spec = ImmigrationSpec(0.0, 0.0, 0.0)
    assert sample_immigration_pair(spec, RngStream(1)) == (0, 0)
    e, o = sample_immigration_pair(spec, RngStream(1), size=100)
    assert not e.any() and not o.any()


def test_immigration_covariance_is_lambda0():
    spec = ImmigrationSpec(0.3, 0.7, 0.7)
    e, o = sample_immigration_pair(spec, RngStream(6), size=10**6)
    prod = (e - e.mean()) * (o - o.mean())
    mean, se = mc_mean_and_se(prod)
    assert abs(mean - 0.3) < 3 * se


def test_immigration_mixed_fourth_moment_matches_nu2():
    m = derive_moments(preset("P1"))
    e, o = sample_immigration_pair(preset("P1").immigration, RngStream(7), size=10**6)
    mean, se = mc_mean_and_se((e - 1.0) ** 2 * (o - 1.0) ** 2)
    assert abs(mean - m.nu2) < 4 * se


def test_nu2_matches_triple_sum():
    # brute-force E[(U-l0+W1-l1)^2 (U-l0+W2-l2)^2] over the joint support
    l0, l1, l2 = 0.3, 0.7, 0.5
    k = np.arange(40)
    pu, p1, p2 = (stats.poisson.pmf(k, lam) for lam in (l0, l1, l2))
    u, w1, w2 = np.meshgrid(k, k, k, indexing="ij")
    weight = pu[:, None, None] * p1[None, :, None] * p2[None, None, :]
    brute = np.sum(weight * (u - l0 + w1 - l1) ** 2 * (u - l0 + w2 - l2) ** 2)
    params = preset("P1")
    from binar.model import ModelParams

    m = derive_moments(ModelParams(params.offspring_a, params.offspring_b, ImmigrationSpec(l0, l1, l2)))
    assert m.nu2 == pytest.approx(brute, rel=1e-10)


def test_streams_are_reproducible_and_distinct():
    a = RngStream(9, (1, 2)).generator().integers(0, 2**32, size=10)
    b = RngStream(9).child(1, 2).generator().integers(0, 2**32, size=10)
    c = RngStream(9, (1, 3)).generator().integers(0, 2**32, size=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)
    with pytest.raises(TypeError):
        as_generator("seed")
    assert isinstance(as_generator(3), np.random.Generator)
