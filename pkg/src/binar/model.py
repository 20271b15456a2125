"""Process parameters, derived moments and the moment conditions the theory needs."""
from __future__ import annotations

from dataclasses import dataclass, field

from .distributions import (
    ImmigrationSpec,
    InvalidParameterError,
    OffspringFamily,
    family_central_moment,
    poisson_central_moment,
)

__all__ = [
    "ModelParams",
    "DerivedMoments",
    "HypothesisCheck",
    "HypothesisReport",
    "HypothesisViolation",
    "derive_moments",
    "validate_hypotheses",
    "preset",
    "PRESETS",
]


class HypothesisViolation(ValueError):
    """Raised by ``derive_moments(..., strict=True)`` when a hypothesis fails."""

    def __init__(self, report: "HypothesisReport"):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"moment hypotheses violated: {failed}")


@dataclass(frozen=True)
class ModelParams:
    offspring_a: OffspringFamily
    offspring_b: OffspringFamily
    immigration: ImmigrationSpec
    x1: int = 1

    def __post_init__(self):
        x1 = int(self.x1)
        if x1 != self.x1 or x1 < 0:
            raise InvalidParameterError(f"ancestor value x1 must be a nonnegative integer, got {self.x1!r}")
        object.__setattr__(self, "x1", x1)
        # OffspringFamily already enforces 0 < mean < 1 on each side.
        if not 0.0 < max(self.a, self.b) < 1.0:
            raise InvalidParameterError("stability requires 0 < max(a, b) < 1")

    @property
    def a(self) -> float:
        return self.offspring_a.mean

    @property
    def b(self) -> float:
        return self.offspring_b.mean

    @property
    def c(self) -> float:
        return self.immigration.c

    @property
    def d(self) -> float:
        return self.immigration.d

    @property
    def theta(self) -> tuple[float, float, float, float]:
        """Parameter vector in the order ``(a, c, b, d)``."""
        return (self.a, self.c, self.b, self.d)


@dataclass(frozen=True)
class DerivedMoments:
    """Every moment quantity consumed by the estimators and limit formulas.

    Immigration moments are those of the common-shock construction:
    ``nu2 = E[(eps_even - c)^2 (eps_odd - d)^2]`` and ``mu4_c`` the fourth
    central moment of ``eps_even``.  The ``tau6_*`` fields are sixth central
    moments.
    """

    a: float
    b: float
    c: float
    d: float
    sigma2_a: float
    sigma2_b: float
    sigma2_c: float
    sigma2_d: float
    rho: float
    nu2: float
    mu4_a: float
    mu4_b: float
    mu4_c: float
    mu4_d: float
    tau6_a: float
    tau6_b: float
    tau6_c: float
    tau6_d: float
    a_bar: float = field(init=False)
    a2_bar: float = field(init=False)
    c_bar: float = field(init=False)
    c2_bar: float = field(init=False)
    upsilon: float = field(init=False)

    def __post_init__(self):
        a_bar = (self.a + self.b) / 2.0
        a2_bar = (self.a**2 + self.b**2) / 2.0
        object.__setattr__(self, "a_bar", a_bar)
        object.__setattr__(self, "a2_bar", a2_bar)
        object.__setattr__(self, "c_bar", (self.c + self.d) / 2.0)
        object.__setattr__(
            self, "c2_bar", (self.sigma2_c + self.sigma2_d + self.c**2 + self.d**2) / 2.0
        )
        gap = a_bar - a2_bar
        ups = (self.sigma2_a + self.sigma2_b) / (2.0 * gap) if gap > 0 else float("inf")
        object.__setattr__(self, "upsilon", ups)

    @property
    def eta(self) -> tuple[float, float]:
        return (self.sigma2_a, self.sigma2_c)

    @property
    def zeta(self) -> tuple[float, float]:
        return (self.sigma2_b, self.sigma2_d)

    @property
    def theta(self) -> tuple[float, float, float, float]:
        return (self.a, self.c, self.b, self.d)

    def to_dict(self) -> dict:
        keys = [
            "a", "b", "c", "d", "sigma2_a", "sigma2_b", "sigma2_c", "sigma2_d",
            "rho", "nu2", "mu4_a", "mu4_b", "mu4_c", "mu4_d",
            "tau6_a", "tau6_b", "tau6_c", "tau6_d",
            "a_bar", "a2_bar", "c_bar", "c2_bar", "upsilon",
        ]
        return {k: getattr(self, k) for k in keys}


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    condition: str
    by_construction: bool = False


@dataclass(frozen=True)
class HypothesisReport:
    checks: tuple[HypothesisCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_list(self) -> list[dict]:
        return [
            {"name": c.name, "passed": c.passed, "condition": c.condition,
             "by_construction": c.by_construction}
            for c in self.checks
        ]


def derive_moments(params: ModelParams, strict: bool = False) -> DerivedMoments:
    """Closed-form moments for the offspring families and common-shock immigration.

    With ``strict=True`` a :class:`HypothesisViolation` is raised when any of
    moment condition fails; by default the violation is left for
    :func:`validate_hypotheses` to report.
    """
    fa, fb, imm = params.offspring_a, params.offspring_b, params.immigration
    l0, l1, l2 = imm.lambda0, imm.lambda1, imm.lambda2
    c, d = imm.c, imm.d
    nu2 = poisson_central_moment(l0, 4) + l0 * (l1 + l2) + l1 * l2
    m = DerivedMoments(
        a=fa.mean,
        b=fb.mean,
        c=c,
        d=d,
        sigma2_a=family_central_moment(fa, 2),
        sigma2_b=family_central_moment(fb, 2),
        sigma2_c=c,
        sigma2_d=d,
        rho=l0,
        nu2=nu2,
        mu4_a=family_central_moment(fa, 4),
        mu4_b=family_central_moment(fb, 4),
        mu4_c=poisson_central_moment(c, 4),
        mu4_d=poisson_central_moment(d, 4),
        tau6_a=family_central_moment(fa, 6),
        tau6_b=family_central_moment(fb, 6),
        tau6_c=poisson_central_moment(c, 6),
        tau6_d=poisson_central_moment(d, 6),
    )
    if strict:
        report = validate_hypotheses(m)
        if not report.passed:
            raise HypothesisViolation(report)
    return m


def validate_hypotheses(m: DerivedMoments) -> HypothesisReport:
    """Check the moment conditions and the stability aggregates.

    ``conditional-means`` and ``higher-moments`` (finite sixth and eighth
    immigration moments) hold structurally for the built-in families and are
    reported as pass-by-construction.
    """
    checks = [
        HypothesisCheck("conditional-means", True, "E[eps_even|F]=c, E[eps_odd|F]=d (i.i.d. immigration)", True),
        HypothesisCheck(
            "immigration-variance",
            m.sigma2_c > 0 and m.sigma2_d > 0,
            f"sigma2_c={m.sigma2_c:.6g} > 0 and sigma2_d={m.sigma2_d:.6g} > 0",
        ),
        HypothesisCheck(
            "immigration-correlation",
            m.rho**2 < m.sigma2_c * m.sigma2_d,
            f"rho^2={m.rho**2:.6g} < sigma2_c*sigma2_d={m.sigma2_c * m.sigma2_d:.6g}",
        ),
        HypothesisCheck(
            "fourth-moments",
            m.mu4_c > m.sigma2_c**2 and m.mu4_d > m.sigma2_d**2 and m.nu2**2 <= m.mu4_c * m.mu4_d,
            f"mu4_c={m.mu4_c:.6g} > sigma4_c={m.sigma2_c**2:.6g}, "
            f"mu4_d={m.mu4_d:.6g} > sigma4_d={m.sigma2_d**2:.6g}, "
            f"nu2^2={m.nu2**2:.6g} <= mu4_c*mu4_d={m.mu4_c * m.mu4_d:.6g}",
        ),
        HypothesisCheck(
            "higher-moments",
            m.tau6_c > 0 and m.tau6_d > 0,
            "sixth and eighth immigration moments finite (Poisson); "
            f"tau6_c={m.tau6_c:.6g} > 0, tau6_d={m.tau6_d:.6g} > 0",
            True,
        ),
        HypothesisCheck(
            "stability",
            0 < m.a_bar < 1 and 0 < m.a2_bar < 1 and 0 < m.upsilon < float("inf"),
            f"0 < a_bar={m.a_bar:.6g} < 1, 0 < a2_bar={m.a2_bar:.6g} < 1, upsilon={m.upsilon:.6g} > 0",
        ),
        HypothesisCheck(
            "offspring-variance",
            m.sigma2_a > 0 and m.sigma2_b > 0,
            f"sigma2_a={m.sigma2_a:.6g} > 0 and sigma2_b={m.sigma2_b:.6g} > 0",
        ),
    ]
    return HypothesisReport(tuple(checks))


PRESETS = {
    # Bernoulli(0.5) offspring on both sides, lambda = (0.3, 0.7, 0.7): c = d = 1, rho = 0.3.
    "P1": dict(a=("bernoulli", 0.5), b=("bernoulli", 0.5), lam=(0.3, 0.7, 0.7), x1=1),
    # Asymmetric offspring and immigration means: a = 0.2, b = 0.6, c = 1, d = 3.
    "P2": dict(a=("bernoulli", 0.2), b=("bernoulli", 0.6), lam=(0.5, 0.5, 2.5), x1=1),
    # Poisson offspring on both sides.
    "P3": dict(a=("poisson", 0.4), b=("poisson", 0.4), lam=(0.2, 0.8, 0.8), x1=1),
}


def preset(name: str) -> ModelParams:
    spec = PRESETS[name]
    return ModelParams(
        offspring_a=OffspringFamily(*spec["a"]),
        offspring_b=OffspringFamily(*spec["b"]),
        immigration=ImmigrationSpec(*spec["lam"]),
        x1=spec["x1"],
    )
