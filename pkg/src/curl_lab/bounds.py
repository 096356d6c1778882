"""Closed-form surrogate-gap quantities and the competing upper bounds.

All functions are pure. Competitor bounds that divide by a vanishing coverage
probability come back as :class:`MaybeBound` with ``valid=False`` and a reason
code instead of an infinity, so serialised reports can tell "undefined" from
"huge".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core_math import (
    ClassPrior,
    DomainError,
    UnsupportedConfiguration,
    binomial_pmf,
    collision_prob,
    coupon_collector_prob,
    entropy,
    expected_log_col_plus_one,
    harmonic,
    log_cosh,
    no_collision_prob,
)

REPORT_FIELDS = (
    "C",
    "K",
    "L",
    "prior_kind",
    "delta_upper",
    "delta_lower",
    "gap",
    "ess_sup",
    "ess_cont",
    "v_next",
    "tau",
    "e_log_col",
    "arora",
    "arora_valid",
    "nozawa",
    "nozawa_valid",
    "ash",
    "info_nce",
)


@dataclass(frozen=True)
class BoundParams:
    C: int
    K: int
    L: float
    prior: ClassPrior

    def __post_init__(self):
        if int(self.C) != self.C or self.C < 2:
            raise DomainError(f"need integer C >= 2, got {self.C}")
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"need integer K >= 1, got {self.K}")
        if not (math.isfinite(self.L) and self.L >= 0.0):
            raise DomainError(f"need finite L >= 0, got {self.L}")
        if len(self.prior) != self.C:
            raise DomainError(f"prior has {len(self.prior)} entries but C = {self.C}")

    @classmethod
    def uniform(cls, C: int, K: int, L: float) -> "BoundParams":
        return cls(int(C), int(K), float(L), ClassPrior.uniform(int(C)))

    @property
    def prior_kind(self) -> str:
        return "uniform" if self.prior.is_uniform else "custom"


@dataclass(frozen=True)
class MaybeBound:
    """A bound value that may be undefined for the given (C, K)."""

    value: float | None
    reason: str | None = None

    @property
    def valid(self) -> bool:
        return self.value is not None

    @classmethod
    def invalid(cls, reason: str) -> "MaybeBound":
        return cls(None, reason)


def _require_uniform(p: BoundParams, what: str) -> None:
    if not p.prior.is_uniform:
        raise UnsupportedConfiguration(f"{what} is only defined for a uniform class prior")


def delta_upper(p: BoundParams) -> float:
    """Upper intercept: ln pi_(1) - ln K + 2 ln C + 2 ln cosh(L^2)."""
    return (
        math.log(p.prior.max_prob)
        - math.log(p.K)
        + 2.0 * math.log(p.C)
        + 2.0 * log_cosh(p.L**2)
    )


def delta_lower(p: BoundParams) -> float:
    """Lower intercept: H(pi) + ln K - 2 ln(K+1) - 2 ln cosh(L^2)."""
    return (
        entropy(p.prior)
        + math.log(p.K)
        - 2.0 * math.log(p.K + 1)
        - 2.0 * log_cosh(p.L**2)
    )


def gap_closed_form(K: int, L: float) -> float:
    """Uniform-prior value of delta_upper - delta_lower."""
    return 4.0 * log_cosh(L**2) + 2.0 * math.log1p(1.0 / K)


def essential_sup(p: BoundParams) -> float:
    """Smallest mean-supervised loss reachable with ||f|| <= L."""
    return math.log1p((p.C - 1) * math.exp(-2.0 * p.L**2))


def essential_cont(p: BoundParams) -> float:
    """Smallest contrastive loss reachable with ||f|| <= L (uniform prior only)."""
    _require_uniform(p, "the essential contrastive bound")
    r = binomial_pmf(p.K, 1.0 / p.C)
    m = np.arange(p.K + 1, dtype=float)
    vals = np.log1p(m + (p.K - m) * math.exp(-2.0 * p.L**2))
    return math.fsum((r * vals).tolist())


def essential_bounds(p: BoundParams) -> tuple[float, float]:
    return essential_sup(p), essential_cont(p)


@dataclass(frozen=True)
class RegionCheck:
    """Membership of (l_cont, l_sup) in the feasible region.

    Slacks are signed so that non-negative means satisfied:
    upper = l_cont + delta_U - l_sup, lower = l_sup - l_cont - delta_L,
    ess_sup = l_sup - L*_sup, ess_cont = l_cont - L*_cont.
    """

    contains: bool
    upper: float
    lower: float
    ess_sup: float
    ess_cont: float

    def slacks(self) -> dict[str, float]:
        return {
            "upper": self.upper,
            "lower": self.lower,
            "ess_sup": self.ess_sup,
            "ess_cont": self.ess_cont,
        }


def feasible_region_contains(
    p: BoundParams, l_cont: float, l_sup: float, *, tol: float = 0.0
) -> RegionCheck:
    """Check the four feasible-region constraints; ``tol`` widens each by that amount."""
    if not (math.isfinite(l_cont) and math.isfinite(l_sup)):
        raise DomainError("loss values must be finite")
    du, dl = delta_upper(p), delta_lower(p)
    ess_s, ess_c = essential_bounds(p)
    upper = l_cont + du - l_sup
    lower = l_sup - l_cont - dl
    s_sup = l_sup - ess_s
    s_cont = l_cont - ess_c
    ok = min(upper, lower, s_sup, s_cont) >= -tol
    return RegionCheck(ok, upper, lower, s_sup, s_cont)


def ash_coefficient(C: int, K: int, *, relaxed: bool = False) -> float:
    """Coefficient of the ``ash`` bound under a uniform prior.

    ``relaxed=True`` replaces the ceiling by max(1, .), the smooth form that
    is nondecreasing in K; the default is the ceiling form.
    """
    base = 2.0 * (C - 1) * harmonic(C - 1) / K if C > 1 else 0.0
    factor = max(1.0, base) if relaxed else float(math.ceil(base))
    return 2.0 * factor / no_collision_prob(C, K)


@dataclass(frozen=True)
class CompetitorBounds:
    arora: MaybeBound
    nozawa: MaybeBound
    ash: MaybeBound


def competitor_bounds(p: BoundParams, l_cont: float, *, ash_relaxed: bool = False) -> CompetitorBounds:
    """The three earlier upper bounds (fields ``arora``, ``nozawa``, ``ash``) at ``l_cont``."""
    _require_uniform(p, "competitor bounds")
    C, K = p.C, p.K
    v_next = coupon_collector_prob(C, K + 1)
    one_minus_tau = no_collision_prob(C, K)
    elc = expected_log_col_plus_one(C, K)
    if v_next == 0.0:
        arora = MaybeBound.invalid("coverage_zero")
        nozawa = MaybeBound.invalid("coverage_zero")
    else:
        nozawa = MaybeBound((2.0 * l_cont - elc) / v_next)
        denom = one_minus_tau * v_next
        arora = MaybeBound((l_cont - elc) / denom) if denom > 0.0 else MaybeBound.invalid("collision_one")
    if one_minus_tau == 0.0:
        ash = MaybeBound.invalid("collision_one")
    else:
        ash = MaybeBound(ash_coefficient(C, K, relaxed=ash_relaxed) * (l_cont - elc))
    return CompetitorBounds(arora, nozawa, ash)


def ci_relaxed_deltas(p: BoundParams) -> tuple[float, float]:
    """Intercepts that stay valid without conditional independence (+-2 L^2 slack)."""
    slack = 2.0 * p.L**2
    return delta_upper(p) + slack, delta_lower(p) - slack


@dataclass(frozen=True)
class InfoNCE:
    value: float
    within_estimator_limit: bool


def info_nce_value(l_cont: float, K: int) -> InfoNCE:
    """I_NCE^{K+1} = ln(K+1) - l_cont, with the O(ln N) estimator-limit check.

    An MI lower-bound estimator over N = K+1 samples cannot exceed 2 ln N + 5;
    for this estimator that means l_cont >= -ln(K+1) - 5, which any
    non-negative contrastive loss satisfies.
    """
    K = int(K)
    if K < 1:
        raise DomainError("need K >= 1")
    if not math.isfinite(l_cont):
        raise DomainError("l_cont must be finite")
    value = math.log(K + 1) - l_cont
    return InfoNCE(value, value <= 2.0 * math.log(K + 1) + 5.0)


@dataclass(frozen=True)
class BoundsReport:
    params: BoundParams
    l_cont: float | None
    delta_upper: float
    delta_lower: float
    gap: float
    ess_sup: float
    ess_cont: float | None
    v_next: float | None
    tau: float
    e_log_col: float | None
    arora: MaybeBound
    nozawa: MaybeBound
    ash: MaybeBound
    info_nce: float | None

    def as_dict(self) -> dict:
        p = self.params
        return {
            "C": p.C,
            "K": p.K,
            "L": p.L,
            "prior_kind": p.prior_kind,
            "delta_upper": self.delta_upper,
            "delta_lower": self.delta_lower,
            "gap": self.gap,
            "ess_sup": self.ess_sup,
            "ess_cont": self.ess_cont,
            "v_next": self.v_next,
            "tau": self.tau,
            "e_log_col": self.e_log_col,
            "arora": self.arora.value,
            "arora_valid": self.arora.valid,
            "nozawa": self.nozawa.value,
            "nozawa_valid": self.nozawa.valid,
            "ash": self.ash.value,
            "info_nce": self.info_nce,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), allow_nan=False)


def bounds_report(p: BoundParams, l_cont: float | None = None) -> BoundsReport:
    """Every derived quantity for one parameter setting.

    Competitors and I_NCE are evaluated at ``l_cont``, defaulting to the
    essential contrastive bound. Quantities stated only for a uniform prior
    are left as None (or invalid) otherwise.
    """
    du, dl = delta_upper(p), delta_lower(p)
    ess_s = essential_sup(p)
    tau = collision_prob(p.C, p.K)
    if p.prior.is_uniform:
        ess_c = essential_cont(p)
        at = ess_c if l_cont is None else float(l_cont)
        comp = competitor_bounds(p, at)
        v_next = coupon_collector_prob(p.C, p.K + 1)
        elc = expected_log_col_plus_one(p.C, p.K)
    else:
        ess_c = v_next = elc = None
        at = l_cont
        missing = MaybeBound.invalid("non_uniform_prior")
        comp = CompetitorBounds(missing, missing, missing)
    ince = info_nce_value(at, p.K).value if at is not None else None
    return BoundsReport(
        params=p,
        l_cont=at,
        delta_upper=du,
        delta_lower=dl,
        gap=du - dl,
        ess_sup=ess_s,
        ess_cont=ess_c,
        v_next=v_next,
        tau=tau,
        e_log_col=elc,
        arora=comp.arora,
        nozawa=comp.nozawa,
        ash=comp.ash,
        info_nce=ince,
    )
