"""Scalar and combinatorial primitives shared by every other module.

Everything here is a pure function of its arguments. Probabilities that can
drift slightly outside [0, 1] through round-off are clamped by
:func:`clamp_probability`, which refuses to hide anything larger than
``PROB_ROUNDOFF``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_ROUNDOFF = 1e-9
PRIOR_SUM_TOL = 1e-12

# The double-sum coverage formula cancels terms as large as binom(C-1, m);
# the absolute error is bounded by about 2**C * eps, i.e. < 1e-9 for C <= 20.
COVERAGE_DOUBLE_SUM_MAX_C = 20


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


class UnsupportedConfiguration(ValueError):
    """The quantity is only defined for a narrower configuration (e.g. a uniform prior)."""


@dataclass(frozen=True)
class ClassPrior:
    """Probability vector over latent classes."""

    probs: tuple[float, ...]

    def __init__(self, probs: Sequence[float]):
        values = tuple(float(p) for p in np.asarray(probs, dtype=float).ravel())
        if len(values) < 1:
            raise DomainError("class prior needs at least one class")
        if any(not math.isfinite(p) or p < 0.0 or p > 1.0 for p in values):
            raise DomainError(f"prior entries must lie in [0, 1]: {values}")
        total = math.fsum(values)
        if abs(total - 1.0) > PRIOR_SUM_TOL:
            raise DomainError(f"prior must sum to 1 (got {total!r})")
        object.__setattr__(self, "probs", values)

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassPrior":
        if n_classes < 1:
            raise DomainError("n_classes must be >= 1")
        return cls([1.0 / n_classes] * n_classes)

    @property
    def n_classes(self) -> int:
        return len(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def max_prob(self) -> float:
        """Largest class probability (pi_(1))."""
        return max(self.probs)

    @property
    def entropy(self) -> float:
        return entropy(self)

    @property
    def is_uniform(self) -> bool:
        target = 1.0 / len(self.probs)
        return all(abs(p - target) <= PRIOR_SUM_TOL for p in self.probs)


def clamp_probability(value: float, *, name: str = "probability") -> float:
    """Clamp tiny round-off excursions outside [0, 1]; raise on anything larger."""
    if not math.isfinite(value):
        raise DomainError(f"{name} is not finite: {value!r}")
    if value < 0.0:
        if value < -PROB_ROUNDOFF:
            raise DomainError(f"{name} = {value!r} is below 0 beyond round-off")
        return 0.0
    if value > 1.0:
        if value > 1.0 + PROB_ROUNDOFF:
            raise DomainError(f"{name} = {value!r} exceeds 1 beyond round-off")
        return 1.0
    return value


def log_sum_exp(z) -> float:
    """ln(sum(exp(z))) with a max shift, so entries up to |700| never overflow."""
    arr = np.asarray(z, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    if not np.all(np.isfinite(arr)):
        raise DomainError("log_sum_exp requires finite entries")
    m = float(arr.max())
    return m + math.log(float(np.sum(np.exp(arr - m))))


def log_cosh(x: float) -> float:
    """ln cosh(x) evaluated as |x| + log1p(exp(-2|x|)) - ln 2."""
    a = abs(float(x))
    if not math.isfinite(a):
        raise DomainError("log_cosh requires a finite argument")
    return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)


def entropy(prior: ClassPrior | Sequence[float]) -> float:
    """Shannon entropy in nats with the 0 ln 0 = 0 convention."""
    probs = prior.probs if isinstance(prior, ClassPrior) else ClassPrior(prior).probs
    return -math.fsum(p * math.log(p) for p in probs if p > 0.0)


def harmonic(n: int) -> float:
    """n-th harmonic number, summed from the smallest term up."""
    n = int(n)
    if n < 1:
        raise DomainError("harmonic number needs n >= 1")
    return math.fsum(1.0 / i for i in range(n, 0, -1))


def _check_ck(C: int, K: int, k_min: int) -> tuple[int, int]:
    C, K = int(C), int(K)
    if C < 2:
        raise DomainError(f"need C >= 2, got {C}")
    if K < k_min:
        raise DomainError(f"need K >= {k_min}, got {K}")
    return C, K


def coupon_collector_prob(C: int, K: int) -> float:
    """Probability that K iid uniform draws over C classes hit every class.

    Uses the inclusion-exclusion double sum
    ``sum_{n=1..K} sum_{m=0..C-1} binom(C-1, m) (-1)^m (1 - (m+1)/C)^(n-1)``
    (inner sum = probability that coverage completes exactly at draw n) with
    0^0 = 1, summed exactly over the rounded terms by ``math.fsum``. Beyond
    ``COVERAGE_DOUBLE_SUM_MAX_C`` the cancellation outgrows double precision
    and the positive-term occupancy recurrence is used instead.
    """
    C, K = _check_ck(C, K, 0)
    if K < C:
        return 0.0
    if C > COVERAGE_DOUBLE_SUM_MAX_C:
        return clamp_probability(coverage_by_occupancy(C, K), name="v_K")
    m = np.arange(C, dtype=float)
    signed_binom = np.array(
        [math.comb(C - 1, j) * (-1) ** j for j in range(C)], dtype=float
    )
    bases = (C - 1 - m) / C
    exponents = np.arange(K, dtype=float)[:, None]
    # numpy gives 0.0 ** 0 == 1.0, the convention the formula needs
    terms = signed_binom[None, :] * np.power(bases[None, :], exponents)
    return clamp_probability(math.fsum(terms.ravel().tolist()), name="v_K")


def coverage_by_occupancy(C: int, K: int) -> float:
    """Coverage probability via the Markov chain on the number of distinct classes seen.

    Every update is a convex combination, so there is no cancellation.
    """
    C, K = _check_ck(C, K, 0)
    if K < C:
        return 0.0
    occ = np.zeros(C + 1)
    occ[0] = 1.0
    stay = np.arange(C + 1) / C
    move = 1.0 - stay
    for _ in range(K):
        nxt = occ * stay
        nxt[1:] += occ[:-1] * move[:-1]
        occ = nxt
    return float(occ[C])


def no_collision_prob(C: int, K: int) -> float:
    """(1 - 1/C)^K, i.e. 1 - tau_K, evaluated without forming 1 - tau_K."""
    C, K = _check_ck(C, K, 0)
    return math.exp(K * math.log1p(-1.0 / C))


def collision_prob(C: int, K: int) -> float:
    """tau_K = 1 - (1 - 1/C)^K: some negative shares the positive's class."""
    C, K = _check_ck(C, K, 1)
    return clamp_probability(-math.expm1(K * math.log1p(-1.0 / C)), name="tau_K")


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Binomial(n, p) pmf over 0..n from ratio recurrences anchored at the mode.

    The log-ratios ln[(n-m)/(m+1) * p/(1-p)] are accumulated outward from the
    mode and normalised with a log-sum-exp, so no factorial or gamma function
    is ever formed and the weights sum to 1 up to a few ulps even at n ~ 1e4.
    """
    n = int(n)
    p = float(p)
    if n < 0 or not 0.0 <= p <= 1.0:
        raise DomainError(f"invalid binomial parameters n={n}, p={p}")
    if p == 0.0 or p == 1.0 or n == 0:
        out = np.zeros(n + 1)
        out[0 if p == 0.0 or n == 0 else n] = 1.0
        return out
    mode = min(n, int(math.floor((n + 1) * p)))
    log_odds = math.log(p) - math.log1p(-p)
    logw = np.empty(n + 1)
    logw[mode] = 0.0
    m_up = np.arange(mode, n)
    if m_up.size:
        steps = np.log((n - m_up) / (m_up + 1.0)) + log_odds
        logw[mode + 1 :] = np.cumsum(steps)
    m_dn = np.arange(mode - 1, -1, -1)
    if m_dn.size:
        # w[m] = w[m+1] * (m+1)/(n-m) / odds
        steps = np.log((m_dn + 1.0) / (n - m_dn)) - log_odds
        logw[m_dn] = np.cumsum(steps)
    top = logw.max()
    w = np.exp(logw - top)
    return w / math.fsum(w.tolist())


def expected_log_col_plus_one(C: int, K: int) -> float:
    """E ln(Col + 1) with Col ~ Binomial(K, 1/C) collisions with the positive class."""
    C, K = _check_ck(C, K, 1)
    pmf = binomial_pmf(K, 1.0 / C)
    return math.fsum((pmf * np.log1p(np.arange(K + 1, dtype=float))).tolist())
