"""Combinatorics and scalar helpers against independent oracles."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curl_lab.core_math import (
    ClassPrior,
    DomainError,
    binomial_pmf,
    clamp_probability,
    collision_prob,
    coupon_collector_prob,
    coverage_by_occupancy,
    entropy,
    expected_log_col_plus_one,
    harmonic,
    log_cosh,
    log_sum_exp,
    no_collision_prob,
)

# 40-digit mpmath values, frozen
LN_COSH_1 = 0.43378083048302719


def enumerate_coverage(C, K):
    """Exact v_K as a Fraction by walking all C^K label sequences."""
    from fractions import Fraction

    hits = sum(1 for seq in itertools.product(range(C), repeat=K) if len(set(seq)) == C)
    return Fraction(hits, C**K)


class TestScalars:
    def test_log_cosh_oracle(self):
        assert log_cosh(1.0) == pytest.approx(LN_COSH_1, abs=1e-15)
        assert log_cosh(-1.0) == log_cosh(1.0)
        assert log_cosh(0.0) == 0.0

    def test_log_cosh_large_argument(self):
        assert log_cosh(800.0) == pytest.approx(800.0 - math.log(2.0), rel=1e-15)

    def test_log_sum_exp_no_overflow(self):
        assert log_sum_exp([700.0, 700.0]) == pytest.approx(700.0 + math.log(2.0), rel=1e-15)
        assert log_sum_exp([-700.0]) == -700.0

    def test_log_sum_exp_rejects_empty_and_nonfinite(self):
        with pytest.raises(DomainError):
            log_sum_exp([])
        with pytest.raises(DomainError):
            log_sum_exp([1.0, math.inf])

    def test_entropy_uniform(self):
        assert entropy(ClassPrior.uniform(7)) == pytest.approx(math.log(7), abs=1e-15)
        assert entropy([1.0, 0.0]) == 0.0

    def test_harmonic(self):
        assert harmonic(9) == pytest.approx(7129 / 2520, abs=1e-15)
        with pytest.raises(DomainError):
            harmonic(0)

    def test_clamp_probability(self):
        assert clamp_probability(-1e-12) == 0.0
        assert clamp_probability(1.0 + 1e-12) == 1.0
        with pytest.raises(DomainError):
            clamp_probability(-1e-6)
        with pytest.raises(DomainError):
            clamp_probability(math.nan)


class TestClassPrior:
    def test_rejects_bad_vectors(self):
        with pytest.raises(DomainError):
            ClassPrior([0.5, 0.6])
        with pytest.raises(DomainError):
            ClassPrior([1.5, -0.5])
        with pytest.raises(DomainError):
            ClassPrior([])

    def test_uniform_flags(self):
        assert ClassPrior.uniform(4).is_uniform
        assert not ClassPrior([0.7, 0.3]).is_uniform
        assert ClassPrior([0.7, 0.3]).max_prob == 0.7


class TestCoverage:
    @pytest.mark.parametrize("C", [2, 3, 4])
    @pytest.mark.parametrize("K", range(0, 11))
    def test_matches_exhaustive_enumeration(self, C, K):
        assert abs(coupon_collector_prob(C, K) - float(enumerate_coverage(C, K))) <= 1e-12

    def test_zero_below_C(self):
        assert coupon_collector_prob(10, 9) == 0.0
        assert coverage_by_occupancy(10, 9) == 0.0

    def test_v17_is_not_the_quoted_value(self):
        # the closed form, the occupancy chain and the MC test below all give 0.100094
        assert coupon_collector_prob(10, 17) == pytest.approx(0.10009442963, abs=1e-11)

    @pytest.mark.parametrize("C,K", [(10, 17), (10, 64)])
    def test_monte_carlo(self, C, K):
        rng = np.random.default_rng(2024 + K)
        trials = 10**6
        hits = 0
        for lo in range(0, trials, 100_000):
            draws = rng.integers(0, C, size=(100_000, K))
            seen = np.zeros((100_000, C), dtype=bool)
            np.put_along_axis(seen, draws, True, axis=1)
            hits += int(seen.all(axis=1).sum())
        p_hat = hits / trials
        v = coupon_collector_prob(C, K)
        se = math.sqrt(v * (1 - v) / trials)
        assert abs(p_hat - v) <= 3 * se

    def test_double_sum_agrees_with_occupancy_chain(self):
        worst = 0.0
        for C in range(2, 21):
            for K in range(C, 300, 7):
                worst = max(worst, abs(coupon_collector_prob(C, K) - coverage_by_occupancy(C, K)))
        assert worst < 1e-10

    def test_large_C_in_range(self):
        for C, K in [(50, 50), (64, 200), (100, 1000), (1000, 10000)]:
            v = coupon_collector_prob(C, K)
            assert 0.0 <= v <= 1.0
        assert coupon_collector_prob(64, 64) == pytest.approx(math.factorial(64) / 64**64, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 400))
    def test_nondecreasing_in_K(self, C, K):
        assert coupon_collector_prob(C, K + 1) >= coupon_collector_prob(C, K) - 1e-12


class TestCollisions:
    def test_tau_oracle(self):
        assert collision_prob(10, 16) == pytest.approx(0.8146979811148159, abs=1e-15)

    def test_tau_complement(self):
        for C, K in [(2, 1), (10, 512), (1000, 3)]:
            assert collision_prob(C, K) + no_collision_prob(C, K) == pytest.approx(1.0, abs=1e-15)

    def test_tau_small_is_accurate(self):
        # naive 1 - (1-1/C)^K loses everything here
        assert collision_prob(10**12, 1) == pytest.approx(1e-12, rel=1e-9)

    @pytest.mark.parametrize("n,p", [(1, 0.5), (17, 0.1), (512, 0.1), (10_000, 0.02), (5, 0.0), (5, 1.0)])
    def test_binomial_pmf(self, n, p):
        pmf = binomial_pmf(n, p)
        assert math.fsum(pmf.tolist()) == pytest.approx(1.0, abs=1e-13)
        if n <= 512 and 0 < p < 1:
            mp = pytest.importorskip("mpmath")
            mp.mp.dps = 40
            q = mp.mpf(p)
            exact = [float(mp.binomial(n, m) * q**m * (1 - q) ** (n - m)) for m in range(n + 1)]
            np.testing.assert_allclose(pmf, exact, rtol=1e-10, atol=0)

    def test_expected_log_col_small(self):
        # K=1: Col is Bernoulli(1/C)
        assert expected_log_col_plus_one(4, 1) == pytest.approx(math.log(2) / 4, abs=1e-16)

    @pytest.mark.parametrize("C,K", [(10, 17), (10, 256), (3, 5)])
    def test_expected_log_col_monte_carlo(self, C, K):
        rng = np.random.default_rng(7 * K + C)
        x = np.log1p(rng.binomial(K, 1.0 / C, size=10**6))
        est, se = x.mean(), x.std(ddof=1) / math.sqrt(len(x))
        assert abs(est - expected_log_col_plus_one(C, K)) <= 3 * se

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            coupon_collector_prob(1, 3)
        with pytest.raises(DomainError):
            collision_prob(10, 0)
