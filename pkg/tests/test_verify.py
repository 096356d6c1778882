"""Verification suites on reduced sizes; the full sizes run in the acceptance module."""

import json
import math

import numpy as np
import pytest

from curl_lab.verify import (
    VerificationReport,
    check_class_relaxations,
    check_lemma_lse,
    check_lemma_offset,
    check_sandwich,
    random_instance,
    random_table,
    sandwich_margins,
    two_lse,
)


class TestReport:
    def test_observe_and_merge(self):
        a = VerificationReport("a")
        a.observe([0.5, -1e-10, -1e-6])
        assert a.trials == 3 and a.failures == 1 and a.worst_margin == -1e-6
        b = VerificationReport("b", details={"x": {"k": 1}})
        b.fail("broken")
        m = a.merge(b)
        assert m.failures == 2 and m.details["structural_failures"] == ["broken"]
        assert not m.passed
        json.loads(m.to_json())

    def test_empty_report_serializes(self):
        assert json.loads(VerificationReport("e").to_json())["worst_margin"] is None


class TestLemmas:
    def test_two_lse(self):
        assert two_lse(np.zeros((1, 4)))[0] == pytest.approx(2 * math.log(4))

    def test_lse_small(self):
        rep = check_lemma_lse(Ns=[1, 2, 3, 8, 13], trials=2000, seed=1)
        assert rep.passed, rep.details
        assert rep.trials > 0

    def test_offset_small(self):
        rep = check_lemma_offset(Ks=[1, 2, 5, 11], trials=2000, seed=1)
        assert rep.passed, rep.details
        assert set(rep.details["vertex_max"]) >= {"K=1,L=1.0", "K=11,L=2.0"}

    def test_seed_determinism(self):
        a = check_lemma_lse(Ns=[4], trials=500, seed=3, threads=1)
        b = check_lemma_lse(Ns=[4], trials=500, seed=3, threads=2)
        assert a.as_dict() == b.as_dict()


class TestSandwich:
    def test_random_table_norms(self, rng):
        t = random_table(rng, 200, 3, 1.5)
        assert np.linalg.norm(t, axis=1).max() <= 1.5

    @pytest.mark.parametrize("kind", ["random", "zero", "adversarial"])
    def test_instance_margins(self, rng, kind):
        inst = random_instance(rng, kind=kind)
        m = sandwich_margins(inst)
        assert min(m.upper, m.lower, m.ess_sup, m.ess_cont) >= -1e-9

    def test_small_suite(self):
        rep = check_sandwich(instance_count=40, seed=2)
        assert rep.passed
        assert rep.details["ci"]["passed"] and rep.details["non_ci"]["passed"]

    def test_relaxations(self):
        rep = check_class_relaxations(instance_count=30, seed=2)
        assert rep.passed
        assert math.isfinite(rep.details["subset_renormalized_worst_margin"])
