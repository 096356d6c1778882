"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single PASS/FAIL line (also repeated in the pytest
terminal summary). Run alone with ``pytest tests/test_acceptance.py -v -s``
or as a script with ``python tests/test_acceptance.py``.

Criterion 7 reads trajectories from ``$CURL_LAB_SYNTH_CACHE`` (default
``.cache/synth`` in the repository) and trains whatever is missing, which
takes hours on one core. ``CURL_LAB_SYNTH_PROFILE=smoke`` selects the
reduced 2-seed, 100-epoch profile.
"""

import csv
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from curl_lab.bounds import (
    BoundParams,
    delta_lower,
    delta_upper,
    feasible_region_contains,
)
from curl_lab.cli import run as cli_run
from curl_lab.core_math import ClassPrior, coupon_collector_prob, expected_log_col_plus_one
from curl_lab.dataset import LabeledDataset
from curl_lab.losses import (
    FeatureMap,
    build_mean_classifier,
    contrastive_loss_exact,
    contrastive_loss_mc,
    info_nce_direct,
    mean_supervised_loss,
    sample_tuples,
    tuple_losses,
)
from curl_lab.synth.experiment import (
    K_GRID,
    TrainConfig,
    best_l_sup,
    mlp_gradient_check,
    run_sweep,
    trajectory_slope,
)
from curl_lab.verify import check_lemma_lse, check_lemma_offset, check_sandwich

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

C_GRID = (2, 10, 100)
K_GRID_BOUNDS = (1, 4, 16, 64, 256, 512, 4096)
L_GRID = (0.0, 0.5, 1.0, 2.0)
REPO = Path(__file__).resolve().parents[1]


def report(n: int, title: str, ok: bool, detail: str, started: float, budget_s: float | None = None) -> None:
    elapsed = time.perf_counter() - started
    timing = f"{elapsed:.2f}s" + (f" (target < {budget_s:g}s)" if budget_s is not None else "")
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d} {title}: {detail}; {timing}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_1_gap_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for C in C_GRID:
        for K in K_GRID_BOUNDS:
            for L in L_GRID:
                p = BoundParams.uniform(C, K, L)
                target = 4.0 * math.log(math.cosh(L**2)) + 2.0 * math.log(1.0 + 1.0 / K)
                worst = max(worst, abs(delta_upper(p) - delta_lower(p) - target))
    report(1, "gap identity", worst < 1e-10, f"max |error| = {worst:.3g} (tol 1e-10)", t0, 1)


def test_2_lemma_suites():
    t0 = time.perf_counter()
    lse = check_lemma_lse(N_max=64, trials=100_000, seed=0)
    off = check_lemma_offset(K_max=64, trials=100_000, seed=0)
    ok = lse.passed and off.passed
    detail = (f"lse {lse.failures} failures / {lse.trials} checks (worst margin {lse.worst_margin:.3g}); "
              f"offset {off.failures} failures / {off.trials} checks (worst margin {off.worst_margin:.3g})")
    report(2, "lemma suites", ok, detail, t0, 120)


def test_3_sandwich_oracle():
    t0 = time.perf_counter()
    rep = check_sandwich(instance_count=1000, C_max=8, K_max=6, seed=0, points_max=5)
    ci, nci = rep.details["ci"], rep.details["non_ci"]
    ok = ci["failures"] == 0 and nci["failures"] == 0
    detail = (f"CI {ci['failures']} failures / {ci['trials']} constraints (worst {ci['worst_margin']:.3g}); "
              f"non-CI relaxed {nci['failures']} failures / {nci['trials']} (worst {nci['worst_margin']:.3g})")
    report(3, "sandwich oracle", ok, detail, t0, 300)


def test_4_zero_map():
    t0 = time.perf_counter()
    worst_err, outside = 0.0, []
    for C in C_GRID:
        labels = np.repeat(np.arange(C), 2)
        data = LabeledDataset(np.zeros((2 * C, 1)), labels, C)
        prior = ClassPrior.uniform(C)
        f = FeatureMap.zeros(2 * C, 3)
        l_sup = mean_supervised_loss(data, prior, f, build_mean_classifier(data, f))
        for K in K_GRID_BOUNDS:
            if C <= 10 and K <= 4:
                l_cont = contrastive_loss_exact(data, prior, f, K).value
            else:
                l_cont = contrastive_loss_mc(data, prior, f, K, 64, seed=0).value
            worst_err = max(worst_err, abs(l_sup - math.log(C)), abs(l_cont - math.log(K + 1)))
            for L in L_GRID:
                if not feasible_region_contains(BoundParams.uniform(C, K, L), l_cont, l_sup, tol=1e-12).contains:
                    outside.append((C, K, L))
    ok = worst_err <= 1e-12 and not outside
    report(4, "zero map", ok, f"max |error| = {worst_err:.3g} (tol 1e-12); outside region: {outside}", t0, 1)


def _enumerate_coverage(C: int, K: int) -> float:
    from fractions import Fraction
    from itertools import product

    hits = sum(1 for s in product(range(C), repeat=K) if len(set(s)) == C)
    return float(Fraction(hits, C**K))


def test_5_combinatorics():
    t0 = time.perf_counter()
    worst_enum = max(abs(coupon_collector_prob(C, K) - _enumerate_coverage(C, K))
                     for C in range(2, 5) for K in range(0, 11))
    rng = np.random.default_rng(20240517)
    z_cov = []
    for C, K in ((10, 17), (10, 64)):
        hits, n = 0, 10**6
        for _ in range(10):
            draws = rng.integers(0, C, size=(n // 10, K))
            seen = np.zeros((n // 10, C), dtype=bool)
            np.put_along_axis(seen, draws, True, axis=1)
            hits += int(seen.all(axis=1).sum())
        v = coupon_collector_prob(C, K)
        z_cov.append(abs(hits / n - v) / math.sqrt(v * (1 - v) / n))
    z_col = []
    for C, K in ((10, 17), (10, 64), (2, 5)):
        x = np.log1p(rng.binomial(K, 1.0 / C, size=10**6))
        z_col.append(abs(x.mean() - expected_log_col_plus_one(C, K)) / (x.std(ddof=1) / 1000.0))
    ok = worst_enum <= 1e-12 and max(z_cov) <= 3 and max(z_col) <= 3
    detail = (f"enumeration max |error| {worst_enum:.3g}; coverage MC |z| = "
              f"{', '.join(f'{z:.2f}' for z in z_cov)}; E ln(Col+1) MC |z| = {', '.join(f'{z:.2f}' for z in z_col)}")
    report(5, "combinatorics oracles", ok, detail, t0, 60)


def test_6_figure_shape(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "compare.csv"
    ks = ",".join(str(k) for k in range(1, 513))
    assert cli_run(["compare", "--classes", "10", "--norm-bound", "1", "--negatives", ks, "--out", str(out)]) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    K = np.array([int(r["K"]) for r in rows])
    upper = np.array([float(r["ours_upper"]) for r in rows])
    ours_dec = bool(np.all(np.diff(upper) < 0))
    pow2 = np.isin(K, [2**i for i in range(10)])
    ash = np.array([float(r["ash"]) for r in rows])[pow2]
    ash_ok = bool(np.all(np.diff(ash) >= 0))
    valid = np.array([r["arora_valid"] == "true" and r["nozawa_valid"] == "true" for r in rows])
    flags_ok = bool(np.array_equal(valid, K + 1 >= 10))
    detail = (f"ours strictly decreasing on K=1..512: {ours_dec}; Ash nondecreasing on K=2^i: {ash_ok}; "
              f"Arora/Nozawa invalid exactly for K+1<10: {flags_ok}")
    report(6, "bound comparison shape", ours_dec and ash_ok and flags_ok, detail, t0, 10)


def _synth_profile():
    if os.environ.get("CURL_LAB_SYNTH_PROFILE", "full") == "smoke":
        return "smoke", TrainConfig(K=1, epochs=100), range(2)
    return "full", TrainConfig(K=1), range(8)


@pytest.mark.slow
def test_7_synthetic_experiment():
    t0 = time.perf_counter()
    name, base, seeds = _synth_profile()
    cache = Path(os.environ.get("CURL_LAB_SYNTH_CACHE", REPO / ".cache" / "synth"))
    runs = run_sweep(base, seeds, K_GRID, cache)
    worst_slack, n_points = math.inf, 0
    for (seed, K), recs in runs.items():
        p = BoundParams.uniform(base.C, K, 1.0)
        for r in recs:
            slack = min(feasible_region_contains(p, r.l_cont, r.l_sup).slacks().values()) + 3 * r.l_cont_se
            worst_slack = min(worst_slack, slack)
            n_points += 1
    best = {K: np.array([best_l_sup(runs[(s, K)]) for s in seeds]) for K in K_GRID}
    means = [best[K].mean() for K in K_GRID]
    violations = sum(b > a for a, b in zip(means, means[1:]))
    std_1, std_256 = best[1].std(ddof=1), best[256].std(ddof=1)
    slopes = {K: np.array([trajectory_slope(runs[(s, K)], last=200) for s in seeds]) for K in K_GRID}
    avg_slope = {K: float(v.mean()) for K, v in slopes.items()}
    per_seed_in = sum(int(np.sum((v >= 0.8) & (v <= 1.2))) for v in slopes.values())
    ok_a = worst_slack >= 0
    ok_b = violations <= 1
    ok_c = std_256 <= std_1
    ok_d = all(0.8 <= s <= 1.2 for s in avg_slope.values())
    detail = (
        f"[{name}] (a) {n_points} points, worst slack + 3se = {worst_slack:.4g}: {ok_a}; "
        f"(b) mean best l_sup by K = {', '.join(f'{m:.4f}' for m in means)}, {violations} rises: {ok_b}; "
        f"(c) std K=256 {std_256:.4g} vs K=1 {std_1:.4g}: {ok_c}; "
        f"(d) seed-mean slopes {', '.join(f'K={K}:{s:.3f}' for K, s in avg_slope.items())} "
        f"[per-seed in range {per_seed_in}/{len(seeds) * len(K_GRID)}]: {ok_d}"
    )
    report(7, "synthetic experiment", ok_a and ok_b and ok_c and ok_d, detail, t0)


def test_8_gradient_check():
    t0 = time.perf_counter()
    err = mlp_gradient_check()
    report(8, "gradient check", err < 1e-5, f"max relative error {err:.3g} (tol 1e-5)", t0, 5)


def test_9_info_nce_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    labels = np.repeat(np.arange(5), 6)
    data = LabeledDataset(np.zeros((30, 1)), labels, 5)
    F = rng.normal(size=(30, 4))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    worst = 0.0
    for K in (1, 4, 16, 64):
        t = sample_tuples(data, ClassPrior.uniform(5), K, 50_000, seed=K)
        l_cont = math.fsum(tuple_losses(F, t).tolist()) / len(t)
        worst = max(worst, abs(info_nce_direct(F, t) - (math.log(K + 1) - l_cont)))
    report(9, "InfoNCE identity", worst < 1e-12, f"max |error| = {worst:.3g} (tol 1e-12)", t0, 5)


def test_10_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    commands = {
        "bounds": ["bounds", "--classes", "2,10", "--negatives", "1,64", "--norm-bound", "0.5,1"],
        "compare": ["compare", "--format", "json"],
        "region": ["region", "--classes", "10", "--negatives", "4", "--norm-bound", "1",
                   "--l-cont", "1.5", "--l-sup", "1.6"],
        "verify": ["verify", "--suite", "all", "--trials", "500", "--max-size", "6", "--instances", "20"],
        "synth-data": ["synth-data", "--classes", "4", "--per-class", "20"],
        "synth-train": ["synth-train", "--K", "1,4", "--seed", "0,1", "--epochs", "2", "--classes", "4",
                        "--per-class", "30", "--batch-size", "16", "--record-initial"],
    }
    mismatched = []
    for name, argv in commands.items():
        blobs = []
        for i, threads in enumerate((1, 1, 3)):
            out = tmp_path / f"{name}_{i}.out"
            extra = ["--threads", str(threads)] if name != "synth-data" else []
            code = cli_run(argv + extra + ["--out", str(out)])
            if code != 0:
                mismatched.append(f"{name} exit {code}")
            blobs.append(out.read_bytes())
        if len(set(blobs)) != 1:
            mismatched.append(name)
    feats = [tmp_path / f"feat_{t}.csv" for t in (1, 3)]
    probes = []
    for t, fp in zip((1, 3), feats):
        cli_run(["synth-train", "--K", "2", "--epochs", "2", "--classes", "3", "--per-class", "30",
                 "--batch-size", "16", "--features-out", str(fp), "--threads", str(t),
                 "--out", str(tmp_path / f"traj_{t}.csv")])
        out = tmp_path / f"probe_{t}.csv"
        cli_run(["probe", "--features", str(fp), "--epochs", "20", "--threads", str(t), "--out", str(out)])
        probes.append(out.read_bytes())
    if feats[0].read_bytes() != feats[1].read_bytes() or probes[0] != probes[1]:
        mismatched.append("features/probe")
    detail = f"{len(commands) + 1} command families, repeated and at --threads 1/3; mismatches: {mismatched}"
    report(10, "CLI determinism", not mismatched, detail, t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
