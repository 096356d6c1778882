"""Randomized and exhaustive checks of the two log-sum-exp lemmas, the loss
sandwich on tiny exact instances, and the bound comparison table.

Inequalities use an asymmetric tolerance: a margin below ``-TOL`` is a
failure, any non-negative margin passes, and the worst margin is always kept.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bounds import (
    BoundParams,
    ci_relaxed_deltas,
    competitor_bounds,
    delta_lower,
    delta_upper,
    essential_cont,
    essential_sup,
)
from .core_math import ClassPrior, log_cosh
from .dataset import LabeledDataset, coarse_grain, coarse_prior, restrict_classes, restrict_prior
from .losses import (
    FeatureMap,
    MeanClassifier,
    build_mean_classifier,
    contrastive_loss_exact,
    mean_supervised_loss,
)
from .parallel import chunk_rng, ordered_map

TOL = 1e-9
TIGHT_TOL = 1e-12
LEMMA_L_SET = (0.5, 1.0, 2.0)
_BLOCK = 1 << 22  # random entries generated per block
SANDWICH_BUDGET = 200_000
COMPARE_HEADER = (
    "C", "K", "L", "l_cont", "ours_upper", "ours_lower",
    "arora", "arora_valid", "nozawa", "nozawa_valid", "ash", "ess_sup",
)


@dataclass
class VerificationReport:
    name: str
    trials: int = 0
    failures: int = 0
    worst_margin: float = math.inf
    parameters: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def observe(self, margins) -> None:
        m = np.atleast_1d(np.asarray(margins, dtype=float))
        if m.size == 0:
            return
        self.trials += int(m.size)
        self.failures += int(np.count_nonzero(m < -TOL))
        self.worst_margin = min(self.worst_margin, float(m.min()))

    def fail(self, reason: str) -> None:
        """Record a structural failure (tightness or vertex property)."""
        self.failures += 1
        self.details.setdefault("structural_failures", []).append(reason)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        details = {k: (list(v) if isinstance(v, list) else v) for k, v in self.details.items()}
        out = VerificationReport(self.name, self.trials + other.trials, self.failures + other.failures,
                                 min(self.worst_margin, other.worst_margin), dict(self.parameters), details)
        for k, v in other.details.items():
            if k == "structural_failures":
                out.details.setdefault(k, []).extend(v)
            elif isinstance(v, dict) and isinstance(out.details.get(k), dict):
                out.details[k] = {**out.details[k], **v}
            else:
                out.details.setdefault(k, v)
        return out

    def as_dict(self) -> dict:
        worst = self.worst_margin if math.isfinite(self.worst_margin) else None
        return {
            "name": self.name,
            "passed": self.passed,
            "trials": self.trials,
            "failures": self.failures,
            "worst_margin": worst,
            "parameters": self.parameters,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, allow_nan=False)


def _rows_lse(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def _random_box(rng: np.random.Generator, trials: int, n: int, half: float):
    """Yield blocks of uniform draws on [-half, half]^n totalling ``trials`` rows."""
    rows = max(1, _BLOCK // max(n, 1))
    done = 0
    while done < trials:
        m = min(rows, trials - done)
        yield rng.uniform(-half, half, size=(m, n))
        done += m


def two_lse(z: np.ndarray) -> np.ndarray:
    """LSE(z) + LSE(-z) along the last axis."""
    z = np.atleast_2d(z)
    return _rows_lse(z) + _rows_lse(-z)


def _vertex_values(n: int, half: float) -> tuple[np.ndarray, np.ndarray]:
    """two_lse over all 2^n sign vertices and the count of positive entries of each."""
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    return two_lse(signs * half), (signs > 0).sum(axis=1)


def check_lemma_lse(
    N_max: int = 64,
    L_set: Sequence[float] = LEMMA_L_SET,
    trials: int = 100_000,
    seed: int = 0,
    *,
    Ns: Iterable[int] | None = None,
    vertex_max: int = 12,
    threads: int | None = None,
) -> VerificationReport:
    """2 ln N <= LSE(z) + LSE(-z) <= 2 ln(N cosh L^2) on the box [-L^2, L^2]^N."""
    Ns = list(range(1, N_max + 1)) if Ns is None else sorted(set(int(n) for n in Ns))
    cells = [(N, L) for L in L_set for N in Ns]

    def run(item):
        idx, (N, L) = item
        rep = VerificationReport("lemma_lse")
        a = L * L
        lo, hi = 2.0 * math.log(N), 2.0 * (math.log(N) + log_cosh(a))
        rng = chunk_rng(seed, idx, stream=1)
        sup = -math.inf
        for z in _random_box(rng, trials, N, a):
            v = two_lse(z)
            rep.observe(v - lo)
            rep.observe(hi - v)
            sup = max(sup, float(v.max()))
        if abs(float(two_lse(np.zeros(N))[0]) - lo) > TIGHT_TOL:
            rep.fail(f"zero vector not tight at N={N}")
        if N % 2 == 0:
            half = np.concatenate([np.full(N // 2, a), np.full(N // 2, -a)])
            if abs(float(two_lse(half)[0]) - hi) > TIGHT_TOL * max(1.0, hi):
                rep.fail(f"half/half vertex not tight at N={N}, L={L}")
        if N <= vertex_max:
            vals, _ = _vertex_values(N, a)
            vmax = float(vals.max())
            rep.observe(hi - vmax)
            if sup > vmax + TOL:
                rep.fail(f"random sup exceeds vertex max at N={N}, L={L}")
            if N % 2 == 0 and abs(vmax - hi) > TIGHT_TOL * max(1.0, hi):
                rep.fail(f"vertex max misses the bound at N={N}, L={L}")
        return rep

    parts = ordered_map(run, list(enumerate(cells)), threads)
    out = VerificationReport("lemma_lse", parameters={
        "N": Ns, "L": list(L_set), "trials_per_cell": trials, "seed": seed, "vertex_max": vertex_max,
    })
    for p in parts:
        out = out.merge(p)
    out.name = "lemma_lse"
    return out


def _cross_entropy_first(z: np.ndarray) -> np.ndarray:
    """-ln softmax_0(z) per row."""
    return _rows_lse(z) - z[:, 0]


def check_lemma_offset(
    K_max: int = 64,
    L_set: Sequence[float] = LEMMA_L_SET,
    trials: int = 100_000,
    seed: int = 0,
    *,
    Ks: Iterable[int] | None = None,
    vertex_max: int = 12,
    threads: int | None = None,
) -> VerificationReport:
    """Cross-entropy offset: -CE(-z) >= CE(z) - 2 ln((K+1) cosh L^2).

    CE(z) = -ln softmax_0(z) for z = (z_0, z_1..z_K) uniform on [-L^2, L^2]^{K+1}.
    Vertex sweeps (K <= vertex_max) also confirm that a maximizing sign
    pattern has ceil((K+1)/2) positive entries.
    """
    Ks = list(range(1, K_max + 1)) if Ks is None else sorted(set(int(k) for k in Ks))
    cells = [(K, L) for L in L_set for K in Ks]

    def run(item):
        idx, (K, L) = item
        rep = VerificationReport("lemma_offset")
        a = L * L
        offset = 2.0 * (math.log(K + 1) + log_cosh(a))
        rng = chunk_rng(seed, idx, stream=2)
        for z in _random_box(rng, trials, K + 1, a):
            lhs = -_cross_entropy_first(-z)
            rhs = _cross_entropy_first(z) - offset
            rep.observe(lhs - rhs)
        if K <= vertex_max:
            vals, npos = _vertex_values(K + 1, a)
            vmax = float(vals.max())
            rep.observe(offset - vmax)
            winners = set(npos[vals >= vmax - TIGHT_TOL * max(1.0, vmax)].tolist())
            if math.ceil((K + 1) / 2) not in winners:
                rep.fail(f"maximizing vertex is not balanced at K={K}, L={L}: {sorted(winners)}")
            if (K + 1) % 2 == 0 and abs(vmax - offset) > TIGHT_TOL * max(1.0, offset):
                rep.fail(f"vertex max misses the bound at K={K}, L={L}")
            rep.details.setdefault("vertex_max", {})[f"K={K},L={L}"] = vmax
        return rep

    parts = ordered_map(run, list(enumerate(cells)), threads)
    out = VerificationReport("lemma_offset", parameters={
        "K": Ks, "L": list(L_set), "trials_per_cell": trials, "seed": seed, "vertex_max": vertex_max,
    })
    for p in parts:
        out = out.merge(p)
    out.name = "lemma_offset"
    return out


# ---------------------------------------------------------------- sandwich


@dataclass(frozen=True)
class TinyInstance:
    data: LabeledDataset
    prior: ClassPrior
    f: FeatureMap
    K: int
    kind: str

    @property
    def params(self) -> BoundParams:
        return BoundParams(self.data.n_classes, self.K, self.f.norm_bound, self.prior)


def random_table(rng: np.random.Generator, n: int, h: int, L: float) -> np.ndarray:
    """Rows with norm <= L; about half placed exactly on the sphere of radius L."""
    v = rng.normal(size=(n, h))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = L * np.where(rng.random((n, 1)) < 0.5, 1.0, rng.random((n, 1)) ** (1.0 / h))
    out = v / norms * radius
    # guard against the last ulp pushing a norm above L
    over = np.linalg.norm(out, axis=1) > L
    out[over] *= (1.0 - 1e-15)
    return out


def _draw_sizes(rng, C_max, K_max, points_max, budget, equal_counts=False):
    for _ in range(1000):
        C = int(rng.integers(2, C_max + 1))
        K = int(rng.integers(1, K_max + 1))
        if equal_counts:
            counts = np.full(C, int(rng.integers(1, points_max + 1)))
        else:
            counts = rng.integers(1, points_max + 1, size=C)
        N = int(counts.sum())
        terms = math.comb(N + K - 1, K) * int(np.sum(counts * (K + counts)))
        if terms <= budget:
            return C, K, counts
    return 2, 1, np.ones(2, dtype=int)


def random_instance(rng: np.random.Generator, *, C_max: int = 8, K_max: int = 6, points_max: int = 5,
                    h_max: int = 4, budget: int = SANDWICH_BUDGET, prior: str = "uniform",
                    kind: str = "random", equal_counts: bool = False) -> TinyInstance:
    C, K, counts = _draw_sizes(rng, C_max, K_max, points_max, budget, equal_counts)
    labels = np.repeat(np.arange(C), counts)
    h = int(rng.integers(1, h_max + 1))
    L = float(rng.choice([0.25, 0.5, 1.0, 1.5, 2.0]))
    data = LabeledDataset(rng.normal(size=(len(labels), 2)), labels, C)
    if prior == "uniform":
        pri = ClassPrior.uniform(C)
    else:
        p = rng.dirichlet(np.full(C, 0.7))
        pri = ClassPrior(p / math.fsum(p.tolist()))
    if kind == "zero":
        table = np.zeros((len(labels), h))
    elif kind == "adversarial":
        table = np.zeros((len(labels), h))
        table[:, 0] = np.where(labels % 2 == 0, L, -L)
    else:
        table = random_table(rng, len(labels), h, L)
    return TinyInstance(data, pri, FeatureMap(table, L), K, kind)


def random_coupling(rng: np.random.Generator, data: LabeledDataset) -> list[np.ndarray]:
    """Within-class positive couplings that are not the iid one (Dirichlet rows)."""
    out = []
    for bucket in data.buckets:
        n = len(bucket)
        rows = rng.dirichlet(np.full(n, 0.3), size=n) if n > 1 else np.ones((1, 1))
        out.append(rows / rows.sum(axis=1, keepdims=True))
    return out


@dataclass(frozen=True)
class SandwichMargins:
    upper: float
    lower: float
    ess_sup: float
    ess_cont: float | None
    l_cont: float
    l_sup: float


def sandwich_margins(inst: TinyInstance, *, coupling=None, backend: str | None = None) -> SandwichMargins:
    p = inst.params
    l_cont = contrastive_loss_exact(inst.data, inst.prior, inst.f, inst.K, positive_coupling=coupling,
                                    budget=10 * SANDWICH_BUDGET, backend=backend).value
    mc = build_mean_classifier(inst.data, inst.f)
    l_sup = mean_supervised_loss(inst.data, inst.prior, inst.f, mc)
    if coupling is None:
        du, dl = delta_upper(p), delta_lower(p)
    else:
        du, dl = ci_relaxed_deltas(p)
    ess_c = l_cont - essential_cont(p) if inst.prior.is_uniform else None
    return SandwichMargins(l_cont + du - l_sup, l_sup - l_cont - dl, l_sup - essential_sup(p), ess_c,
                           l_cont, l_sup)


def _observe_margins(rep: VerificationReport, m: SandwichMargins) -> None:
    rep.observe([m.upper, m.lower, m.ess_sup] + ([m.ess_cont] if m.ess_cont is not None else []))


def check_sandwich(
    instance_count: int = 1000,
    C_max: int = 8,
    K_max: int = 6,
    seed: int = 0,
    *,
    points_max: int = 5,
    h_max: int = 4,
    budget: int = SANDWICH_BUDGET,
    threads: int | None = None,
    backend: str | None = None,
) -> VerificationReport:
    """Exact-loss sandwich on random tiny instances, in CI mode and relaxed non-CI mode.

    Instance i cycles through: uniform prior (all four constraints), Dirichlet
    prior (intercept constraints and the supervised floor), the zero map and the
    class-parity map to +-L e_1. Every instance is also re-evaluated with a
    random within-class positive coupling against the relaxed intercepts.
    """
    kinds = [("uniform", "random"), ("dirichlet", "random"), ("uniform", "random"),
             ("uniform", "adversarial"), ("uniform", "random"), ("uniform", "zero"),
             ("dirichlet", "random"), ("uniform", "random")]

    def run(i):
        rng = chunk_rng(seed, i, stream=3)
        prior, kind = kinds[i % len(kinds)]
        inst = random_instance(rng, C_max=C_max, K_max=K_max, points_max=points_max, h_max=h_max,
                               budget=budget, prior=prior, kind=kind)
        ci = VerificationReport("sandwich_ci")
        _observe_margins(ci, sandwich_margins(inst, backend=backend))
        nci = VerificationReport("sandwich_non_ci")
        m = sandwich_margins(inst, coupling=random_coupling(rng, inst.data), backend=backend)
        nci.observe([m.upper, m.lower])
        return ci, nci

    parts = ordered_map(run, range(instance_count), threads)
    params = {"instances": instance_count, "C_max": C_max, "K_max": K_max, "points_max": points_max,
              "h_max": h_max, "budget": budget, "seed": seed}
    ci = VerificationReport("sandwich_ci", parameters=params)
    nci = VerificationReport("sandwich_non_ci", parameters=params)
    for a, b in parts:
        ci, nci = ci.merge(a), nci.merge(b)
    out = ci.merge(nci)
    out.name = "sandwich"
    out.details["ci"] = ci.as_dict()
    out.details["non_ci"] = nci.as_dict()
    return out


def check_class_relaxations(
    instance_count: int = 200, seed: int = 0, *, threads: int | None = None, backend: str | None = None
) -> VerificationReport:
    """Upper bound with latent-class constants when evaluating on fewer classes.

    Subset case: the mean-classifier loss restricted to a class subset Y (both
    the prior-mass restriction and the renormalized prior) against
    l_cont + delta_U. Coarse case: classes merged by a random surjection, with
    equal class sizes and a uniform prior so point weights are unchanged.
    """

    def run(i):
        rng = chunk_rng(seed, i, stream=4)
        inst = random_instance(rng, C_max=6, K_max=4, points_max=4, equal_counts=True)
        C = inst.data.n_classes
        p = inst.params
        l_cont = contrastive_loss_exact(inst.data, inst.prior, inst.f, inst.K, backend=backend).value
        ceiling = l_cont + delta_upper(p)
        mc = build_mean_classifier(inst.data, inst.f)
        rep_sub = VerificationReport("subset")
        size = int(rng.integers(1, C))
        classes = np.sort(rng.choice(C, size=size, replace=False))
        sub, rows = restrict_classes(inst.data, classes)
        f_sub = inst.f.subset(rows)
        sub_mc = MeanClassifier(mc.means[classes])
        renorm = mean_supervised_loss(sub, restrict_prior(inst.prior, classes), f_sub, sub_mc)
        mass = math.fsum(inst.prior.as_array()[classes].tolist())
        rep_sub.observe(ceiling - mass * renorm)
        rep_sub.details["renormalized_margin"] = ceiling - renorm
        rep_coarse = VerificationReport("coarse")
        C2 = int(rng.integers(1, C + 1))
        mapping = np.concatenate([np.arange(C2), rng.integers(0, C2, size=C - C2)])
        rng.shuffle(mapping)
        coarse = coarse_grain(inst.data, mapping)
        cprior = coarse_prior(inst.prior, mapping)
        cmc = build_mean_classifier(coarse, inst.f)
        rep_coarse.observe(ceiling - mean_supervised_loss(coarse, cprior, inst.f, cmc))
        return rep_sub, rep_coarse

    parts = ordered_map(run, range(instance_count), threads)
    sub = VerificationReport("subset")
    coarse = VerificationReport("coarse")
    renorm_worst = math.inf
    for a, b in parts:
        renorm_worst = min(renorm_worst, a.details["renormalized_margin"])
        a.details.clear()
        sub, coarse = sub.merge(a), coarse.merge(b)
    out = sub.merge(coarse)
    out.name = "class_relaxations"
    out.parameters = {"instances": instance_count, "seed": seed}
    out.details = {"subset": sub.as_dict(), "coarse": coarse.as_dict(),
                   "subset_renormalized_worst_margin": renorm_worst}
    return out


# ---------------------------------------------------------------- comparison table


def compare_bounds_table(
    C: int,
    K_list: Iterable[int],
    L: float,
    mode: str = "at_ess_cont",
    l_cont: float | None = None,
    *,
    ash_relaxed: bool = False,
) -> list[dict]:
    """One row per K: our interval and the competitor upper bounds at a common l_cont.

    ``mode="at_ess_cont"`` evaluates each K at its own essential contrastive
    floor; ``mode="at_given_l_cont"`` uses the supplied ``l_cont`` for every K.
    Invalid competitor values are None with the matching ``*_valid`` flag False.
    """
    if mode not in ("at_ess_cont", "at_given_l_cont"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "at_given_l_cont" and l_cont is None:
        raise ValueError("mode at_given_l_cont needs l_cont")
    rows = []
    for K in K_list:
        p = BoundParams.uniform(C, int(K), L)
        at = essential_cont(p) if mode == "at_ess_cont" else float(l_cont)
        comp = competitor_bounds(p, at, ash_relaxed=ash_relaxed)
        rows.append({
            "C": C,
            "K": int(K),
            "L": float(L),
            "l_cont": at,
            "ours_upper": at + delta_upper(p),
            "ours_lower": at + delta_lower(p),
            "arora": comp.arora.value,
            "arora_valid": comp.arora.valid,
            "nozawa": comp.nozawa.value,
            "nozawa_valid": comp.nozawa.valid,
            "ash": comp.ash.value,
            "ess_sup": essential_sup(p),
        })
    return rows
