"""Population losses over a finite labeled dataset.

The contrastive loss follows the theory-mode sampling process: positive and
negative classes iid from the prior, anchor and positive iid from the
positive class (coincidence allowed), each negative from its class. It can be
computed exactly by enumeration on tiny instances or estimated by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .core_math import ClassPrior, DomainError
from .dataset import LabeledDataset
from .parallel import CHUNK_SIZE, chunk_bounds, chunk_rng, ordered_map

NORM_TOL = 1e-9
DEFAULT_BUDGET = 10**7


class BudgetExceeded(RuntimeError):
    """Exact enumeration would exceed the term budget; use contrastive_loss_mc instead."""


@dataclass(frozen=True)
class FeatureMap:
    """Embeddings of every dataset point (row i is f(x_i)) with a norm bound L."""

    values: np.ndarray
    norm_bound: float
    backing: str = "table"

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DomainError("feature table must be 2-D (points x h)")
        if not np.all(np.isfinite(vals)):
            raise DomainError("features must be finite")
        L = float(self.norm_bound)
        if not (math.isfinite(L) and L >= 0):
            raise DomainError("norm bound must be finite and >= 0")
        worst = float(np.max(np.linalg.norm(vals, axis=1))) if len(vals) else 0.0
        if worst > L + NORM_TOL:
            raise DomainError(f"feature norm {worst!r} exceeds bound {L!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "norm_bound", L)

    @classmethod
    def zeros(cls, n: int, h: int, norm_bound: float = 1.0) -> "FeatureMap":
        return cls(np.zeros((n, h)), norm_bound)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.values)

    def __call__(self, index) -> np.ndarray:
        return self.values[index]

    def scaled(self, s: float) -> "FeatureMap":
        if not 0.0 <= s <= 1.0:
            raise DomainError("scale must lie in [0, 1] to keep the norm bound")
        return FeatureMap(self.values * s, self.norm_bound, self.backing)

    def subset(self, index) -> "FeatureMap":
        return FeatureMap(self.values[np.asarray(index)], self.norm_bound, self.backing)


@dataclass(frozen=True)
class MeanClassifier:
    means: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.means.T


@dataclass(frozen=True)
class LossEstimate:
    value: float
    std_error: float
    n_samples: int
    seed: int
    mode: str

    def __post_init__(self):
        if self.mode not in ("exact", "monte_carlo"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.std_error < 0:
            raise DomainError("std_error must be non-negative")
        if self.mode == "exact" and self.std_error != 0.0:
            raise DomainError("exact estimates carry no standard error")


def _check(data: LabeledDataset, f: FeatureMap, prior: ClassPrior | None = None) -> None:
    if len(f) != len(data):
        raise DomainError(f"feature table has {len(f)} rows for {len(data)} points")
    if prior is not None and len(prior) != data.n_classes:
        raise DomainError("prior length does not match the number of classes")


def build_mean_classifier(data: LabeledDataset, f: FeatureMap) -> MeanClassifier:
    """Class-conditional mean embeddings (exact empirical expectations)."""
    _check(data, f)
    means = np.stack([f.values[b].mean(axis=0) for b in data.buckets])
    return MeanClassifier(means)


def _row_lse(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def per_point_supervised_loss(features: np.ndarray, labels: np.ndarray, W: np.ndarray, b=None) -> np.ndarray:
    """-ln softmax_y(W f(x) + b) for each row."""
    z = features @ W.T
    if b is not None:
        z = z + b
    return _row_lse(z) - z[np.arange(len(labels)), labels]


def mean_supervised_loss(
    data: LabeledDataset, prior: ClassPrior, f: FeatureMap, mc: MeanClassifier
) -> float:
    """Prior-weighted softmax cross-entropy of the mean classifier."""
    _check(data, f, prior)
    if mc.n_classes != data.n_classes:
        raise DomainError("mean classifier and dataset disagree on the number of classes")
    if mc.means.shape[1] != f.dim:
        raise DomainError("mean classifier and features disagree on dimension")
    w = data.point_weights(prior)
    losses = per_point_supervised_loss(f.values, data.labels, mc.means)
    live = w > 0
    return math.fsum((w[live] * losses[live]).tolist())


def mean_classifier_accuracy(
    data: LabeledDataset, f: FeatureMap, mc: MeanClassifier, prior: ClassPrior | None = None
) -> float:
    """Accuracy of argmax W^mu f(x); prior-weighted when a prior is given."""
    _check(data, f, prior)
    hit = (np.argmax(mc.logits(f.values), axis=1) == data.labels).astype(float)
    if prior is None:
        return float(hit.mean())
    return math.fsum((data.point_weights(prior) * hit).tolist())


def _positive_table(data: LabeledDataset, coupling) -> list[tuple[np.ndarray, np.ndarray]]:
    """For each point: (positive indices, probabilities)."""
    out: list = [None] * len(data)
    for c, bucket in enumerate(data.buckets):
        n_c = bucket.size
        if coupling is None:
            rows = np.full((n_c, n_c), 1.0 / n_c)
        else:
            rows = np.asarray(coupling[c], dtype=float)
            if rows.shape != (n_c, n_c) or np.any(rows < 0):
                raise DomainError(f"coupling for class {c} must be a {n_c}x{n_c} stochastic matrix")
            if not np.allclose(rows.sum(axis=1), 1.0, atol=1e-12):
                raise DomainError(f"coupling rows for class {c} must sum to 1")
        for i, point in enumerate(bucket):
            out[point] = (bucket, rows[i])
    return out


def exact_term_count(data: LabeledDataset, prior: ClassPrior, K: int) -> int:
    """Leaf evaluations the enumerator performs: sum over anchors of multisets x (K + positives)."""
    w = data.point_weights(prior)
    n_eff = int(np.count_nonzero(w))
    multisets = math.comb(n_eff + K - 1, K)
    counts = data.class_counts[data.labels]
    return multisets * int(np.sum((K + counts)[w > 0]))


def contrastive_loss_exact(
    data: LabeledDataset,
    prior: ClassPrior,
    f: FeatureMap,
    K: int,
    *,
    budget: int = DEFAULT_BUDGET,
    positive_coupling: Sequence[np.ndarray] | None = None,
    backend: str | None = None,
) -> LossEstimate:
    """Exact expectation of the contrastive loss over the finite population.

    Negative draws are enumerated as multisets of points with multinomial
    weights. ``positive_coupling[c][i, j]`` optionally replaces the iid
    positive draw by P(x+ = j-th | x = i-th point of class c).
    """
    _check(data, f, prior)
    K = int(K)
    if K < 1:
        raise DomainError("need K >= 1")
    terms = exact_term_count(data, prior, K)
    if terms > budget:
        raise BudgetExceeded(
            f"exact enumeration needs {terms} terms (budget {budget}); use contrastive_loss_mc"
        )
    w = data.point_weights(prior)
    anchors = np.flatnonzero(w > 0)
    F = f.values
    G = F @ F.T
    table = _positive_table(data, positive_coupling)
    ptr = [0]
    pos_logit, pos_w = [], []
    for a in anchors:
        idx, prob = table[a]
        live = prob > 0
        pos_logit.append(G[a, idx[live]])
        pos_w.append(prob[live])
        ptr.append(ptr[-1] + int(live.sum()))
    per_anchor = kernels.exact_expectations(
        G[anchors], w, K, np.array(ptr), np.concatenate(pos_logit), np.concatenate(pos_w),
        backend=backend,
    )
    value = math.fsum((w[anchors] * per_anchor).tolist())
    return LossEstimate(value, 0.0, terms, 0, "exact")


@dataclass(frozen=True)
class TupleSample:
    """Index arrays for n sampled (anchor, positive, K negatives) tuples."""

    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.anchor)

    @property
    def K(self) -> int:
        return self.negatives.shape[1]


def _class_layout(data: LabeledDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.concatenate(data.buckets)
    counts = data.class_counts
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return order, starts, counts


def sample_tuples(
    data: LabeledDataset,
    prior: ClassPrior,
    K: int,
    n_samples: int,
    seed: int,
    *,
    threads: int | None = None,
) -> TupleSample:
    """Draw tuples by the theory-mode process, chunk by chunk from keyed substreams."""
    if len(prior) != data.n_classes:
        raise DomainError("prior length does not match the number of classes")
    K, n_samples = int(K), int(n_samples)
    order, starts, counts = _class_layout(data)
    pi = prior.as_array()

    def draw(points_cls: np.ndarray, u: np.ndarray) -> np.ndarray:
        within = np.minimum((u * counts[points_cls]).astype(np.int64), counts[points_cls] - 1)
        return order[starts[points_cls] + within]

    def one_chunk(bounds):
        lo, hi = bounds
        m = hi - lo
        rng = chunk_rng(seed, lo // CHUNK_SIZE)
        c_pos = rng.choice(data.n_classes, size=m, p=pi)
        c_neg = rng.choice(data.n_classes, size=(m, K), p=pi)
        u = rng.random((m, K + 2))
        anchor = draw(c_pos, u[:, 0])
        positive = draw(c_pos, u[:, 1])
        negatives = draw(c_neg, u[:, 2:])
        return anchor, positive, negatives

    parts = ordered_map(one_chunk, chunk_bounds(n_samples), threads)
    anchor = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    positive = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    negatives = np.concatenate([p[2] for p in parts]) if parts else np.empty((0, K), np.int64)
    return TupleSample(anchor, positive, negatives.reshape(-1, K), int(seed))


def tuple_losses(
    features: np.ndarray,
    tuples: TupleSample,
    *,
    gram: np.ndarray | None = None,
    threads: int | None = None,
    backend: str | None = None,
) -> np.ndarray:
    """Per-tuple loss LSE(logits) - positive logit, chunked in a fixed order."""
    n_points = len(features)
    if gram is None and n_points * n_points <= len(tuples) * (tuples.K + 1):
        gram = features @ features.T
    bounds = chunk_bounds(len(tuples))

    def one(b):
        lo, hi = b
        args = (tuples.anchor[lo:hi], tuples.positive[lo:hi], tuples.negatives[lo:hi])
        if gram is not None:
            return kernels.tuple_losses_gram(gram, *args, backend=backend)
        return kernels.tuple_losses_features(features, *args, backend=backend)

    parts = ordered_map(one, bounds, threads)
    return np.concatenate(parts) if parts else np.empty(0)


def summarize(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error (sample std / sqrt(n)).

    The mean is accumulated around the first value, so a constant sample
    returns that constant exactly with zero standard error.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        raise DomainError("need at least two samples")
    ref = values[0]
    dev = values - ref
    mean_dev = math.fsum(dev.tolist()) / n
    var = math.fsum(((dev - mean_dev) ** 2).tolist()) / (n - 1)
    return float(ref + mean_dev), math.sqrt(var / n)


def contrastive_loss_mc(
    data: LabeledDataset,
    prior: ClassPrior,
    f: FeatureMap,
    K: int,
    n_samples: int,
    seed: int,
    *,
    threads: int | None = None,
    backend: str | None = None,
) -> LossEstimate:
    """Unbiased Monte Carlo estimate of the contrastive loss; deterministic per seed."""
    _check(data, f, prior)
    if int(n_samples) < 2:
        raise DomainError("need n_samples >= 2")
    tuples = sample_tuples(data, prior, K, n_samples, seed, threads=threads)
    losses = tuple_losses(f.values, tuples, threads=threads, backend=backend)
    value, se = summarize(losses)
    return LossEstimate(value, se, int(n_samples), int(seed), "monte_carlo")


def info_nce_direct(features: np.ndarray, tuples: TupleSample) -> float:
    """Sample I_NCE from its estimator form: mean of ln[e^{s+} / mean_j e^{s_j}].

    s_j runs over the positive and the K negatives with critic s(x, y) = f(x)^T f(y).
    """
    fa = features[tuples.anchor]
    s_pos = np.einsum("th,th->t", fa, features[tuples.positive])
    s_neg = np.einsum("th,tkh->tk", fa, features[tuples.negatives])
    s_all = np.concatenate([s_pos[:, None], s_neg], axis=1)
    shift = s_all.max(axis=1, keepdims=True)
    log_mean = np.log(np.mean(np.exp(s_all - shift), axis=1)) + shift[:, 0]
    return math.fsum((s_pos - log_mean).tolist()) / len(tuples)
