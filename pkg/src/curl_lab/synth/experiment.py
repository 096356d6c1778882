"""Circle dataset, minibatch contrastive training and per-epoch trajectory recording."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .. import kernels
from ..core_math import ClassPrior, DomainError
from ..dataset import LabeledDataset
from ..losses import TupleSample, per_point_supervised_loss, sample_tuples, summarize, tuple_losses
from ..parallel import chunk_bounds, ordered_map
from .mlp import MLP, AdamW, PlateauScheduler

DIMS = (2, 256, 256, 256)
K_GRID = (1, 4, 16, 64, 256)
TRAJECTORY_COLUMNS = ("seed", "K", "epoch", "l_cont", "l_cont_se", "l_sup", "accuracy", "lr")
# From this K on the batch logits are formed as one dense B x 2B product.
DENSE_K = 100
EVAL_FACTOR = 20
# Bump whenever a change alters training or evaluation numerics (invalidates cached runs).
TRAINING_VERSION = 1


def gen_circle(C: int, n_per_class: int, seed: int) -> LabeledDataset:
    """Class c (label c-1) lives on the circle of radius (c+1)/2, directions from a uniform box."""
    if C < 1 or n_per_class < 1:
        raise DomainError("need C >= 1 and n_per_class >= 1")
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for label in range(C):
        raw = rng.uniform(-0.5, 0.5, size=(n_per_class, 2))
        norms = np.linalg.norm(raw, axis=1)
        while np.any(norms == 0.0):
            bad = norms == 0.0
            raw[bad] = rng.uniform(-0.5, 0.5, size=(int(bad.sum()), 2))
            norms = np.linalg.norm(raw, axis=1)
        points.append(raw / norms[:, None] * ((label + 2) / 2))
        labels.append(np.full(n_per_class, label))
    return LabeledDataset(np.concatenate(points), np.concatenate(labels), C)


def split_dataset(data: LabeledDataset, train_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split: each class contributes round(fraction * n_c) training points."""
    if not 0.0 < train_fraction < 1.0:
        raise DomainError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for bucket in data.buckets:
        perm = rng.permutation(bucket)
        cut = int(round(train_fraction * len(perm)))
        if cut == 0 or cut == len(perm):
            raise DomainError("split leaves a class empty")
        train_idx.append(np.sort(perm[:cut]))
        test_idx.append(np.sort(perm[cut:]))
    return data.subset(np.concatenate(train_idx)), data.subset(np.concatenate(test_idx))


def make_pairs(data: LabeledDataset, rng: np.random.Generator) -> np.ndarray:
    """Every point is an anchor; its positive is a different point of the same class."""
    pos = np.empty(len(data), dtype=np.int64)
    for bucket in data.buckets:
        n = len(bucket)
        if n == 1:
            pos[bucket] = bucket
            continue
        offset = rng.integers(1, n, size=n)
        pos[bucket] = bucket[(np.arange(n) + offset) % n]
    return pos


def sample_negatives(B: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """K distinct negatives per anchor from the 2B-2 points outside its own pair.

    Points 0..B-1 are anchors and B+i is the partner of anchor i. When K <= B-1
    at most one point per other pair is taken; otherwise the draw is uniform over
    all 2B-2 candidates.
    """
    if K > 2 * B - 2:
        raise DomainError(f"K={K} exceeds the 2B-2={2 * B - 2} in-batch candidates")
    rows = np.arange(B)[:, None]
    if K <= B - 1:
        pairs = kernels.floyd_sample(rng.random((B, K)), B - 1)
        pairs = pairs + (pairs >= rows)
        side = rng.integers(0, 2, size=(B, K))
        return pairs + side * B
    q = kernels.floyd_sample(rng.random((B, K)), 2 * B - 2)
    return q + (q >= rows) + (q >= rows + B - 1)


def batch_loss(Z: np.ndarray, neg: np.ndarray, *, dense: bool | None = None) -> tuple[float, np.ndarray]:
    """Mean minibatch contrastive loss over the B anchors and its gradient w.r.t. Z (2B x h)."""
    B, K = neg.shape
    za, zp = Z[:B], Z[B:]
    if dense is None:
        dense = K >= DENSE_K
    rows = np.arange(B)
    if dense:
        S = za @ Z.T
        logits = np.concatenate([S[rows, B + rows][:, None], S[rows[:, None], neg]], axis=1)
    else:
        logits = np.concatenate(
            [np.einsum("bh,bh->b", za, zp)[:, None], kernels.negative_logits(za, Z, neg)], axis=1
        )
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    loss = float(np.mean((m[:, 0] + np.log(s[:, 0])) - logits[:, 0]))
    g = e / s
    g[:, 0] -= 1.0
    g /= B
    if dense:
        G = np.zeros((B, 2 * B), dtype=Z.dtype)
        G[rows, B + rows] = g[:, 0]
        G[rows[:, None], neg] = g[:, 1:]
        dZ = G.T @ za
        dZ[:B] += G @ Z
        return loss, dZ
    dZ = np.zeros_like(Z)
    dZ[:B] = g[:, :1] * zp + kernels.gather_negative_grad(Z, neg, g[:, 1:])
    dZ[B:] += g[:, :1] * za
    kernels.scatter_negative_grad(dZ, neg, g[:, 1:], za)
    return loss, dZ


@dataclass(frozen=True)
class TrainConfig:
    K: int
    seed: int = 0
    C: int = 10
    n_per_class: int = 1000
    train_fraction: float = 0.6
    batch_size: int = 1024
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 0.01
    lr_patience: int = 10
    lr_factor: float = 0.1
    data_seed: int = 0
    eval_seed: int = 0
    eval_factor: int = EVAL_FACTOR
    dims: tuple[int, ...] = DIMS
    record_initial: bool = False

    def __post_init__(self):
        for name in ("K", "C", "n_per_class", "batch_size", "lr_patience", "eval_factor"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if self.epochs < 0 or self.lr <= 0 or self.weight_decay < 0:
            raise DomainError("need epochs >= 0, lr > 0, weight_decay >= 0")
        if self.K > 2 * self.batch_size - 2:
            raise DomainError(f"K={self.K} exceeds 2B-2={2 * self.batch_size - 2}")
        if tuple(self.dims)[0] != 2:
            raise DomainError("input dimension must be 2")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def key(self) -> str:
        """Stable hash of the configuration (cache key)."""
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    K: int
    epoch: int
    l_cont: float
    l_cont_se: float
    l_sup: float
    accuracy: float
    lr: float

    def row(self) -> list:
        return [getattr(self, c) for c in TRAJECTORY_COLUMNS]


@dataclass
class TrainResult:
    config: TrainConfig
    records: list[TrajectoryRecord]
    model: MLP = field(repr=False)
    train_losses: list[float] = field(default_factory=list)


class Evaluator:
    """Per-epoch test-split metrics with tuples drawn once from a fixed evaluation seed."""

    def __init__(self, train: LabeledDataset, test: LabeledDataset, K: int, eval_seed: int,
                 eval_factor: int = EVAL_FACTOR, threads: int | None = None):
        self.train, self.test, self.K = train, test, K
        self.prior = ClassPrior.uniform(test.n_classes)
        self.tuples: TupleSample = sample_tuples(
            test, self.prior, K, eval_factor * len(test), eval_seed, threads=threads
        )
        self.threads = threads

    def l_cont(self, f_test: np.ndarray) -> tuple[float, float]:
        if self.K < 4:
            losses = tuple_losses(f_test.astype(np.float64), self.tuples, threads=self.threads)
            return summarize(losses)
        # Unit-norm features keep logits in [-1, 1]; exponentiate the float32 Gram
        # once (shifted by 1) and sum per tuple in float64.
        E = np.exp(f_test @ f_test.T - np.float32(1.0))
        t = self.tuples

        def one(b):
            lo, hi = b
            return kernels.tuple_losses_expgram(E, t.anchor[lo:hi], t.positive[lo:hi], t.negatives[lo:hi])

        losses = np.concatenate(ordered_map(one, chunk_bounds(len(t)), self.threads))
        return summarize(losses)

    def l_sup(self, f_train: np.ndarray, f_test: np.ndarray) -> tuple[float, float]:
        """Loss and accuracy on the test split of the classifier built from train-split means."""
        Ftr = f_train.astype(np.float64)
        Fte = f_test.astype(np.float64)
        means = np.stack([Ftr[b].mean(axis=0) for b in self.train.buckets])
        losses = per_point_supervised_loss(Fte, self.test.labels, means)
        w = self.test.point_weights(self.prior)
        loss = math.fsum((w * losses).tolist())
        acc = float(np.mean(np.argmax(Fte @ means.T, axis=1) == self.test.labels))
        return loss, acc

    def record(self, model: MLP, seed: int, epoch: int, lr: float) -> TrajectoryRecord:
        f_train = model.forward(self.train.points)
        f_test = model.forward(self.test.points)
        l_cont, se = self.l_cont(f_test)
        l_sup, acc = self.l_sup(f_train, f_test)
        return TrajectoryRecord(seed, self.K, epoch, l_cont, se, l_sup, acc, lr)


def prepare_data(cfg: TrainConfig) -> tuple[LabeledDataset, LabeledDataset]:
    data = gen_circle(cfg.C, cfg.n_per_class, cfg.data_seed)
    return split_dataset(data, cfg.train_fraction, cfg.data_seed + 1)


def train_run(
    cfg: TrainConfig,
    *,
    threads: int | None = None,
    on_record: Callable[[TrajectoryRecord], None] | None = None,
) -> TrainResult:
    """Train the MLP on minibatch contrastive loss and record one row per epoch."""
    train, test = prepare_data(cfg)
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, pair_ss, batch_ss = ss.spawn(3)
    model = MLP.init(cfg.dims, np.random.default_rng(init_ss))
    pos = make_pairs(train, np.random.default_rng(pair_ss))
    rng = np.random.default_rng(batch_ss)
    X = train.points.astype(np.float32)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(factor=cfg.lr_factor, patience=cfg.lr_patience)
    evaluator = Evaluator(train, test, cfg.K, cfg.eval_seed, cfg.eval_factor, threads)
    records: list[TrajectoryRecord] = []
    train_losses: list[float] = []

    def emit(epoch: int) -> None:
        rec = evaluator.record(model, cfg.seed, epoch, opt.lr)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    if cfg.record_initial:
        emit(0)
    params = model.params()
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            anchors = order[lo : lo + cfg.batch_size]
            B = len(anchors)
            if cfg.K > 2 * B - 2:
                continue  # short final batch cannot supply K negatives
            neg = sample_negatives(B, cfg.K, rng)
            xb = np.concatenate([X[anchors], X[pos[anchors]]])
            Z, cache = model.forward(xb, keep=True)
            loss, dZ = batch_loss(Z, neg)
            grads = model.backward(cache, dZ)
            opt.step(params, grads)
            total += loss * B
            count += B
        epoch_loss = total / count
        train_losses.append(epoch_loss)
        emit(epoch)
        sched.step(epoch_loss, opt)
    return TrainResult(cfg, records, model, train_losses)


def train_contrastive(cfg: TrainConfig, *, threads: int | None = None) -> list[TrajectoryRecord]:
    return train_run(cfg, threads=threads).records


def mlp_gradient_check(seed: int = 0, *, step: float = 1e-5) -> float:
    """Max relative error of backprop vs central differences on a tiny float64 network."""
    rng = np.random.default_rng(seed)
    model = MLP.init((2, 5, 5, 4), rng, dtype=np.float64, scale=1.0)
    B, K = 3, 2
    x = rng.normal(size=(2 * B, 2))
    neg = sample_negatives(B, K, rng)

    def loss_of(m: MLP) -> float:
        return batch_loss(m.forward(x), neg)[0]

    Z, cache = model.forward(x, keep=True)
    _, dZ = batch_loss(Z, neg)
    analytic = model.backward(cache, dZ)
    worst = 0.0
    for p, g in zip(model.params(), analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = loss_of(model)
            p[idx] = old - step
            down = loss_of(model)
            p[idx] = old
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(g[idx]), 1e-8)
            worst = max(worst, abs(numeric - g[idx]) / denom)
    return worst


def _fmt(x) -> str:
    return format(x, ".17g") if isinstance(x, float) else str(x)


def write_trajectory_csv(records: Iterable[TrajectoryRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


def read_trajectory_csv(path) -> list[TrajectoryRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrajectoryRecord(int(r["seed"]), int(r["K"]), int(r["epoch"]), float(r["l_cont"]),
                         float(r["l_cont_se"]), float(r["l_sup"]), float(r["accuracy"]), float(r["lr"]))
        for r in rows
    ]


def run_cached(cfg: TrainConfig, cache_dir, *, threads: int | None = None) -> list[TrajectoryRecord]:
    """Run (or reload) one configuration; the file name carries the config hash and TRAINING_VERSION."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"traj_K{cfg.K}_s{cfg.seed}_{cfg.key()}_v{TRAINING_VERSION}.csv"
    if path.exists():
        return read_trajectory_csv(path)
    records = train_contrastive(cfg, threads=threads)
    tmp = path.with_suffix(".tmp")
    write_trajectory_csv(records, tmp)
    tmp.replace(path)
    return records


def run_sweep(base: TrainConfig, seeds: Iterable[int], Ks: Iterable[int], cache_dir,
              *, threads: int | None = None) -> dict[tuple[int, int], list[TrajectoryRecord]]:
    out = {}
    for K in Ks:
        for s in seeds:
            out[(s, K)] = run_cached(replace(base, K=K, seed=s), cache_dir, threads=threads)
    return out


def best_l_sup(records: list[TrajectoryRecord]) -> float:
    return min(r.l_sup for r in records)


def trajectory_slope(records: list[TrajectoryRecord], last: int = 200) -> float:
    """Least-squares slope of l_sup on l_cont over the final ``last`` records."""
    tail = records[-last:]
    x = np.array([r.l_cont for r in tail])
    y = np.array([r.l_sup for r in tail])
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return float("nan")
    return float(xc @ (y - y.mean())) / denom
