"""Linear evaluation on frozen features (multinomial logistic regression)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_math import ClassPrior, DomainError
from .dataset import LabeledDataset
from .losses import FeatureMap, _row_lse, build_mean_classifier


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    W: np.ndarray
    b: np.ndarray
    initial_loss: float
    train_loss: float
    epochs_run: int


def _objective(F, labels, weights, W, b):
    z = F @ W.T + b
    lse = _row_lse(z)
    loss = math.fsum((weights * (lse - z[np.arange(len(labels)), labels])).tolist())
    p = np.exp(z - lse[:, None])
    p[np.arange(len(labels)), labels] -= 1.0
    g = p * weights[:, None]
    return loss, g.T @ F, g.sum(axis=0)


def linear_probe(
    data_train: LabeledDataset,
    data_eval: LabeledDataset,
    f_train: FeatureMap,
    f_eval: FeatureMap,
    *,
    epochs: int = 200,
    lr: float = 1.0,
    seed: int = 0,
    prior: ClassPrior | None = None,
    warm_start: bool = True,
) -> ProbeResult:
    """Fit W, b by full-batch gradient descent with Armijo backtracking.

    The objective is the prior-weighted training cross-entropy, so with
    ``warm_start`` (W = W^mu, b = 0) the initial loss equals the mean
    supervised loss and every accepted step can only lower it. ``seed`` only
    drives the random initialization used when ``warm_start`` is off.
    """
    if len(f_train) != len(data_train) or len(f_eval) != len(data_eval):
        raise DomainError("feature tables must match their datasets")
    if epochs < 0 or lr <= 0:
        raise DomainError("need epochs >= 0 and lr > 0")
    prior = prior or ClassPrior.uniform(data_train.n_classes)
    weights = data_train.point_weights(prior)
    F = f_train.values
    C = data_train.n_classes
    if warm_start:
        W = build_mean_classifier(data_train, f_train).means.copy()
    else:
        W = np.random.default_rng(seed).normal(scale=0.01, size=(C, F.shape[1]))
    b = np.zeros(C)
    loss, gW, gb = _objective(F, data_train.labels, weights, W, b)
    initial = loss
    step = lr
    for _ in range(epochs):
        sq = float(np.sum(gW * gW) + np.sum(gb * gb))
        if sq == 0.0:
            break
        while step > 1e-12:
            W_new, b_new = W - step * gW, b - step * gb
            new_loss, gW_new, gb_new = _objective(F, data_train.labels, weights, W_new, b_new)
            if new_loss <= loss - 0.5 * step * sq:
                break
            step *= 0.5
        else:
            break
        W, b, loss, gW, gb = W_new, b_new, new_loss, gW_new, gb_new
        step = min(step * 2.0, lr)
    pred = np.argmax(f_eval.values @ W.T + b, axis=1)
    accuracy = float(np.mean(pred == data_eval.labels))
    return ProbeResult(accuracy, W, b, initial, loss, int(epochs))
