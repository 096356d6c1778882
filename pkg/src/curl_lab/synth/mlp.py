"""ReLU MLP with an L2-normalized output layer, written out with explicit backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12
INIT_SCALE = 0.1


@dataclass
class MLP:
    """Layers ``x @ W_i + b_i``; ReLU after every layer except the last, then x / ||x||."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, dims, rng: np.random.Generator, dtype=np.float32, scale: float = INIT_SCALE) -> "MLP":
        """Symmetric uniform fan-in init, U(-s/sqrt(fan_in), s/sqrt(fan_in)), for weights and biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = scale / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
        return cls(weights, biases)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MLP":
        return MLP([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def forward(self, x: np.ndarray, *, keep: bool = False):
        """Normalized embeddings; with ``keep`` also the activations needed by ``backward``."""
        h = np.asarray(x, dtype=self.dtype)
        acts = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W
            h += b
            if i < last:
                np.maximum(h, 0, out=h)
            acts.append(h)
        norm = np.sqrt(np.sum(h * h, axis=1, keepdims=True) + NORM_EPS**2)
        y = h / norm
        if keep:
            return y, (acts, norm, y)
        return y

    def backward(self, cache, dy: np.ndarray) -> list[np.ndarray]:
        """Gradients in ``params()`` order for upstream gradient ``dy`` on the output."""
        acts, norm, y = cache
        dh = (dy - y * np.sum(dy * y, axis=1, keepdims=True)) / norm
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                dh *= acts[i + 1] > 0
            grads.append(dh.sum(axis=0))
            grads.append(acts[i].T @ dh)
            if i > 0:
                dh = dh @ self.weights[i].T
        grads.reverse()
        return grads


@dataclass
class AdamW:
    """Adam with decoupled weight decay (the form of ``torch.optim.AdamW``)."""

    lr: float = 0.01
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class PlateauScheduler:
    """Cut the learning rate when the monitored loss stops improving (relative threshold)."""

    factor: float = 0.1
    patience: int = 10
    threshold: float = 1e-4
    min_delta_lr: float = 1e-8
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, metric: float, opt: AdamW) -> None:
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            new_lr = opt.lr * self.factor
            if opt.lr - new_lr > self.min_delta_lr:
                opt.lr = new_lr
            self.bad_epochs = 0
