"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from curl_lab import kernels
from curl_lab.core_math import ClassPrior
from curl_lab.dataset import LabeledDataset
from curl_lab.losses import FeatureMap, contrastive_loss_exact


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    F = rng.normal(size=(400, 16))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    G = F @ F.T
    E = np.exp(G - 1.0).astype(np.float32)
    n, K = 40_000, 64
    a, p, neg = rng.integers(0, 400, n), rng.integers(0, 400, n), rng.integers(0, 400, (n, K))
    Z = rng.normal(size=(2048, 256)).astype(np.float32)
    bneg = rng.integers(0, 2048, (1024, 16))
    g = rng.normal(size=(1024, 16)).astype(np.float32)
    u = rng.random((1024, 64))
    labels = np.repeat(np.arange(4), 3)
    data = LabeledDataset(np.zeros((12, 1)), labels, 4)
    f = FeatureMap(F[:12] * 0.9, 1.0)
    prior = ClassPrior.uniform(4)

    def scatter(b):
        dZ = np.zeros_like(Z)
        kernels.scatter_negative_grad(dZ, bneg, g, Z[:1024], backend=b)

    return {
        "tuple_losses_gram (40k x K=64)": lambda b: kernels.tuple_losses_gram(G, a, p, neg, backend=b),
        "tuple_losses_features (40k x K=64)": lambda b: kernels.tuple_losses_features(F, a, p, neg, backend=b),
        "tuple_losses_expgram (40k x K=64)": lambda b: kernels.tuple_losses_expgram(E, a, p, neg, backend=b),
        "exact enumeration (12 pts, K=4)": lambda b: contrastive_loss_exact(data, prior, f, 4, backend=b),
        "floyd_sample (1024 x 64 of 1023)": lambda b: kernels.floyd_sample(u, 1023, backend=b),
        "negative_logits (B=1024, K=16, h=256)": lambda b: kernels.negative_logits(Z[:1024], Z, bneg, backend=b),
        "scatter_negative_grad": scatter,
        "gather_negative_grad": lambda b: kernels.gather_negative_grad(Z, bneg, g, backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        kernels.backend_module("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tc = best_of(lambda: fn("cython"), args.repeat)
        tp = best_of(lambda: fn("python"), args.repeat)
        print(f"{name:40s} {1e3 * tc:10.2f} {1e3 * tp:10.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
