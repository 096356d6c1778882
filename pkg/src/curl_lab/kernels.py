"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``CURL_LAB_KERNELS=python`` to force the fallback (used by the benchmark
and the equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "python"
_impl = _fallback
if _compiled is not None and os.environ.get("CURL_LAB_KERNELS", "").lower() != "python":
    BACKEND = "cython"
    _impl = _compiled


def _idx(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def backend_module(name: str | None = None):
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def tuple_losses_gram(G, anchor, pos, neg, *, backend: str | None = None) -> np.ndarray:
    neg = _idx(neg)
    if neg.ndim == 1:
        neg = neg.reshape(len(neg), -1)
    return backend_module(backend).tuple_losses_gram(_f64(G), _idx(anchor), _idx(pos), neg)


def tuple_losses_features(F, anchor, pos, neg, *, backend: str | None = None) -> np.ndarray:
    neg = _idx(neg)
    if neg.ndim == 1:
        neg = neg.reshape(len(neg), -1)
    return backend_module(backend).tuple_losses_features(_f64(F), _idx(anchor), _idx(pos), neg)


def exact_expectations(S, wneg, K, pos_ptr, pos_logit, pos_w, *, backend: str | None = None) -> np.ndarray:
    return backend_module(backend).exact_expectations(
        _f64(S), _f64(wneg), int(K), _idx(pos_ptr), _f64(pos_logit), _f64(pos_w)
    )


def floyd_sample(u, n: int, *, backend: str | None = None) -> np.ndarray:
    return backend_module(backend).floyd_sample(_f64(u), int(n))


def _same(a, dtype) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=dtype)


def negative_logits(Za, Z, neg, *, backend: str | None = None) -> np.ndarray:
    """Inner products of each anchor row with its K negative rows (float32 or float64)."""
    dt = np.result_type(Za, Z)
    return backend_module(backend).negative_logits(_same(Za, dt), _same(Z, dt), _idx(neg))


def scatter_negative_grad(dZ, neg, g, Za, *, backend: str | None = None) -> None:
    """Accumulate ``g[b, k] * Za[b]`` into row ``neg[b, k]`` of ``dZ`` (in place, contiguous dZ)."""
    if not dZ.flags.c_contiguous:
        raise ValueError("dZ must be C-contiguous")
    dt = dZ.dtype
    backend_module(backend).scatter_negative_grad(dZ, _idx(neg), _same(g, dt), _same(Za, dt))


def gather_negative_grad(Z, neg, g, *, backend: str | None = None) -> np.ndarray:
    """Row b: sum over k of ``g[b, k] * Z[neg[b, k]]``."""
    dt = Z.dtype
    return backend_module(backend).gather_negative_grad(_same(Z, dt), _idx(neg), _same(g, dt))


def tuple_losses_expgram(E, anchor, pos, neg, *, backend: str | None = None) -> np.ndarray:
    """Tuple losses from a float32 table of exponentiated (shifted) logits."""
    neg = _idx(neg)
    if neg.ndim == 1:
        neg = neg.reshape(len(neg), -1)
    E = np.ascontiguousarray(E, dtype=np.float32)
    return backend_module(backend).tuple_losses_expgram(E, _idx(anchor), _idx(pos), neg)
