"""Pure numpy implementations of the compiled kernels (same signatures and contracts)."""

from __future__ import annotations

import itertools
import math

import numpy as np

_CHUNK = 4096
_MULTISET_CHUNK = 20000


def tuple_losses_gram(G, anchor, pos, neg):
    anchor = np.asarray(anchor)
    out = np.empty(len(anchor))
    for lo in range(0, len(anchor), _CHUNK):
        a = anchor[lo : lo + _CHUNK]
        z0 = G[a, pos[lo : lo + _CHUNK]]
        z = np.concatenate([z0[:, None], G[a[:, None], neg[lo : lo + _CHUNK]]], axis=1)
        m = z.max(axis=1)
        out[lo : lo + _CHUNK] = m + np.log(np.exp(z - m[:, None]).sum(axis=1)) - z0
    return out


def tuple_losses_features(F, anchor, pos, neg):
    anchor = np.asarray(anchor)
    out = np.empty(len(anchor))
    step = max(1, _CHUNK // max(1, neg.shape[1]))
    for lo in range(0, len(anchor), step):
        fa = F[anchor[lo : lo + step]]
        z0 = np.einsum("th,th->t", fa, F[pos[lo : lo + step]])
        zn = np.einsum("th,tkh->tk", fa, F[neg[lo : lo + step]])
        z = np.concatenate([z0[:, None], zn], axis=1)
        m = z.max(axis=1)
        out[lo : lo + step] = m + np.log(np.exp(z - m[:, None]).sum(axis=1)) - z0
    return out


def _multiset_chunks(N: int, K: int):
    """Yield (counts, log multinomial coefficient) for all K-multisets of range(N)."""
    it = itertools.combinations_with_replacement(range(N), K)
    log_fact = np.array([math.lgamma(c + 1.0) for c in range(K + 1)])
    while True:
        block = list(itertools.islice(it, _MULTISET_CHUNK))
        if not block:
            return
        idx = np.asarray(block, dtype=np.int64).reshape(len(block), K)
        counts = np.zeros((len(block), N), dtype=np.int64)
        rows = np.repeat(np.arange(len(block)), K)
        np.add.at(counts, (rows, idx.ravel()), 1)
        logc = log_fact[K] - log_fact[counts].sum(axis=1)
        yield counts.astype(float), logc


def exact_expectations(S, wneg, K, pos_ptr, pos_logit, pos_w):
    S = np.asarray(S, dtype=float)
    A, _ = S.shape
    keep = np.flatnonzero(np.asarray(wneg) > 0.0)
    Sk = S[:, keep]
    logw = np.log(np.asarray(wneg)[keep])
    mx = np.empty(A)
    for a in range(A):
        pl = pos_logit[pos_ptr[a] : pos_ptr[a + 1]]
        mx[a] = max(Sk[a].max(), pl.max())
    E = np.exp(Sk - mx[:, None])
    out = np.zeros(A)
    for counts, logc in _multiset_chunks(len(keep), int(K)):
        prob = np.exp(logc + counts @ logw)
        sums = counts @ E.T  # (M, A)
        for a in range(A):
            lo, hi = pos_ptr[a], pos_ptr[a + 1]
            u = pos_logit[lo:hi]
            vals = np.log(np.exp(u - mx[a])[None, :] + sums[:, a : a + 1]) + (mx[a] - u)[None, :]
            out[a] += prob @ (vals @ pos_w[lo:hi])
    return out


def floyd_sample(u, n):
    u = np.asarray(u, dtype=float)
    R, K = u.shape
    if K > n:
        raise ValueError("cannot draw more distinct items than available")
    out = np.empty((R, K), dtype=np.int64)
    mark = np.zeros((R, max(n, 1)), dtype=bool)
    rows = np.arange(R)
    for step in range(K):
        j = n - K + step
        t = np.minimum(np.floor(u[:, step] * (j + 1)).astype(np.int64), j)
        t = np.where(mark[rows, t], j, t)
        mark[rows, t] = True
        out[:, step] = t
    return out


def negative_logits(Za, Z, neg):
    return np.einsum("bh,bkh->bk", Za, Z[neg])


def scatter_negative_grad(dZ, neg, g, Za):
    B, K = neg.shape
    contrib = (g[:, :, None] * Za[:, None, :]).reshape(B * K, -1)
    flat = neg.ravel()
    order = np.argsort(flat, kind="stable")
    uniq, starts = np.unique(flat[order], return_index=True)
    dZ[uniq] += np.add.reduceat(contrib[order], starts, axis=0)


def gather_negative_grad(Z, neg, g):
    return np.einsum("bk,bkh->bh", g, Z[neg])


def tuple_losses_expgram(E, anchor, pos, neg):
    ep = E[anchor, pos].astype(np.float64)
    s = ep + E[anchor[:, None], neg].astype(np.float64).sum(axis=1)
    return np.log(s) - np.log(ep)
