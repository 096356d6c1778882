# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Contracts mirror ``curl_lab._fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor

cnp.import_array()


def tuple_losses_gram(const double[:, ::1] G, const long[::1] anchor,
                      const long[::1] pos, const long[:, ::1] neg):
    """Per-tuple loss LSE(u+, u-_1..u-_K) - u+ with logits read from a Gram matrix."""
    cdef Py_ssize_t n = anchor.shape[0], K = neg.shape[1], t, k
    cdef double z0, z, m, s
    cdef long a
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for t in range(n):
            a = anchor[t]
            z0 = G[a, pos[t]]
            m = z0
            for k in range(K):
                z = G[a, neg[t, k]]
                if z > m:
                    m = z
            s = exp(z0 - m)
            for k in range(K):
                s += exp(G[a, neg[t, k]] - m)
            o[t] = m + log(s) - z0
    return out


def tuple_losses_features(const double[:, ::1] F, const long[::1] anchor,
                          const long[::1] pos, const long[:, ::1] neg):
    """Same as ``tuple_losses_gram`` but with inner products formed on the fly."""
    cdef Py_ssize_t n = anchor.shape[0], K = neg.shape[1], h = F.shape[1], t, k, j
    cdef double z0, m, s, acc
    cdef long a, b
    out = np.empty(n, dtype=np.float64)
    logits = np.empty(K, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] zk = logits
    with nogil:
        for t in range(n):
            a = anchor[t]
            b = pos[t]
            acc = 0.0
            for j in range(h):
                acc = acc + F[a, j] * F[b, j]
            z0 = acc
            m = z0
            for k in range(K):
                b = neg[t, k]
                acc = 0.0
                for j in range(h):
                    acc = acc + F[a, j] * F[b, j]
                zk[k] = acc
                if acc > m:
                    m = acc
            s = exp(z0 - m)
            for k in range(K):
                s += exp(zk[k] - m)
            o[t] = m + log(s) - z0
    return out


cdef struct EnumState:
    const double* e
    const double* w
    Py_ssize_t N
    Py_ssize_t K
    const double* ep
    const double* pw
    const double* shift
    Py_ssize_t npos
    double total


cdef void _enumerate(EnumState* st, Py_ssize_t depth, Py_ssize_t start,
                     double cur_sum, double cur_w, Py_ssize_t run) noexcept nogil:
    cdef Py_ssize_t j, p, r
    cdef double acc
    if depth == st.K:
        acc = 0.0
        for p in range(st.npos):
            acc += st.pw[p] * (log(st.ep[p] + cur_sum) + st.shift[p])
        st.total += cur_w * acc
        return
    for j in range(start, st.N):
        if st.w[j] == 0.0:
            continue
        r = run + 1 if (j == start and depth > 0) else 1
        _enumerate(st, depth + 1, j, cur_sum + st.e[j],
                   cur_w * st.w[j] * (depth + 1) / r, r)


def exact_expectations(const double[:, ::1] S, const double[::1] wneg, long K,
                       const long[::1] pos_ptr, const double[::1] pos_logit,
                       const double[::1] pos_w):
    """Expected contrastive loss for each anchor, enumerating negative multisets.

    ``S[a, j]`` is the logit of anchor ``a`` against point ``j``; negatives are
    K iid draws from ``wneg``. Positives of anchor ``a`` are the slice
    ``pos_ptr[a]:pos_ptr[a+1]`` of ``pos_logit``/``pos_w``.
    """
    cdef Py_ssize_t A = S.shape[0], N = S.shape[1], a, j, p, lo, hi
    cdef double mx
    cdef EnumState st
    out = np.empty(A, dtype=np.float64)
    e_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] e = e_arr
    max_pos = int(np.max(np.diff(np.asarray(pos_ptr)))) if A else 0
    ep_arr = np.empty(max(max_pos, 1), dtype=np.float64)
    sh_arr = np.empty(max(max_pos, 1), dtype=np.float64)
    cdef double[::1] ep = ep_arr
    cdef double[::1] sh = sh_arr
    for a in range(A):
        lo = pos_ptr[a]
        hi = pos_ptr[a + 1]
        mx = S[a, 0]
        for j in range(N):
            if S[a, j] > mx:
                mx = S[a, j]
        for p in range(lo, hi):
            if pos_logit[p] > mx:
                mx = pos_logit[p]
        for j in range(N):
            e[j] = exp(S[a, j] - mx)
        for p in range(lo, hi):
            ep[p - lo] = exp(pos_logit[p] - mx)
            sh[p - lo] = mx - pos_logit[p]
        st.e = &e[0]
        st.w = &wneg[0]
        st.N = N
        st.K = K
        st.ep = &ep[0]
        st.pw = &pos_w[lo] if hi > lo else &pos_w[0]
        st.shift = &sh[0]
        st.npos = hi - lo
        st.total = 0.0
        with nogil:
            _enumerate(&st, 0, 0, 0.0, 1.0, 0)
        o[a] = st.total
    return out


def floyd_sample(const double[:, ::1] u, long n):
    """Row-wise uniform K-subsets of range(n) by Floyd's algorithm, driven by ``u``."""
    cdef Py_ssize_t R = u.shape[0], K = u.shape[1], r, step
    cdef long j, t
    if K > n:
        raise ValueError("cannot draw more distinct items than available")
    out = np.empty((R, K), dtype=np.int64)
    mark_arr = np.zeros(max(n, 1), dtype=np.uint8)
    cdef long[:, ::1] o = out
    cdef unsigned char[::1] mark = mark_arr
    with nogil:
        for r in range(R):
            for step in range(K):
                j = n - K + step
                t = <long>floor(u[r, step] * (j + 1))
                if t > j:
                    t = j
                if mark[t]:
                    t = j
                mark[t] = 1
                o[r, step] = t
            for step in range(K):
                mark[o[r, step]] = 0
    return out


ctypedef fused real:
    float
    double


def negative_logits(const real[:, ::1] Za, const real[:, ::1] Z, const long[:, ::1] neg):
    """``out[b, k] = <Za[b], Z[neg[b, k]]>``."""
    cdef Py_ssize_t B = neg.shape[0], K = neg.shape[1], h = Za.shape[1], b, k, j
    cdef long n
    cdef real acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((B, K), dtype=dtype)
    cdef real[:, ::1] o = out
    with nogil:
        for b in range(B):
            for k in range(K):
                n = neg[b, k]
                acc = 0
                for j in range(h):
                    acc = acc + Za[b, j] * Z[n, j]
                o[b, k] = acc
    return out


def scatter_negative_grad(real[:, ::1] dZ, const long[:, ::1] neg,
                          const real[:, ::1] g, const real[:, ::1] Za):
    """In place: ``dZ[neg[b, k]] += g[b, k] * Za[b]``."""
    cdef Py_ssize_t B = neg.shape[0], K = neg.shape[1], h = Za.shape[1], b, k, j
    cdef long n
    cdef real c
    with nogil:
        for b in range(B):
            for k in range(K):
                n = neg[b, k]
                c = g[b, k]
                for j in range(h):
                    dZ[n, j] = dZ[n, j] + c * Za[b, j]


def gather_negative_grad(const real[:, ::1] Z, const long[:, ::1] neg, const real[:, ::1] g):
    """``out[b] = sum_k g[b, k] * Z[neg[b, k]]``."""
    cdef Py_ssize_t B = neg.shape[0], K = neg.shape[1], h = Z.shape[1], b, k, j
    cdef long n
    cdef real c
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B, h), dtype=dtype)
    cdef real[:, ::1] o = out
    with nogil:
        for b in range(B):
            for k in range(K):
                n = neg[b, k]
                c = g[b, k]
                for j in range(h):
                    o[b, j] = o[b, j] + c * Z[n, j]
    return out


def tuple_losses_expgram(const float[:, ::1] E, const long[::1] anchor,
                         const long[::1] pos, const long[:, ::1] neg):
    """Per-tuple loss from precomputed ``E = exp(G - c)``: ln(sum of entries) - ln(positive entry)."""
    cdef Py_ssize_t n = anchor.shape[0], K = neg.shape[1], t, k
    cdef double s, ep
    cdef long a
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for t in range(n):
            a = anchor[t]
            ep = E[a, pos[t]]
            s = ep
            for k in range(K):
                s += E[a, neg[t, k]]
            o[t] = log(s) - log(ep)
    return out
