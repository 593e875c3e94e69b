# cython: language_level=3
"""Compiled versions of the hot loops in ``_pykernels``.

Loop orders match the numpy reference exactly; see that module for the
contract of each function.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t

cnp.import_array()

MAX_KEY_BITS = 62


def mask_keys(masks):
    cdef const uint8_t[:, ::1] mv = np.ascontiguousarray(masks, dtype=np.uint8)
    cdef Py_ssize_t n = mv.shape[0], L = mv.shape[1], r, i
    if L > MAX_KEY_BITS:
        raise ValueError(f"integer keys support L <= {MAX_KEY_BITS}, got {L}")
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef int64_t k
    with nogil:
        for r in range(n):
            k = 0
            for i in range(L):
                # branchless: random masks defeat the branch predictor
                k |= (<int64_t>(mv[r, i] != 0)) << i
            ov[r] = k
    return out


def keys_to_masks(keys, Py_ssize_t L):
    cdef const int64_t[::1] kv = np.ascontiguousarray(keys, dtype=np.int64)
    cdef Py_ssize_t n = kv.shape[0], r, i
    out = np.empty((n, L), dtype=np.uint8)
    cdef uint8_t[:, ::1] ov = out
    with nogil:
        for r in range(n):
            for i in range(L):
                ov[r, i] = (kv[r] >> i) & 1
    return out


def prefix_keys(perms):
    cdef const int64_t[:, ::1] pv = np.ascontiguousarray(perms, dtype=np.int64)
    cdef Py_ssize_t m = pv.shape[0], L = pv.shape[1], j, t
    if L > MAX_KEY_BITS:
        raise ValueError(f"integer keys support L <= {MAX_KEY_BITS}, got {L}")
    out = np.empty((m, L + 1), dtype=np.int64)
    cdef int64_t[:, ::1] ov = out
    cdef int64_t k
    with nogil:
        for j in range(m):
            k = 0
            ov[j, 0] = 0
            for t in range(L):
                k |= (<int64_t>1) << pv[j, t]
                ov[j, t + 1] = k
    return out


def prefix_masks(perms):
    cdef const int64_t[:, ::1] pv = np.ascontiguousarray(perms, dtype=np.int64)
    cdef Py_ssize_t m = pv.shape[0], L = pv.shape[1], j, t, i
    out = np.zeros((m, L + 1, L), dtype=np.uint8)
    cdef uint8_t[:, :, ::1] ov = out
    with nogil:
        for j in range(m):
            for t in range(L):
                for i in range(L):
                    ov[j, t + 1, i] = ov[j, t, i]
                ov[j, t + 1, pv[j, t]] = 1
    return out


def svs_accumulate(phi, perms, vals):
    out = np.array(phi, dtype=np.float64, copy=True)
    cdef double[::1] fv = out
    cdef const int64_t[:, ::1] pv = np.ascontiguousarray(perms, dtype=np.int64)
    cdef const double[:, ::1] vv = np.ascontiguousarray(vals, dtype=np.float64)
    cdef Py_ssize_t m = pv.shape[0], L = pv.shape[1], j, t
    with nogil:
        for j in range(m):
            for t in range(L):
                fv[pv[j, t]] += vv[j, t + 1] - vv[j, t]
    return out


cdef inline int _popcount(int64_t k) nogil:
    cdef int c = 0
    while k:
        c += k & 1
        k >>= 1
    return c


def exact_accumulate(vals, Py_ssize_t L, coef):
    cdef const double[::1] vv = np.ascontiguousarray(vals, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(coef, dtype=np.float64)
    out = np.zeros(L, dtype=np.float64)
    cdef double[::1] ov = out
    cdef int64_t n = (<int64_t>1) << L, s, bit
    cdef Py_ssize_t i
    cdef double acc, c
    with nogil:
        for i in range(L):
            bit = (<int64_t>1) << i
            acc = 0.0
            for s in range(n):
                if s & bit:
                    continue
                c = cv[_popcount(s)] * (vv[s | bit] - vv[s])
                acc = acc + c
            ov[i] = acc
    return out


def gray_code(Py_ssize_t L):
    out = np.empty((<int64_t>1) << L, dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef int64_t i, n = (<int64_t>1) << L
    with nogil:
        for i in range(n):
            ov[i] = i ^ (i >> 1)
    return out


def popcount(keys):
    cdef const int64_t[::1] kv = np.ascontiguousarray(np.ravel(keys), dtype=np.int64)
    out = np.empty(kv.shape[0], dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef Py_ssize_t r
    with nogil:
        for r in range(kv.shape[0]):
            ov[r] = _popcount(kv[r])
    return out.reshape(np.shape(keys))


def masked_sum(masks, pos_w, bias):
    cdef const uint8_t[:, ::1] mv = np.ascontiguousarray(masks, dtype=np.uint8)
    cdef const double[:, ::1] wv = np.ascontiguousarray(pos_w, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t n = mv.shape[0], L = mv.shape[1], C = wv.shape[1], r, i, c
    out = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for r in range(n):
            for c in range(C):
                ov[r, c] = bv[c]
            for i in range(L):
                for c in range(C):
                    ov[r, c] = ov[r, c] + (<double>mv[r, i]) * wv[i, c]
    return out
