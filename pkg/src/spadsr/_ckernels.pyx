# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, floor, fabs, lgamma, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint32_t, uint8_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _STREAM = 0xD1B54A32D192ED03ULL
cdef double _INV53 = 1.0 / 9007199254740992.0
cdef double INVERSION_LIMIT = 10.0
cdef int64_t MAX_INVERSION_K = 1000


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t base, int64_t ctr) nogil:
    cdef uint64_t h = _mix(base + (<uint64_t>ctr + 1) * _STREAM)
    return (<double>(h >> 11) + 0.5) * _INV53


def uniform_stream(seed, keys, ctr):
    cdef const uint64_t[::1] k = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    cdef const int64_t[::1] c = np.ascontiguousarray(
        np.broadcast_to(np.asarray(ctr, dtype=np.int64), np.shape(keys)), dtype=np.int64).ravel()
    cdef Py_ssize_t i, n = k.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef uint64_t s = _mix(<uint64_t>seed)
    for i in range(n):
        o[i] = _uniform(_mix(s + k[i] * _GOLDEN), c[i])
    return out.reshape(np.shape(keys))


cdef inline int64_t _poisson_inversion(double lam, uint64_t base) nogil:
    cdef double u = _uniform(base, 0)
    cdef int64_t k = 0
    cdef double p = exp(-lam)
    cdef double f = p
    while u > f and k < MAX_INVERSION_K:
        k += 1
        p *= lam / k
        f += p
    return k


cdef inline int64_t _poisson_ptrs(double lam, uint64_t base) nogil:
    cdef double slam = sqrt(lam)
    cdef double loglam = log(lam)
    cdef double b = 0.931 + 2.53 * slam
    cdef double a = -0.059 + 0.02483 * b
    cdef double invalpha = 1.1239 + 1.1328 / (b - 3.4)
    cdef double vr = 0.9277 - 3.6224 / (b - 2.0)
    cdef int64_t ctr = 0
    cdef double u, v, us, kf, lhs, rhs
    while True:
        u = _uniform(base, ctr) - 0.5
        v = _uniform(base, ctr + 1)
        ctr += 2
        us = 0.5 - fabs(u)
        kf = floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return <int64_t>kf
        if kf < 0 or (us < 0.013 and v > us):
            continue
        lhs = log(v) + log(invalpha) - log(a / (us * us) + b)
        rhs = -lam + kf * loglam - lgamma(kf + 1.0)
        if lhs <= rhs:
            return <int64_t>kf


def poisson_sample(lam, seed, key0=0):
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = l.shape[0]
    out = np.zeros(n, dtype=np.uint32)
    cdef uint32_t[::1] o = out
    cdef uint64_t s = _mix(<uint64_t>seed)
    cdef uint64_t k0 = <uint64_t>key0
    cdef uint64_t base
    with nogil:
        for i in range(n):
            if l[i] <= 0:
                continue
            base = _mix(s + (k0 + <uint64_t>i) * _GOLDEN)
            if l[i] < INVERSION_LIMIT:
                o[i] = <uint32_t>_poisson_inversion(l[i], base)
            else:
                o[i] = <uint32_t>_poisson_ptrs(l[i], base)
    return out


def argmax_peaks(cube):
    cdef const double[:, ::1] c = np.ascontiguousarray(cube, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], t = c.shape[1], i, j, best
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    with nogil:
        for i in range(n):
            best = 0
            for j in range(1, t):
                if c[i, j] > c[i, best]:
                    best = j
            o[i] = best + 1
    return out


def matched_filter_peaks(cube, kernel):
    cdef const double[:, ::1] c = np.ascontiguousarray(cube, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], t = c.shape[1], nk = w.shape[0]
    cdef Py_ssize_t half = nk // 2, i, j, k, src, best
    cdef double score, best_score
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    with nogil:
        for i in range(n):
            best = 0
            best_score = -INFINITY
            for j in range(t):
                score = 0.0
                for k in range(nk):
                    src = j + k - half
                    if src >= 0 and src < t:
                        score += w[k] * c[i, src]
                    else:
                        score += w[k] * 0.0
                if score > best_score:
                    best_score = score
                    best = j
            o[i] = best + 1
    return out


def center_of_mass(cube, background, peaks):
    cdef const double[:, ::1] c = np.ascontiguousarray(cube, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(
        np.broadcast_to(np.asarray(background, dtype=np.float64), (c.shape[0],)))
    cdef const int64_t[::1] p = np.ascontiguousarray(peaks, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], t = c.shape[1], i
    cdef int64_t off, tt
    cdef double num, den, sig
    depth = np.zeros(n, dtype=np.float64)
    valid = np.zeros(n, dtype=np.uint8)
    cdef double[::1] d = depth
    cdef uint8_t[::1] v = valid
    with nogil:
        for i in range(n):
            num = 0.0
            den = 0.0
            for off in range(-1, 2):
                tt = p[i] + off
                if tt >= 1 and tt <= t:
                    sig = c[i, tt - 1] - b[i]
                    if sig < 0.0:
                        sig = 0.0
                    num += tt * sig
                    den += sig
            if den > 0:
                d[i] = num / den
                v[i] = 1
    return depth, valid


def second_peaks(cube, background, first_peaks, double level):
    cdef const double[:, ::1] c = np.ascontiguousarray(cube, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(
        np.broadcast_to(np.asarray(background, dtype=np.float64), (c.shape[0],)))
    cdef const int64_t[::1] fp = np.ascontiguousarray(first_peaks, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], t = c.shape[1], i, j, best
    cdef double hmax
    out = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    with nogil:
        for i in range(n):
            best = -1
            hmax = -INFINITY
            for j in range(t):
                if j + 1 >= fp[i] - 1 and j + 1 <= fp[i] + 1:
                    continue
                if c[i, j] > hmax:
                    hmax = c[i, j]
                    best = j
            if best >= 0 and hmax > b[i] + level * sqrt(b[i]):
                o[i] = best + 1
    return out


def box_sum(img, int radius):
    cdef const double[:, ::1] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], r = radius, k = 2 * radius + 1
    cdef Py_ssize_t ph = h + 2 * r, pw = w + 2 * r, i, j, si, sj
    s_arr = np.zeros((ph + 1, pw + 1), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        # column-wise running sums first, then row-wise
        for i in range(ph):
            si = min(max(i - r, 0), h - 1)
            for j in range(pw):
                sj = min(max(j - r, 0), w - 1)
                s[i + 1, j + 1] = s[i, j + 1] + x[si, sj]
        for i in range(1, ph + 1):
            for j in range(1, pw + 1):
                s[i, j] = s[i, j - 1] + s[i, j]
        for i in range(h):
            for j in range(w):
                o[i, j] = s[i + k, j + k] - s[i, j + k] - s[i + k, j] + s[i, j]
    return out
