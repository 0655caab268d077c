"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same
signature and the same floating-point operation order, so both backends
return bit-identical results on the same inputs.
"""

import math

import numpy as np

BACKEND = "python"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0
INVERSION_LIMIT = 10.0
MAX_INVERSION_K = 1000


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_base(seed, keys):
    s = _mix(np.array([seed], dtype=np.uint64))[0]
    return _mix(s + keys * _GOLDEN)


def _uniform(base, ctr):
    h = _mix(base + (ctr.astype(np.uint64) + np.uint64(1)) * _STREAM)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def uniform_stream(seed, keys, ctr):
    """Uniform (0, 1) draws for counter-based streams ``(seed, key, ctr)``."""
    keys = np.asarray(keys, dtype=np.uint64)
    ctr = np.broadcast_to(np.asarray(ctr, dtype=np.int64), keys.shape)
    return _uniform(_stream_base(np.uint64(seed), keys), ctr)


def poisson_sample(lam, seed, key0=0):
    """Draw one Poisson variate per entry of ``lam``.

    Entry ``i`` uses its own counter-based stream keyed by ``key0 + i``, so
    the result does not depend on evaluation order. Inversion is used for
    means below 10, PTRS transformed rejection above.
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    n = lam.size
    out = np.zeros(n, dtype=np.uint32)
    keys = np.uint64(key0) + np.arange(n, dtype=np.uint64)
    base = _stream_base(np.uint64(seed), keys)

    small = np.flatnonzero((lam > 0) & (lam < INVERSION_LIMIT))
    if small.size:
        ls = lam[small]
        u = _uniform(base[small], np.zeros(small.size, dtype=np.int64))
        k = np.zeros(small.size, dtype=np.int64)
        p = np.exp(-ls)
        f = p.copy()
        active = np.flatnonzero((u > f) & (k < MAX_INVERSION_K))
        while active.size:
            k[active] += 1
            p[active] *= ls[active] / k[active]
            f[active] += p[active]
            active = active[(u[active] > f[active]) & (k[active] < MAX_INVERSION_K)]
        out[small] = k

    large = np.flatnonzero(lam >= INVERSION_LIMIT)
    if large.size:
        out[large] = _ptrs(lam[large], base[large])
    return out


def _ptrs(lam, base):
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    result = np.zeros(lam.size, dtype=np.int64)
    ctr = np.zeros(lam.size, dtype=np.int64)
    pending = np.arange(lam.size)
    while pending.size:
        c = ctr[pending]
        bp = base[pending]
        u = _uniform(bp, c) - 0.5
        v = _uniform(bp, c + 1)
        ctr[pending] = c + 2
        us = 0.5 - np.abs(u)
        ap, bb, lp = a[pending], b[pending], lam[pending]
        kf = np.floor((2.0 * ap / us + bb) * u + lp + 0.43)
        fast = (us >= 0.07) & (v <= vr[pending])
        reject = (kf < 0) | ((us < 0.013) & (v > us))
        slow = ~fast & ~reject
        accept = fast.copy()
        if slow.any():
            idx = np.flatnonzero(slow)
            ks = kf[idx]
            lg = np.array([math.lgamma(x + 1.0) for x in ks])
            lhs = np.log(v[idx]) + np.log(invalpha[pending[idx]]) - np.log(
                ap[idx] / (us[idx] * us[idx]) + bb[idx]
            )
            rhs = -lp[idx] + ks * loglam[pending[idx]] - lg
            accept[idx] = lhs <= rhs
        result[pending[accept]] = kf[accept].astype(np.int64)
        pending = pending[~accept]
    return result


def argmax_peaks(cube):
    """1-indexed argmax per row; ties go to the lowest bin."""
    cube = np.asarray(cube, dtype=np.float64)
    return np.argmax(cube, axis=1).astype(np.int64) + 1


def matched_filter_peaks(cube, kernel):
    """1-indexed argmax of the zero-padded cross-correlation with ``kernel``."""
    cube = np.asarray(cube, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    n, t = cube.shape
    half = kernel.size // 2
    padded = np.zeros((n, t + 2 * half))
    padded[:, half : half + t] = cube
    score = np.zeros((n, t))
    for k in range(kernel.size):
        score += kernel[k] * padded[:, k : k + t]
    return np.argmax(score, axis=1).astype(np.int64) + 1


def center_of_mass(cube, background, peaks):
    """Windowed background-subtracted center of mass around each peak.

    Returns ``(depth_in_bins, valid)``; rows with a zero denominator get
    depth 0 and valid 0.
    """
    cube = np.asarray(cube, dtype=np.float64)
    n, t = cube.shape
    b = np.asarray(background, dtype=np.float64)
    peaks = np.asarray(peaks, dtype=np.int64)
    rows = np.arange(n)
    num = np.zeros(n)
    den = np.zeros(n)
    for off in (-1, 0, 1):
        tt = peaks + off
        inside = (tt >= 1) & (tt <= t)
        h = cube[rows, np.clip(tt, 1, t) - 1]
        sig = np.where(inside, np.maximum(0.0, h - b), 0.0)
        num += np.where(inside, tt * sig, 0.0)
        den += sig
    valid = den > 0
    depth = np.zeros(n)
    depth[valid] = num[valid] / den[valid]
    return depth, valid.astype(np.uint8)


def second_peaks(cube, background, first_peaks, level):
    """Strongest bin outside the first peak's 3-bin window, if it passes
    ``h > b + level * sqrt(b)``; 0 where no bin qualifies."""
    cube = np.asarray(cube, dtype=np.float64)
    n, t = cube.shape
    b = np.asarray(background, dtype=np.float64)
    fp = np.asarray(first_peaks, dtype=np.int64)
    bins = np.arange(1, t + 1)
    excluded = np.abs(bins[None, :] - fp[:, None]) <= 1
    masked = np.where(excluded, -np.inf, cube)
    cand = np.argmax(masked, axis=1)
    hmax = masked[np.arange(n), cand]
    ok = hmax > b + level * np.sqrt(b)
    return np.where(ok, cand + 1, 0).astype(np.int64)


def box_sum(img, radius):
    """Sum over ``(2r+1)^2`` windows with edge-replicated borders, by 2-D
    prefix sums."""
    img = np.asarray(img, dtype=np.float64)
    r = int(radius)
    h, w = img.shape
    p = np.pad(img, r, mode="edge")
    s = np.zeros((h + 2 * r + 1, w + 2 * r + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(p, axis=0), axis=1)
    k = 2 * r + 1
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]
