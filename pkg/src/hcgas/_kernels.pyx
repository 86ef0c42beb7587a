# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. ``_fallback.py`` mirrors every function bit for bit."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t
from libc.math cimport exp, log, INFINITY, nextafter, ldexp, fabs, fmax
from libcpp.vector cimport vector

from .errors import DepthError, DegenerateInputError

cnp.import_array()

cdef extern from *:
    int __builtin_clzll(unsigned long long) nogil


cdef uint64_t GAMMA = <uint64_t>0x9E3779B97F4A7C15
cdef uint64_t M1 = <uint64_t>0xBF58476D1CE4E5B9
cdef uint64_t M2 = <uint64_t>0x94D049BB133111EB
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double TWO_64 = 18446744073709551616.0
# relative slack on r^2 so that pruned squares never disagree with a point test
cdef double MARGIN = 1e-12


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z ^= z >> 30
    z *= M1
    z ^= z >> 27
    z *= M2
    z ^= z >> 31
    return z


cdef inline uint64_t combine(uint64_t k, uint64_t v) noexcept nogil:
    return mix64(k ^ mix64(v + GAMMA))


cdef inline double unif(uint64_t k, uint64_t i) noexcept nogil:
    return <double>(mix64(k + GAMMA * (i + 1)) >> 11) * TWO_M53


cdef inline uint64_t nkey(uint64_t rk, uint64_t level, uint64_t ix, uint64_t iy) noexcept nogil:
    return combine(combine(combine(rk, level), ix), iy)


def node_keys(uint64_t[::1] rkeys, uint64_t level, uint64_t ix, uint64_t iy):
    cdef Py_ssize_t i, n = rkeys.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    for i in range(n):
        o[i] = nkey(rkeys[i], level, ix, iy)
    return out


def node_keys_at(uint64_t[::1] rkeys, uint64_t level, uint64_t[::1] ix, uint64_t[::1] iy):
    cdef Py_ssize_t i, n = rkeys.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    for i in range(n):
        o[i] = nkey(rkeys[i], level, ix[i], iy[i])
    return out


def replica_keys(uint64_t seedkey, uint64_t start, Py_ssize_t count):
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    for i in range(count):
        o[i] = combine(seedkey, start + <uint64_t>i)
    return out


def uniforms(uint64_t[::1] keys, uint64_t counter):
    cdef Py_ssize_t i, n = keys.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = unif(keys[i], counter)
    return out


def stream(uint64_t key, uint64_t start, Py_ssize_t count):
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(count):
        o[i] = unif(key, start + <uint64_t>i)
    return out


cdef inline int64_t draw_one(int64_t fam, int64_t m, double u, const double* cdf,
                             const int64_t* off, const int64_t* lo, int64_t stride) noexcept nogil:
    cdef int64_t b = fam * stride + m
    cdef int64_t a = off[b]
    cdef int64_t e = off[b + 1] - 1
    cdef int64_t mid
    # first index in [a, e] with cdf > u; cdf[e] == 1 > u
    while a < e:
        mid = (a + e) >> 1
        if cdf[mid] > u:
            e = mid
        else:
            a = mid + 1
    return lo[b] + (a - off[b])


cdef inline void split_one(uint64_t k, int64_t m, const double* cdf, const int64_t* off,
                           const int64_t* lo, int64_t stride, int64_t* t) noexcept nogil:
    cdef int64_t r
    t[0] = draw_one(0, m, unif(k, 0), cdf, off, lo, stride)
    r = m - t[0]
    t[1] = draw_one(1, r, unif(k, 1), cdf, off, lo, stride)
    r -= t[1]
    t[2] = draw_one(2, r, unif(k, 2), cdf, off, lo, stride)
    t[3] = r - t[2]


def split_draw(int64_t[::1] m, uint64_t[::1] keys, const double[::1] cdf,
               const int64_t[::1] off, const int64_t[::1] lo):
    """Draw four child counts for every (count, node key) pair."""
    cdef Py_ssize_t i, n = m.shape[0]
    cdef int64_t stride = (lo.shape[0]) // 3
    out = np.empty((n, 4), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef int64_t t[4]
    with nogil:
        for i in range(n):
            split_one(keys[i], m[i], &cdf[0], &off[0], &lo[0], stride, t)
            o[i, 0] = t[0]
            o[i, 1] = t[1]
            o[i, 2] = t[2]
            o[i, 3] = t[3]
    return out


def sample_tree(uint64_t rkey, int64_t count, const double[::1] cdf, const int64_t[::1] off,
                const int64_t[::1] lo, int64_t max_depth, int64_t level0=0, uint64_t ix0=0,
                uint64_t iy0=0):
    """Depth-first count-tree sampler from one root square.

    Returns node arrays (level, ix, iy, count) in preorder and the leaf points.
    """
    cdef int64_t stride = (lo.shape[0]) // 3
    cdef vector[int64_t] sl, sc
    cdef vector[uint64_t] sx, sy
    cdef vector[int64_t] ol, oc
    cdef vector[uint64_t] ox, oy
    cdef vector[double] px, py
    cdef int64_t lev, c, j
    cdef uint64_t ix, iy, k
    cdef int64_t t[4]
    cdef double side, x, y, hi
    if count <= 0:
        empty_i = np.zeros(0, dtype=np.int64)
        empty_u = np.zeros(0, dtype=np.uint64)
        return (empty_i, empty_u, empty_u.copy(), empty_i.copy(),
                np.zeros(0), np.zeros(0))
    sl.push_back(level0); sx.push_back(ix0); sy.push_back(iy0); sc.push_back(count)
    while sl.size() > 0:
        lev = sl.back(); ix = sx.back(); iy = sy.back(); c = sc.back()
        sl.pop_back(); sx.pop_back(); sy.pop_back(); sc.pop_back()
        ol.push_back(lev); ox.push_back(ix); oy.push_back(iy); oc.push_back(c)
        k = nkey(rkey, <uint64_t>lev, ix, iy)
        if c == 1:
            side = ldexp(1.0, <int>(-lev))
            x = <double>ix * side + unif(k, 0) * side
            hi = <double>(ix + 1) * side
            if x >= hi:
                x = nextafter(hi, 0.0)
            y = <double>iy * side + unif(k, 1) * side
            hi = <double>(iy + 1) * side
            if y >= hi:
                y = nextafter(hi, 0.0)
            px.push_back(x); py.push_back(y)
            continue
        if lev >= max_depth:
            raise DepthError(f"count {c} still unsplit at level {lev}")
        split_one(k, c, &cdf[0], &off[0], &lo[0], stride, t)
        for j in range(3, -1, -1):
            if t[j] > 0:
                sl.push_back(lev + 1)
                sx.push_back(2 * ix + <uint64_t>(j & 1))
                sy.push_back(2 * iy + <uint64_t>(j >> 1))
                sc.push_back(t[j])
    cdef Py_ssize_t nn = ol.size(), npt = px.size(), i
    L = np.empty(nn, dtype=np.int64); X = np.empty(nn, dtype=np.uint64)
    Y = np.empty(nn, dtype=np.uint64); C = np.empty(nn, dtype=np.int64)
    PX = np.empty(npt); PY = np.empty(npt)
    cdef int64_t[::1] Lv = L, Cv = C
    cdef uint64_t[::1] Xv = X, Yv = Y
    cdef double[::1] PXv = PX, PYv = PY
    for i in range(nn):
        Lv[i] = ol[i]; Xv[i] = ox[i]; Yv[i] = oy[i]; Cv[i] = oc[i]
    for i in range(npt):
        PXv[i] = px[i]; PYv[i] = py[i]
    return L, X, Y, C, PX, PY


cdef inline int classify(int64_t lev, uint64_t ix, uint64_t iy, double cx, double cy,
                         double r2) noexcept nogil:
    """0 = surely outside, 1 = surely inside, 2 = undecided."""
    cdef double s = ldexp(1.0, <int>(-lev))
    cdef double x0 = <double>ix * s, y0 = <double>iy * s
    cdef double x1 = x0 + s, y1 = y0 + s
    cdef double fx = fmax(fabs(x0 - cx), fabs(x1 - cx))
    cdef double fy = fmax(fabs(y0 - cy), fabs(y1 - cy))
    if fx * fx + fy * fy <= r2 * (1.0 - MARGIN):
        return 1
    cdef double nx = fmax(fmax(x0 - cx, cx - x1), 0.0)
    cdef double ny = fmax(fmax(y0 - cy, cy - y1), 0.0)
    if nx * nx + ny * ny >= r2 * (1.0 + MARGIN):
        return 0
    return 2


def disk_counts(const uint64_t[::1] rkeys, const int64_t[::1] counts, const int64_t[::1] levels,
                const uint64_t[::1] ix0, const uint64_t[::1] iy0, const double[::1] cdf,
                const int64_t[::1] off, const int64_t[::1] lo, int64_t max_depth,
                double cx, double cy, double r):
    """Points inside the closed disk, per item, sampling only undecided squares.

    Item i is the subtree of square (levels[i], ix0[i], iy0[i]) holding
    counts[i] points, driven by replica key rkeys[i]. The result equals
    counting the points of ``sample_tree`` from the same square and key.
    """
    cdef Py_ssize_t item, nitems = counts.shape[0]
    cdef int64_t stride = (lo.shape[0]) // 3
    cdef double r2 = r * r, side, x, y, hi
    cdef vector[int64_t] sl, sc
    cdef vector[uint64_t] sx, sy
    cdef int64_t lev, c, j, total, cls
    cdef uint64_t ix, iy, k, rk
    cdef int64_t t[4]
    out = np.empty(nitems, dtype=np.int64)
    cdef int64_t[::1] o = out
    for item in range(nitems):
        total = 0
        rk = rkeys[item]
        sl.clear(); sx.clear(); sy.clear(); sc.clear()
        if counts[item] > 0:
            sl.push_back(levels[item]); sx.push_back(ix0[item]); sy.push_back(iy0[item])
            sc.push_back(counts[item])
        while sl.size() > 0:
            lev = sl.back(); ix = sx.back(); iy = sy.back(); c = sc.back()
            sl.pop_back(); sx.pop_back(); sy.pop_back(); sc.pop_back()
            cls = classify(lev, ix, iy, cx, cy, r2)
            if cls == 1:
                total += c
                continue
            if cls == 0:
                continue
            k = nkey(rk, <uint64_t>lev, ix, iy)
            if c == 1:
                side = ldexp(1.0, <int>(-lev))
                x = <double>ix * side + unif(k, 0) * side
                hi = <double>(ix + 1) * side
                if x >= hi:
                    x = nextafter(hi, 0.0)
                y = <double>iy * side + unif(k, 1) * side
                hi = <double>(iy + 1) * side
                if y >= hi:
                    y = nextafter(hi, 0.0)
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2:
                    total += 1
                continue
            if lev >= max_depth:
                raise DepthError(f"count {c} still unsplit at level {lev}")
            split_one(k, c, &cdf[0], &off[0], &lo[0], stride, t)
            for j in range(3, -1, -1):
                if t[j] > 0:
                    sl.push_back(lev + 1)
                    sx.push_back(2 * ix + <uint64_t>(j & 1))
                    sy.push_back(2 * iy + <uint64_t>(j >> 1))
                    sc.push_back(t[j])
        o[item] = total
    return out


def composition_lse(const double[::1] g, int64_t n):
    """log sum over t1+t2+t3+t4 = n of exp(g[t1]+g[t2]+g[t3]+g[t4])."""
    cdef int64_t a, b, c
    cdef double mx = -INFINITY, v, s = 0.0, comp = 0.0, gab, tsum
    with nogil:
        for a in range(n + 1):
            for b in range(n - a + 1):
                gab = g[a] + g[b]
                for c in range(n - a - b + 1):
                    v = gab + g[c] + g[n - a - b - c]
                    if v > mx:
                        mx = v
        for a in range(n + 1):
            if mx == -INFINITY:
                break
            for b in range(n - a + 1):
                gab = g[a] + g[b] - mx
                for c in range(n - a - b + 1):
                    # Neumaier compensated sum
                    v = exp(gab + g[c] + g[n - a - b - c])
                    tsum = s + v
                    if s >= v:
                        comp += (s - tsum) + v
                    else:
                        comp += (v - tsum) + s
                    s = tsum
    if mx == -INFINITY:
        return -INFINITY
    return mx + log(s + comp)


cdef inline uint64_t fixed64(double x) noexcept nogil:
    return <uint64_t>(x * TWO_64)


cdef inline int64_t clz64(uint64_t v) noexcept nogil:
    if v == 0:
        return 64
    return __builtin_clzll(v)


cdef inline int64_t wdist(uint64_t ax, uint64_t ay, uint64_t bx, uint64_t by) noexcept nogil:
    cdef int64_t cx = clz64(ax ^ bx), cy = clz64(ay ^ by)
    return 1 + (cx if cx < cy else cy)


def mcmc_chain(double[:, ::1] pts, double beta, const int64_t[::1] idx, const double[::1] ux,
               const double[::1] uy, const double[::1] ua, int64_t burn_in, int64_t thinning):
    """Metropolis chain with global single-point relocation proposals.

    ``pts`` is updated in place. Returns (emitted configs, emitted energies,
    per-step energy trace, accepted count).
    """
    cdef Py_ssize_t n = pts.shape[0], steps = idx.shape[0]
    cdef Py_ssize_t nout = (steps - burn_in) // thinning if steps > burn_in else 0
    cdef Py_ssize_t s, j, i, e = 0
    cdef int64_t dh, wn, wo, H = 0, acc = 0
    cdef uint64_t nx, ny
    cdef bint bad
    X = np.empty(n, dtype=np.uint64); Y = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] Xv = X, Yv = Y
    for i in range(n):
        Xv[i] = fixed64(pts[i, 0]); Yv[i] = fixed64(pts[i, 1])
    for i in range(n):
        for j in range(i + 1, n):
            wn = wdist(Xv[i], Yv[i], Xv[j], Yv[j])
            if wn > 64:
                raise DegenerateInputError("coincident points in initial state")
            H += wn
    out = np.empty((nout, n, 2)); en = np.empty(nout, dtype=np.int64)
    trace = np.empty(steps, dtype=np.int64)
    cdef double[:, :, ::1] ov = out
    cdef int64_t[::1] ev = en, tv = trace
    for s in range(steps):
        i = idx[s]
        nx = fixed64(ux[s]); ny = fixed64(uy[s])
        dh = 0
        bad = False
        for j in range(n):
            if j == i:
                continue
            wn = wdist(nx, ny, Xv[j], Yv[j])
            if wn > 64:
                bad = True
                break
            wo = wdist(Xv[i], Yv[i], Xv[j], Yv[j])
            dh += wn - wo
        if not bad and (dh <= 0 or ua[s] < exp(-beta * <double>dh)):
            Xv[i] = nx; Yv[i] = ny
            pts[i, 0] = ux[s]; pts[i, 1] = uy[s]
            H += dh
            acc += 1
        tv[s] = H
        if s >= burn_in and (s - burn_in + 1) % thinning == 0 and e < nout:
            for j in range(n):
                ov[e, j, 0] = pts[j, 0]; ov[e, j, 1] = pts[j, 1]
            ev[e] = H
            e += 1
    return out, en, trace, acc
