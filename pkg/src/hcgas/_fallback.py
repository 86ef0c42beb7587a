"""Pure-Python/numpy versions of the compiled kernels.

Every function here produces the same bits as its counterpart in
``_kernels.pyx`` (``composition_lse`` agrees to rounding only: numpy sums
pairwise).
"""

import math

import numpy as np

from .errors import DegenerateInputError, DepthError

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
TWO_M53 = 1.0 / 9007199254740992.0

_U = np.uint64


def mix64(z):
    z &= MASK
    z ^= z >> 30
    z = (z * M1) & MASK
    z ^= z >> 27
    z = (z * M2) & MASK
    z ^= z >> 31
    return z


def combine(k, v):
    return mix64(k ^ mix64((v + GAMMA) & MASK))


def unif(k, i):
    return (mix64((k + GAMMA * (i + 1)) & MASK) >> 11) * TWO_M53


def nkey(rk, level, ix, iy):
    return combine(combine(combine(rk, level), ix), iy)


def _vmix(z):
    z = z ^ (z >> _U(30))
    z = z * _U(M1)
    z = z ^ (z >> _U(27))
    z = z * _U(M2)
    return z ^ (z >> _U(31))


def _vcombine(k, v):
    return _vmix(k ^ _U(mix64((v + GAMMA) & MASK)))


def node_keys(rkeys, level, ix, iy):
    rkeys = np.ascontiguousarray(rkeys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _vcombine(_vcombine(_vcombine(rkeys, level), ix), iy)


def node_keys_at(rkeys, level, ix, iy):
    rkeys = np.ascontiguousarray(rkeys, dtype=np.uint64)
    ix = np.ascontiguousarray(ix, dtype=np.uint64)
    iy = np.ascontiguousarray(iy, dtype=np.uint64)
    with np.errstate(over="ignore"):
        lv = _vmix(_U((level + GAMMA) & MASK))
        k = _vmix(rkeys ^ lv)
        k = _vmix(k ^ _vmix(ix + _U(GAMMA)))
        return _vmix(k ^ _vmix(iy + _U(GAMMA)))


def replica_keys(seedkey, start, count):
    v = np.arange(count, dtype=np.uint64) + _U(start)
    with np.errstate(over="ignore"):
        return _vmix(_U(seedkey) ^ _vmix(v + _U(GAMMA)))


def uniforms(keys, counter):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    inc = _U((GAMMA * (counter + 1)) & MASK)
    with np.errstate(over="ignore"):
        z = _vmix(keys + inc)
    return (z >> _U(11)).astype(np.float64) * TWO_M53


def stream(key, start, count):
    i = np.arange(count, dtype=np.uint64) + _U(start + 1)
    with np.errstate(over="ignore"):
        z = _vmix(_U(key) + _U(GAMMA) * i)
    return (z >> _U(11)).astype(np.float64) * TWO_M53


def _draw_family(fam, m, u, cdf, off, lo, stride):
    out = np.empty(len(m), dtype=np.int64)
    # groups of equal count share one cdf block
    for mv in np.unique(m):
        sel = m == mv
        bb = fam * stride + mv
        blk = cdf[off[bb]:off[bb + 1]]
        out[sel] = lo[bb] + np.searchsorted(blk, u[sel], side="right")
    return out


def split_draw(m, keys, cdf, off, lo):
    m = np.ascontiguousarray(m, dtype=np.int64)
    stride = len(lo) // 3
    out = np.empty((len(m), 4), dtype=np.int64)
    if len(m) == 0:
        return out
    t0 = _draw_family(0, m, uniforms(keys, 0), cdf, off, lo, stride)
    r = m - t0
    t1 = _draw_family(1, r, uniforms(keys, 1), cdf, off, lo, stride)
    r = r - t1
    t2 = _draw_family(2, r, uniforms(keys, 2), cdf, off, lo, stride)
    out[:, 0], out[:, 1], out[:, 2], out[:, 3] = t0, t1, t2, r - t2
    return out


def _draw_scalar(fam, m, u, cdf, off, lo, stride):
    b = fam * stride + m
    blk = cdf[off[b]:off[b + 1]]
    return int(lo[b]) + int(np.searchsorted(blk, u, side="right"))


def sample_tree(rkey, count, cdf, off, lo, max_depth, level0=0, ix0=0, iy0=0):
    stride = len(lo) // 3
    ol, ox, oy, oc, px, py = [], [], [], [], [], []
    stack = [(level0, ix0, iy0, count)] if count > 0 else []
    while stack:
        lev, ix, iy, c = stack.pop()
        ol.append(lev); ox.append(ix); oy.append(iy); oc.append(c)
        k = nkey(rkey, lev, ix, iy)
        if c == 1:
            side = math.ldexp(1.0, -lev)
            x = float(ix) * side + unif(k, 0) * side
            hi = float(ix + 1) * side
            if x >= hi:
                x = math.nextafter(hi, 0.0)
            y = float(iy) * side + unif(k, 1) * side
            hi = float(iy + 1) * side
            if y >= hi:
                y = math.nextafter(hi, 0.0)
            px.append(x); py.append(y)
            continue
        if lev >= max_depth:
            raise DepthError(f"count {c} still unsplit at level {lev}")
        t0 = _draw_scalar(0, c, unif(k, 0), cdf, off, lo, stride)
        r = c - t0
        t1 = _draw_scalar(1, r, unif(k, 1), cdf, off, lo, stride)
        r -= t1
        t2 = _draw_scalar(2, r, unif(k, 2), cdf, off, lo, stride)
        t = (t0, t1, t2, r - t2)
        for j in range(3, -1, -1):
            if t[j] > 0:
                stack.append((lev + 1, 2 * ix + (j & 1), 2 * iy + (j >> 1), t[j]))
    return (np.array(ol, dtype=np.int64), np.array(ox, dtype=np.uint64),
            np.array(oy, dtype=np.uint64), np.array(oc, dtype=np.int64),
            np.array(px, dtype=np.float64), np.array(py, dtype=np.float64))


MARGIN = 1e-12


def _classify(lev, ix, iy, cx, cy, r2):
    s = math.ldexp(1.0, -lev)
    x0, y0 = float(ix) * s, float(iy) * s
    x1, y1 = x0 + s, y0 + s
    fx = max(abs(x0 - cx), abs(x1 - cx))
    fy = max(abs(y0 - cy), abs(y1 - cy))
    if fx * fx + fy * fy <= r2 * (1.0 - MARGIN):
        return 1
    nx = max(max(x0 - cx, cx - x1), 0.0)
    ny = max(max(y0 - cy, cy - y1), 0.0)
    if nx * nx + ny * ny >= r2 * (1.0 + MARGIN):
        return 0
    return 2


def disk_counts(rkeys, counts, levels, ix0, iy0, cdf, off, lo, max_depth, cx, cy, r):
    stride = len(lo) // 3
    r2 = r * r
    out = np.empty(len(counts), dtype=np.int64)
    for item in range(len(counts)):
        rk = int(rkeys[item])
        total = 0
        stack = [(int(levels[item]), int(ix0[item]), int(iy0[item]), int(counts[item]))]
        while stack:
            lev, ix, iy, c = stack.pop()
            if c == 0:
                continue
            cls = _classify(lev, ix, iy, cx, cy, r2)
            if cls == 1:
                total += c
                continue
            if cls == 0:
                continue
            k = nkey(rk, lev, ix, iy)
            if c == 1:
                side = math.ldexp(1.0, -lev)
                x = float(ix) * side + unif(k, 0) * side
                hi = float(ix + 1) * side
                if x >= hi:
                    x = math.nextafter(hi, 0.0)
                y = float(iy) * side + unif(k, 1) * side
                hi = float(iy + 1) * side
                if y >= hi:
                    y = math.nextafter(hi, 0.0)
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2:
                    total += 1
                continue
            if lev >= max_depth:
                raise DepthError(f"count {c} still unsplit at level {lev}")
            t0 = _draw_scalar(0, c, unif(k, 0), cdf, off, lo, stride)
            r_ = c - t0
            t1 = _draw_scalar(1, r_, unif(k, 1), cdf, off, lo, stride)
            r_ -= t1
            t2 = _draw_scalar(2, r_, unif(k, 2), cdf, off, lo, stride)
            t = (t0, t1, t2, r_ - t2)
            for j in range(3, -1, -1):
                if t[j] > 0:
                    stack.append((lev + 1, 2 * ix + (j & 1), 2 * iy + (j >> 1), t[j]))
        out[item] = total
    return out


def composition_lse(g, n):
    g = np.asarray(g, dtype=np.float64)
    vals = []
    for a in range(n + 1):
        for b in range(n - a + 1):
            c = np.arange(n - a - b + 1)
            vals.append(g[a] + g[b] + g[c] + g[n - a - b - c])
    v = np.concatenate(vals)
    mx = v.max()
    if mx == -np.inf:
        return -np.inf
    return float(mx + np.log(np.sum(np.exp(v - mx))))


def fixed64(x):
    """Exact truncation of x in [0, 1) to 64-bit fixed point (vectorized)."""
    x = np.asarray(x, dtype=np.float64)
    hi = np.floor(x * 4294967296.0)
    lo = np.floor((x * 4294967296.0 - hi) * 4294967296.0)
    return (hi.astype(np.uint64) << _U(32)) | lo.astype(np.uint64)


def _fixed64_scalar(x):
    return int(x * 18446744073709551616.0)


def _clz64(v):
    return 64 - v.bit_length()


def _wdist(ax, ay, bx, by):
    return 1 + min(_clz64(ax ^ bx), _clz64(ay ^ by))


def mcmc_chain(pts, beta, idx, ux, uy, ua, burn_in, thinning):
    n = pts.shape[0]
    steps = len(idx)
    nout = (steps - burn_in) // thinning if steps > burn_in else 0
    X = [_fixed64_scalar(float(p)) for p in pts[:, 0]]
    Y = [_fixed64_scalar(float(p)) for p in pts[:, 1]]
    H = 0
    for i in range(n):
        for j in range(i + 1, n):
            w = _wdist(X[i], Y[i], X[j], Y[j])
            if w > 64:
                raise DegenerateInputError("coincident points in initial state")
            H += w
    out = np.empty((nout, n, 2))
    en = np.empty(nout, dtype=np.int64)
    trace = np.empty(steps, dtype=np.int64)
    acc = 0
    e = 0
    P = pts.tolist()
    for s in range(steps):
        i = int(idx[s])
        xs, ys = float(ux[s]), float(uy[s])
        nx, ny = _fixed64_scalar(xs), _fixed64_scalar(ys)
        dh = 0
        bad = False
        xi, yi = X[i], Y[i]
        for j in range(n):
            if j == i:
                continue
            wn = _wdist(nx, ny, X[j], Y[j])
            if wn > 64:
                bad = True
                break
            dh += wn - _wdist(xi, yi, X[j], Y[j])
        if not bad and (dh <= 0 or ua[s] < math.exp(-beta * float(dh))):
            X[i], Y[i] = nx, ny
            P[i] = [xs, ys]
            H += dh
            acc += 1
        trace[s] = H
        if s >= burn_in and (s - burn_in + 1) % thinning == 0 and e < nout:
            out[e] = P
            en[e] = H
            e += 1
    pts[:, :] = np.asarray(P)
    return out, en, trace, acc
