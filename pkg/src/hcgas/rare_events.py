"""Exponential tilting of split laws for rare discrepancy events.

The tilted law reweights the gas by exp(xi * M) for a count statistic M
and is realized exactly along the dyadic tree: every tilted split draws the
four child counts from P(t | m) exp(sum_j g_j(t_j)) / phi, with g_j the
log moment generating function of the child's share of M. Likelihood ratios
are accumulated split by split, so estimates are unbiased whatever the
choice of tilt. At xi = 0 every draw coincides with the plain sampler's.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize
from scipy import stats as sps

from . import _backend, _fallback, rng
from .errors import BracketError, ConfigError, NumericError, OverflowGuardError
from .hierarchy import DiskRegion, DyadicSquare, ell_level, relative_area
from .logreal import LogReal, lse
from .partition import SplitFamily, SplitLaw, compositions, log_split_prob, logconv, table_for
from .stats import TailReport

LOG_RANGE = 1e6
PMF_FLOOR = math.log(1e-40)
ESS_WARN_FRACTION = 0.01
DEFAULT_CHUNK = 8192
MAX_LEVEL = 60


class DegeneracyWarning(UserWarning):
    """Importance weights concentrate on very few replicas."""


def default_depth(n: int) -> int:
    """Level whose squares hold about one point on average."""
    return ell_level(1.0 / math.sqrt(n))


def _check_xi(xi, n, weights):
    if not math.isfinite(xi):
        raise OverflowGuardError(f"tilt strength {xi} is not finite")
    if abs(xi) * n * max(1.0, float(np.max(np.abs(weights)))) > LOG_RANGE:
        raise OverflowGuardError(f"xi * n = {xi * n:.3g} exceeds the log-magnitude range")


def _tilted_family(base: SplitFamily, weights, xi, m_max) -> SplitFamily:
    a = np.arange(m_max + 1, dtype=np.float64)
    xs = [base.x[j][:m_max + 1] + (xi * weights[j]) * a for j in range(4)]
    return SplitFamily(*xs, m_max)


class TiltedSplitLaw:
    """A split law reweighted by exp(xi * w.t) and renormalized exactly."""

    def __init__(self, law: SplitLaw, weights, xi):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (4,):
            raise ConfigError("need four child weights")
        if np.any(np.abs(self.weights) > 1.0):
            raise ConfigError("weights must lie in [-1, 1]")
        self.xi = float(xi)
        _check_xi(self.xi, law.n, self.weights)
        self.base = law
        self.n = law.n
        self.family = _tilted_family(law.family, self.weights, self.xi, law.n)
        self.law = SplitLaw(self.family, law.n)

    def log_prob(self, t):
        return self.law.log_prob(t)

    def log_ratio(self, t):
        """log of original over tilted probability, per outcome."""
        t = np.asarray(t, dtype=np.int64)
        n = self.n
        return (-self.xi * (t @ self.weights) + self.family.log_norm[n]
                - self.base.family.log_norm[n])

    def log_mgf(self):
        """log E[exp(xi * w.t)] under the original law."""
        return float(self.family.log_norm[self.n] - self.base.family.log_norm[self.n])

    def mean(self):
        T, lp = self.law.joint()
        return float(np.exp(lp) @ (T @ self.weights))


def tilted_split_law(law: SplitLaw, weights, xi) -> TiltedSplitLaw:
    return TiltedSplitLaw(law, weights, xi)


def leaf_rate(p, xi):
    """log E[exp(xi * 1{U in D})] for a point landing in D with probability p."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.logaddexp(np.log1p(-p), np.log(p) + xi)


def leaf_mean(p, xi):
    """Tilted probability that such a point lands in D."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.exp(np.log(p) + xi - leaf_rate(p, xi))


@dataclass(frozen=True)
class TiltParams:
    """Tilt strength, depth, and the square weights the tilt pushes along.

    With ``leaf="linear"`` a square of weight w holding a points adds
    xi * w * a to the tilt exponent. With ``leaf="indicator"`` the weight is
    the fraction of the square inside a target region and each point adds
    xi times its own indicator, so the per-point rate is ``leaf_rate(w, xi)``.
    """

    xi: float
    depth: int
    weight: Callable[[DyadicSquare], float]
    tilted: Callable[[DyadicSquare], bool] = field(default=lambda Q: True)
    leaf: str = "linear"

    def __post_init__(self):
        if not math.isfinite(self.xi):
            raise ConfigError(f"xi must be finite, got {self.xi}")
        if self.depth < 0:
            raise ConfigError(f"depth must be nonnegative, got {self.depth}")
        if self.leaf not in ("linear", "indicator"):
            raise ConfigError(f"unknown leaf mode {self.leaf!r}")

    def rate(self, w) -> float:
        return self.xi * w if self.leaf == "linear" else float(leaf_rate(w, self.xi))

    def mean(self, w) -> float:
        return w if self.leaf == "linear" else float(leaf_mean(w, self.xi))


class _Target:
    """Counting region seen through dyadic squares."""

    def __init__(self):
        self._area = {}

    def weight(self, Q):
        v = self._area.get(Q)
        if v is None:
            v = self._area[Q] = self._weight(Q)
        return v

    def params(self, xi, depth):
        return TiltParams(xi, depth, self.weight, lambda Q: self.classify(Q) == 2, "indicator")


class DiskTarget(_Target):
    """Counting region for a disk: tilts squares the circle passes through."""

    def __init__(self, disk: DiskRegion):
        super().__init__()
        self.disk = disk
        self._r2 = disk.radius * disk.radius

    def classify(self, Q):
        """0 outside, 1 inside, 2 undecided (same margins as the kernels)."""
        return _fallback._classify(Q.level, Q.ix, Q.iy, self.disk.center[0],
                                   self.disk.center[1], self._r2)

    def _weight(self, Q):
        return relative_area(Q, self.disk)

    def continuation(self, family, rkeys, levels, ix, iy, counts):
        return _backend.disk_counts(
            np.ascontiguousarray(rkeys, dtype=np.uint64),
            np.ascontiguousarray(counts, dtype=np.int64),
            np.ascontiguousarray(levels, dtype=np.int64),
            np.ascontiguousarray(ix, dtype=np.uint64),
            np.ascontiguousarray(iy, dtype=np.uint64),
            *family.tables, 64, self.disk.center[0], self.disk.center[1], self.disk.radius)


class SquareTarget(_Target):
    """Counting region given by one dyadic square S."""

    def __init__(self, square: DyadicSquare):
        super().__init__()
        self.square = square

    def classify(self, Q):
        S = self.square
        if Q.level >= S.level:
            d = Q.level - S.level
            return 1 if (Q.ix >> d, Q.iy >> d) == (S.ix, S.iy) else 0
        d = S.level - Q.level
        return 2 if (S.ix >> d, S.iy >> d) == (Q.ix, Q.iy) else 0

    def _weight(self, Q):
        c = self.classify(Q)
        if c == 2:
            return math.ldexp(1.0, -2 * (self.square.level - Q.level))
        return float(c)

    def continuation(self, family, rkeys, levels, ix, iy, counts):
        out = np.zeros(len(counts), dtype=np.int64)
        for i, (k, l, x, y, c) in enumerate(zip(rkeys, levels, ix, iy, counts)):
            Q = DyadicSquare(int(l), int(x), int(y))
            cls = self.classify(Q)
            if cls != 2:
                out[i] = c if cls == 1 else 0
                continue
            _, _, _, _, px, py = _backend.sample_tree(int(k), int(c), *family.tables, 64,
                                                      Q.level, Q.ix, Q.iy)
            out[i] = sum(self.square.contains((a, b)) for a, b in zip(px, py))
        return out


def as_target(region):
    if isinstance(region, _Target):
        return region
    if isinstance(region, DiskRegion):
        return DiskTarget(region)
    if isinstance(region, DyadicSquare):
        return SquareTarget(region)
    raise ConfigError(f"unsupported target region {region!r}")


@dataclass
class _Node:
    square: DyadicSquare
    children: list  # per child: index of a tilted node, or -1 for frontier
    window: int
    family: SplitFamily | None = None
    shift: np.ndarray | None = None  # (4, window + 1) tilt added to each child's weights
    log_phi: np.ndarray | None = None


def _logconv_block(x, y, m_max):
    """Vectorized log-convolution; same values as ``logconv`` up to rounding."""
    s = np.arange(m_max + 1)[:, None]
    i = np.arange(m_max + 1)[None, :]
    a = np.where(i <= s, x[np.minimum(i, len(x) - 1)] + y[np.clip(s - i, 0, len(y) - 1)],
                 -np.inf)
    return lse(a, axis=1)


@dataclass
class _DeepSquare:
    cls: int
    rate: float
    mean: float
    child_rates: np.ndarray | None = None
    family: SplitFamily | None = None


class TiltedTree:
    """Exponential twist of a terminal count statistic above ``depth``.

    Terminal squares are the frontier (children of tilted squares that are
    not tilted themselves) and tilted squares holding a single point. With
    M = sum over terminal squares of (per-point rate / xi) * count, the law
    of the tilted part is P exp(xi M) / E[exp(xi M)], realized split by
    split: a tilted square with m >= 2 points reweights a child holding a
    points by g(a), the log of E[exp(xi M_child) | a] for tilted children and
    a * rate for terminal ones. A split's log ratio is log phi_Q(m) - sum g.
    Counts above a node's window fall back to the linear g; windows grow
    until the tilted mass beyond them is below 1e-40.
    """

    def __init__(self, n, beta, params: TiltParams):
        self.n = int(n)
        self.beta = float(beta)
        self.params = params
        self.table = table_for(beta, max(self.n, 2))
        self.base = self.table.family
        self.nodes: list[_Node] = []
        self.frontier: list[DyadicSquare] = []
        self._weights = {}
        self._deep = {}
        root = DyadicSquare(0, 0, 0)
        if params.depth > 0 and params.tilted(root):
            self._add(root)
        else:
            self.frontier.append(root)
        i = 0
        while i < len(self.nodes):
            node = self.nodes[i]
            for ch in node.square.children():
                if ch.level < params.depth and params.tilted(ch):
                    node.children.append(self._add(ch))
                else:
                    node.children.append(-1)
                    self.frontier.append(ch)
            i += 1
        for Q in self.frontier:
            self.weight(Q)
        self._pmfs = None

    @property
    def squares(self):
        """Tilted squares followed by frontier squares."""
        return [nd.square for nd in self.nodes] + self.frontier

    def weight(self, Q):
        v = self._weights.get(Q)
        if v is None:
            v = float(self.params.weight(Q))
            lo = -1.0 if self.params.leaf == "linear" else 0.0
            if not lo <= v <= 1.0:
                raise ConfigError(f"weight {v} of {Q} outside [{lo}, 1]")
            self._weights[Q] = v
        return v

    def rate(self, Q):
        return self.params.rate(self.weight(Q))

    def _add(self, Q):
        self.weight(Q)
        k = Q.level
        guess = self.n if k == 0 else int(2 * math.ldexp(self.n, -2 * k) + 64)
        self.nodes.append(_Node(Q, [], min(self.n, guess)))
        return len(self.nodes) - 1

    def _g(self, j_node, ch, length):
        """g_child(a) for a = 0..length-1."""
        lin = self.rate(ch) * np.arange(length, dtype=np.float64)
        if j_node < 0:
            return lin
        c = self.nodes[j_node]
        k = min(length, c.window + 1)
        lin[2:k] = c.log_phi[2:k]
        return lin

    def _build(self):
        xi = self.params.xi
        _check_xi(xi, self.n, np.ones(1))
        for node in reversed(self.nodes):
            M = max(node.window, 1)
            if xi == 0.0:
                node.family = self.base
                node.shift = np.zeros((4, M + 1))
                node.log_phi = np.zeros(M + 1)
                continue
            node.shift = np.stack([self._g(c, ch, M + 1)
                                   for c, ch in zip(node.children, node.square.children())])
            node.family = SplitFamily(*(self.base.x[j][:M + 1] + node.shift[j] for j in range(4)),
                                      M)
            node.log_phi = node.family.log_norm - self.base.log_norm[:M + 1]

    def _child_logp(self, node, hi):
        """Rows m = 0..hi: log P~(t_j = a | m) for each child j.

        A single point is terminal, so row 1 sends nothing to the children.
        """
        fam = node.family
        x = [v[:hi + 1] for v in fam.x]
        l01 = _logconv_block(x[0], x[1], hi)
        l23 = _logconv_block(x[2], x[3], hi)
        others = [_logconv_block(x[1], l23, hi), _logconv_block(x[0], l23, hi),
                  _logconv_block(l01, x[3], hi), _logconv_block(l01, x[2], hi)]
        m = np.arange(hi + 1)[:, None]
        a = np.arange(hi + 1)[None, :]
        out = []
        for j in range(4):
            lp = x[j][a] + others[j][np.clip(m - a, 0, None)] - fam.log_norm[:hi + 1][m]
            lp = np.where(a <= m, lp, -np.inf)
            lp[1, :] = -np.inf
            lp[1, 0] = 0.0
            out.append(lp)
        return out

    def propagate(self):
        """Exact log pmf of the count of every tilted and frontier square."""
        if self._pmfs is not None:
            return self._pmfs
        while True:
            self._build()
            node_pmf, front_pmf = {}, {}
            root = np.full(self.n + 1, -np.inf)
            root[self.n] = 0.0
            if not self.nodes:
                front_pmf[DyadicSquare(0, 0, 0)] = root
                break
            node_pmf[0] = root
            grow = False
            for i, node in enumerate(self.nodes):
                pmf = node_pmf[i]
                if len(pmf) > node.window + 1:
                    if np.any(pmf[node.window + 1:] > PMF_FLOOR):
                        node.window = min(self.n, 2 * node.window)
                        grow = True
                        break
                    pmf = pmf[:node.window + 1]
                keep = np.flatnonzero(pmf > PMF_FLOOR)
                hi = max(int(keep[-1]) if len(keep) else 0, 1)
                pmf = np.concatenate([pmf, np.full(max(0, hi + 1 - len(pmf)), -np.inf)])[:hi + 1]
                node_pmf[i] = pmf
                for j, (lp, ch) in enumerate(zip(self._child_logp(node, hi),
                                                 node.square.children())):
                    child = lse(pmf[:, None] + lp, axis=0)
                    if node.children[j] >= 0:
                        node_pmf[node.children[j]] = child
                    else:
                        front_pmf[ch] = child
            if not grow:
                break
        self._pmfs = (node_pmf, front_pmf)
        return self._pmfs

    def log_mgf(self) -> float:
        """log E[exp(xi M)] under the original law."""
        self.propagate()
        if self.nodes and self.n >= 2:
            return float(self.nodes[0].log_phi[self.n])
        return self.rate(DyadicSquare(0, 0, 0)) * self.n

    def mean_statistic(self) -> float:
        """Tilted expectation of the terminal statistic in per-point mean units."""
        node_pmf, front = self.propagate()
        total = 0.0
        for Q, pmf in front.items():
            c = self.params.mean(self.weight(Q))
            if c != 0.0:
                total += c * float(np.exp(pmf) @ np.arange(len(pmf)))
        for i, node in enumerate(self.nodes):
            pmf = node_pmf.get(i)
            if pmf is not None and len(pmf) > 1:
                total += self.params.mean(self.weight(node.square)) * math.exp(pmf[1])
        return total

    def split_log_ratio(self, node, m, t):
        """log P / P~ of tilted splits of m points into t."""
        g = node.shift[np.arange(4)[None, :], t]
        return node.log_phi[m] - g.sum(axis=1)

    def sample(self, rkeys):
        """Tilted top of the tree for each replica key.

        Returns (replica index, level, ix, iy, count) arrays for the
        terminal squares, which are left to the continuation, and the log
        ratio per replica.
        """
        self.propagate()
        R = len(rkeys)
        rkeys = np.ascontiguousarray(rkeys, dtype=np.uint64)
        lr = np.zeros(R)
        if not self.nodes:
            z = np.zeros(R, dtype=np.int64)
            return np.arange(R), z, z.astype(np.uint64), z.astype(np.uint64), \
                np.full(R, self.n, dtype=np.int64), lr
        out = [[] for _ in range(5)]

        def emit(rep, Q, cnt):
            out[0].append(rep)
            out[1].append(np.full(len(rep), Q.level, dtype=np.int64))
            out[2].append(np.full(len(rep), Q.ix, dtype=np.uint64))
            out[3].append(np.full(len(rep), Q.iy, dtype=np.uint64))
            out[4].append(cnt)

        state = {0: (np.arange(R), np.full(R, self.n, dtype=np.int64))}
        for i, node in enumerate(self.nodes):
            rep, cnt = state.pop(i, (np.zeros(0, np.int64), np.zeros(0, np.int64)))
            Q = node.square
            one = cnt == 1
            if np.any(one):
                emit(rep[one], Q, cnt[one])
            multi = cnt >= 2
            rep, cnt = rep[multi], cnt[multi]
            if len(cnt) == 0:
                continue
            if cnt.max() > node.family.m_max:
                raise NumericError(f"tilted count {cnt.max()} beyond the exact window at {Q}")
            t = node.family.draw(cnt, rng.node_keys(rkeys[rep], Q.level, Q.ix, Q.iy))
            if self.params.xi != 0.0:
                lr[rep] += self.split_log_ratio(node, cnt, t)
            for j, ch in enumerate(Q.children()):
                nz = t[:, j] > 0
                if not np.any(nz):
                    continue
                if node.children[j] >= 0:
                    state[node.children[j]] = (rep[nz], t[nz, j])
                else:
                    emit(rep[nz], ch, t[nz, j])
        if not out[0]:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z.astype(np.uint64), z.astype(np.uint64), z, lr
        return (*(np.concatenate(v) for v in out), lr)

    def _deep_square(self, target, level, ix, iy, need=0):
        key = (level, ix, iy)
        d = self._deep.get(key)
        if d is None:
            Q = DyadicSquare(level, ix, iy)
            cls = target.classify(Q)
            p = target.weight(Q) if cls == 2 else float(cls)
            d = self._deep[key] = _DeepSquare(cls, self.params.rate(p), self.params.mean(p))
        if need >= 2 and (d.family is None or d.family.m_max < need):
            Q = DyadicSquare(level, ix, iy)
            if d.child_rates is None:
                d.child_rates = np.array([self._deep_square(target, c.level, c.ix, c.iy).rate
                                          for c in Q.children()])
            M = max(need, 8 if d.family is None else 2 * d.family.m_max)
            a = np.arange(M + 1, dtype=np.float64)
            d.family = SplitFamily(*(self.base.x[j][:M + 1] + d.child_rates[j] * a
                                     for j in range(4)), M)
        return d

    def continue_tilted(self, target, rkeys, rep, lev, ix, iy, cnt):
        """Region counts below the terminal squares, still tilted near the boundary.

        A square the region decides is counted directly. An undecided square
        with one point puts it in the region with the tilted probability; one
        with more points splits under per-child rates. Returns counts and
        log ratios per replica.
        """
        R = len(rkeys)
        counts = np.zeros(R, dtype=np.int64)
        lr = np.zeros(R)
        xi = self.params.xi
        lev = np.asarray(lev, dtype=np.int64)
        ix = np.asarray(ix, dtype=np.uint64)
        iy = np.asarray(iy, dtype=np.uint64)
        while len(cnt):
            k = int(lev.min())
            if k >= MAX_LEVEL:
                raise NumericError(f"tilted continuation reached level {k}")
            cur = lev == k
            r, x, y, c = rep[cur], ix[cur], iy[cur], cnt[cur]
            rest = ~cur
            rep, lev, ix, iy, cnt = rep[rest], lev[rest], ix[rest], iy[rest], cnt[rest]
            code = (x << np.uint64(32)) | y if k <= 32 else None
            if code is None:
                raise NumericError(f"tilted continuation reached level {k}")
            uq, inv = np.unique(code, return_inverse=True)
            info = [self._deep_square(target, k, int(u >> np.uint64(32)),
                                      int(u & np.uint64(0xFFFFFFFF))) for u in uq]
            cls = np.array([d.cls for d in info])[inv]
            ins = cls == 1
            np.add.at(counts, r[ins], c[ins])
            und = cls == 2
            leaf = und & (c == 1)
            if np.any(leaf):
                keys = _backend.node_keys_at(rkeys[r[leaf]], k, x[leaf], y[leaf])
                u = _backend.uniforms(keys, 0)
                li = inv[leaf]
                q = np.array([d.mean for d in info])[li]
                rt = np.array([d.rate for d in info])[li]
                hit = u < q
                np.add.at(counts, r[leaf], hit.astype(np.int64))
                np.add.at(lr, r[leaf], rt - xi * hit)
            multi = und & (c >= 2)
            if not np.any(multi):
                continue
            nr, nl, nx, ny, nc = [rep], [lev], [ix], [iy], [cnt]
            for g in np.unique(inv[multi]):
                sel = multi & (inv == g)
                rg, cg = r[sel], c[sel]
                X, Y = int(uq[g] >> np.uint64(32)), int(uq[g] & np.uint64(0xFFFFFFFF))
                d = self._deep_square(target, k, X, Y, need=int(cg.max()))
                t = d.family.draw(cg, rng.node_keys(rkeys[rg], k, X, Y))
                np.add.at(lr, rg, d.family.log_norm[cg] - self.base.log_norm[cg]
                          - t @ d.child_rates)
                for j in range(4):
                    nz = t[:, j] > 0
                    if np.any(nz):
                        m = int(nz.sum())
                        nr.append(rg[nz])
                        nl.append(np.full(m, k + 1, dtype=np.int64))
                        nx.append(np.full(m, 2 * X + (j & 1), dtype=np.uint64))
                        ny.append(np.full(m, 2 * Y + (j >> 1), dtype=np.uint64))
                        nc.append(t[nz, j])
            rep, lev, ix, iy, cnt = (np.concatenate(v) for v in (nr, nl, nx, ny, nc))
        return counts, lr


def _region_counts(tree: TiltedTree, target, rkeys):
    rep, lev, ix, iy, cnt, lr = tree.sample(rkeys)
    if tree.params.xi != 0.0:
        got, extra = tree.continue_tilted(target, rkeys, rep, lev, ix, iy, cnt)
        return got, lr + extra
    counts = np.zeros(len(rkeys), dtype=np.int64)
    if len(cnt):
        np.add.at(counts, rep, target.continuation(tree.base, rkeys[rep], lev, ix, iy, cnt))
    return counts, lr


def tilted_counts(n, beta, region, xi, depth, seed, start, count, chunk=DEFAULT_CHUNK):
    """Region counts and log likelihood ratios for replicas start..start+count-1."""
    target = as_target(region)
    tree = TiltedTree(n, beta, target.params(xi, depth))
    cs, ls = [], []
    for s in range(start, start + count, chunk):
        k = min(chunk, start + count - s)
        c, l = _region_counts(tree, target, rng.replica_keys(seed, s, k))
        cs.append(c)
        ls.append(l)
    if not cs:
        return np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(cs), np.concatenate(ls)


def tilted_mean(n, beta, region, xi, depth) -> float:
    """Tilted expectation of the predictable region count at ``depth``.

    Terminal squares contribute their tilted per-point probability of lying
    in the region times their count; this is exact at xi = 0 and for
    single-point squares.
    """
    target = as_target(region)
    return TiltedTree(n, beta, target.params(xi, depth)).mean_statistic()


def tilt_strength_search(n, beta, region, threshold, depth=None, rel_tol=1e-3) -> float:
    """xi whose tilted mean of the predictable region count equals threshold."""
    depth = default_depth(n) if depth is None else depth
    target = as_target(region)
    threshold = float(threshold)
    if not 0.0 < threshold < n:
        raise BracketError(f"threshold {threshold} outside the attainable mean range (0, {n})")

    def f(x):
        return tilted_mean(n, beta, target, x, depth) - threshold

    f0 = f(0.0)
    if abs(f0) <= rel_tol * threshold:
        return 0.0
    sign = 1.0 if f0 < 0 else -1.0
    lo, hi = 0.0, sign * 0.25
    f_hi = f(hi)
    while f_hi * f0 > 0:
        lo = hi
        hi *= 2.0
        if abs(hi) * n > LOG_RANGE:
            raise BracketError(f"no tilt reaches mean {threshold}")
        f_hi = f(hi)
    a, b = sorted((lo, hi))
    return float(optimize.brentq(f, a, b, xtol=1e-10, rtol=rel_tol * 1e-3, maxiter=200))


def _weighted_estimate(hit, lr):
    """log of mean(1_A e^lr), relative standard error, and weight ESS."""
    N = len(lr)
    if not np.any(hit):
        return LogReal.zero(), math.inf, 0.0
    l = lr[hit]
    mx = l.max()
    w = np.exp(l - mx)
    s1 = w.sum()
    s2 = (w * w).sum()
    log_est = mx + math.log(s1) - math.log(N)
    m1 = s1 / N
    var = max(s2 / N - m1 * m1, 0.0)
    rel = math.sqrt(var / N) / m1
    return LogReal.from_log(log_est), rel, s1 * s1 / s2


def tilted_one_sided(n, beta, region, level, upper, xi, depth, replicas, seed=0):
    """Estimate of P[count >= level] (upper) or P[count <= level] under tilt xi."""
    counts, lr = tilted_counts(n, beta, region, xi, depth, seed, 0, replicas)
    hit = counts >= level if upper else counts <= level
    est, rel, ess = _weighted_estimate(hit, lr)
    return est, rel, ess, int(hit.sum())


def tilted_tail_estimate(n, beta, D: DiskRegion, threshold, xi=None, depth=None,
                         replicas=10_000, seed=0, **meta) -> TailReport:
    """P[|mu_n(D) - n Leb(D)| >= threshold] as a sum of two tilted one-sided estimates.

    ``xi`` is a pair (upper, lower) of tilt strengths, a single value for
    both sides (the lower side uses its negative), or None to choose each by
    mean matching at the corresponding side of the threshold.
    """
    if replicas < 1:
        raise ConfigError(f"replicas must be at least 1, got {replicas}")
    depth = default_depth(n) if depth is None else depth
    if depth < ell_level(D.radius):
        raise ConfigError(f"depth {depth} is above the disk's level {ell_level(D.radius)}")
    mean = n * D.area
    up_level = mean + threshold
    lo_level = mean - threshold
    if xi is None:
        xi_u = tilt_strength_search(n, beta, D, min(up_level, n * (1 - 1e-9)), depth) \
            if up_level <= n else 0.0
        xi_l = tilt_strength_search(n, beta, D, max(lo_level, 1e-9), depth) \
            if lo_level >= 0 else 0.0
    elif np.ndim(xi) == 0:
        xi_u, xi_l = float(xi), -float(xi)
    else:
        xi_u, xi_l = (float(v) for v in xi)
    parts = []
    hits = 0
    ess = []
    for upper, level, x in ((True, up_level, xi_u), (False, lo_level, xi_l)):
        if (upper and level > n) or (not upper and level < 0):
            continue
        k = math.ceil(level - 1e-9) if upper else math.floor(level + 1e-9)
        est, rel, e, h = tilted_one_sided(n, beta, D, k, upper, x, depth, replicas, seed)
        parts.append((est, rel))
        if h:
            ess.append(e)
        hits += h
    total = LogReal.zero()
    for est, _ in parts:
        total = total + est
    if total.sign == 0:
        rel_total = 0.0
    else:
        abs_logs = [est.logmag + math.log(rel) for est, rel in parts
                    if est.sign > 0 and rel > 0 and math.isfinite(rel)]
        rel_total = (math.exp(0.5 * lse(2.0 * np.array(abs_logs)) - total.logmag)
                     if abs_logs else 0.0)
    ess_min = min(ess) if ess else 0.0
    if ess_min < ESS_WARN_FRACTION * replicas and hits > 0:
        warnings.warn(f"importance-weight ESS {ess_min:.1f} is below "
                      f"{ESS_WARN_FRACTION:.0%} of {replicas} replicas; the tilt strength is "
                      "poorly matched to the threshold",
                      DegeneracyWarning)
    return TailReport(float(threshold), total, rel_total, replicas, "tilted", "log", hits,
                      total.sign == 0, ess_min, (xi_u, xi_l),
                      **{"n": n, "beta": float(beta), **meta})


@dataclass
class Outcomes:
    """Every outcome of the tilted top of a small tree."""

    squares: list            # tilted squares, then frontier squares
    counts: np.ndarray       # (K, len(squares)) terminal counts, zero if not terminal
    log_p: np.ndarray        # original law, from log_split_prob
    log_p_tilted: np.ndarray
    log_ratio: np.ndarray    # as accumulated by the sampler

    def statistic(self, weights):
        return self.counts @ np.asarray(weights, dtype=np.float64)


def enumerate_outcomes(tree: TiltedTree) -> Outcomes:
    """Exhaustive list of tilted-part outcomes with both probabilities.

    Original probabilities are evaluated term by term from the partition
    table; tilted probabilities and ratios come from the tilted families.
    """
    tree.propagate()
    nodes = tree.nodes
    table = tree.table
    squares = tree.squares
    nn = len(nodes)
    if not nodes:
        return Outcomes(squares, np.full((1, 1), tree.n), np.zeros(1), np.zeros(1),
                        np.zeros(1))
    cnt = np.zeros((1, len(squares)), dtype=np.int64)
    cnt[0, 0] = tree.n
    lp = np.zeros(1)
    lpt = np.zeros(1)
    lr = np.zeros(1)
    front_index = {Q: nn + i for i, Q in enumerate(tree.frontier)}
    for i, node in enumerate(nodes):
        m_all = cnt[:, i].copy()
        rows, T_all, a_lp, a_lpt, a_lr = [], [], [], [], []
        for m in np.unique(m_all):
            idx = np.flatnonzero(m_all == m)
            if m >= 2:
                T = compositions(int(m))
                olp = np.array([log_split_prob(table, int(m), t).logmag for t in T])
                tlp = node.family.log_prob(T)
                rat = tree.split_log_ratio(node, m, T)
            else:
                T = np.zeros((1, 4), dtype=np.int64)
                olp = tlp = rat = np.zeros(1)
            rows.append(np.repeat(idx, len(T)))
            T_all.append(np.tile(T, (len(idx), 1)))
            a_lp.append(np.tile(olp, len(idx)))
            a_lpt.append(np.tile(tlp, len(idx)))
            a_lr.append(np.tile(rat, len(idx)))
        rows = np.concatenate(rows)
        T_all = np.concatenate(T_all)
        cnt = cnt[rows]
        lp = lp[rows] + np.concatenate(a_lp)
        lpt = lpt[rows] + np.concatenate(a_lpt)
        lr = lr[rows] + np.concatenate(a_lr)
        cnt[cnt[:, i] >= 2, i] = 0
        for j, ch in enumerate(node.square.children()):
            col = node.children[j] if node.children[j] >= 0 else front_index[ch]
            cnt[:, col] = T_all[:, j]
    return Outcomes(squares, cnt, lp, lpt, lr)


@dataclass
class RademacherReport:
    N: int
    gamma: float
    xi: float
    threshold: float
    estimate: float
    stderr: float
    exact: float
    envelope: float
    replicas: int


def rademacher_demo(N, gamma, replicas, eta=0.05, epsilon=0.2, seed=0) -> RademacherReport:
    """Tilted estimate of P[S_N >= N^gamma] for a sum of N fair signs.

    Uses the schedule xi = N^(gamma - 1 + eta); under the tilt each sign is
    +1 with probability e^xi / (e^xi + e^-xi), and the likelihood ratio is
    exp(-xi S_N) cosh(xi)^N.
    """
    if not 0.5 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (1/2, 1), got {gamma}")
    if N < 16:
        raise ConfigError(f"N must be at least 16, got {N}")
    if replicas < 1:
        raise ConfigError(f"replicas must be at least 1, got {replicas}")
    xi = N ** (gamma - 1.0 + eta)
    thr = N ** gamma
    g = rng.numpy_generator(seed, 0x52414445)
    p = math.exp(xi) / (math.exp(xi) + math.exp(-xi))
    S = 2 * g.binomial(N, p, size=replicas) - N
    lr = -xi * S + N * math.log(math.cosh(xi))
    y = np.where(S >= thr, np.exp(lr), 0.0)
    k_min = math.ceil((thr + N) / 2 - 1e-12)
    exact = float(sps.binom.sf(k_min - 1, N, 0.5))
    return RademacherReport(N, gamma, xi, thr, float(y.mean()),
                            float(y.std(ddof=1) / math.sqrt(replicas)), exact,
                            math.exp(-N ** (2 * gamma - 1 + epsilon)), replicas)
