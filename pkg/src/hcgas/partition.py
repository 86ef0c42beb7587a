"""Partition functions and split laws of the hierarchical gas, in log space.

Given that a dyadic square holds m points, its four children receive counts
t = (t1, t2, t3, t4) with probability

    P(t | m) = 4^-m e^{-beta C(m,2)} m!/(t1! t2! t3! t4!) prod_j Z(t_j) / Z(m).

Summing over all compositions of m and requiring total mass one gives the
recursion

    Z(m) = 4^-m e^{-beta C(m,2)} sum_t m!/(t1!..t4!) prod_j Z(t_j).

With a_t = Z(t)/t! and q_m = 4^-m e^{-beta C(m,2)} this reads a_m = q_m C_m
where C_m = sum_t prod_j a_{t_j}. Exactly four compositions contain the
part m itself, so C_m = 4 a_m + C'_m with C'_m free of a_m and

    a_m = q_m C'_m / (1 - 4 q_m).

C'_m is assembled from the two-part convolution B_m = sum_{i+j=m} a_i a_j via
C_m = sum_i B_i B_{m-i}; each step costs O(m), so the whole table is O(N^2).
The result is checked forward by ``normalization_residual``, which enumerates
every composition.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import _backend
from .errors import (CacheVersionError, ConfigError, HypothesisError, ResourceError,
                     SupportError)
from .logreal import LogReal, lse
from .outputs import write_csv

log = logging.getLogger(__name__)

LOG4 = math.log(4.0)
DEFAULT_N_MAX = 256
DEFAULT_CEILING = 8192
MGF_CEILING = 128
# pmf entries below this are cut from the tails of sampling tables; a
# 53-bit uniform resolves nothing smaller than ~1.1e-16 anyway
TAIL_CUT = 1e-25

CACHE_MAGIC = b"HCGZTAB\x00"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sIdQ")


def log_q(n, beta):
    """log(4^-n e^{-beta C(n,2)})."""
    n = np.asarray(n, dtype=np.float64)
    return -n * LOG4 - beta * n * (n - 1.0) / 2.0


def _check_beta(beta):
    beta = float(beta)
    if not math.isfinite(beta) or beta < 0:
        raise ConfigError(f"beta must be a finite nonnegative real, got {beta}")
    return beta


def _solve_la(beta, n_max):
    la = np.full(n_max + 1, -np.inf)
    lb = np.full(n_max + 1, -np.inf)
    la[0] = 0.0
    lb[0] = 0.0
    if n_max >= 1:
        la[1] = 0.0
        lb[1] = math.log(2.0)
    log2 = math.log(2.0)
    for n in range(2, n_max + 1):
        lq = -n * LOG4 - beta * n * (n - 1) / 2.0
        bp = lse(la[1:n] + la[n - 1:0:-1])
        cp = np.logaddexp(log2 + bp, lse(lb[1:n] + lb[n - 1:0:-1]))
        la[n] = lq + cp - math.log1p(-4.0 * math.exp(lq))
        lb[n] = np.logaddexp(bp, log2 + la[n])
    return la


def logconv(x, y, m_max):
    """out[s] = log sum_{i+j=s} exp(x[i] + y[j]) for s = 0..m_max."""
    out = np.empty(m_max + 1)
    for s in range(m_max + 1):
        out[s] = lse(x[:s + 1] + y[s::-1])
    return out


class SplitFamily:
    """Sequential sampling tables for product-form laws on compositions.

    For every m <= m_max the law is P(t | m) proportional to
    exp(x0[t1] + x1[t2] + x2[t3] + x3[t4]). It is sampled as t1, then t2 given
    the remainder, then t3; each stage is a one-dimensional inverse CDF over
    ``cdf[off[b]:off[b+1]]`` whose first entry is the value ``lo[b]``, with
    block index b = stage * (m_max + 1) + remaining count.
    """

    def __init__(self, x0, x1, x2, x3, m_max, tail_cut=TAIL_CUT):
        xs = [np.ascontiguousarray(x[:m_max + 1], dtype=np.float64) for x in (x0, x1, x2, x3)]
        self.m_max = int(m_max)
        self.x = xs
        s3 = logconv(xs[2], xs[3], m_max)
        s2 = logconv(xs[1], s3, m_max)
        s1 = logconv(xs[0], s2, m_max)
        self.tails = (s2, s3, xs[3])
        self.log_norm = s1
        self.tail_cut = tail_cut

    @cached_property
    def tables(self):
        """(cdf, off, lo) arrays consumed by the sampling kernels."""
        M = self.m_max
        tail_cut = self.tail_cut
        stride = M + 1
        blocks, los = [], np.zeros(3 * stride, dtype=np.int64)
        off = np.zeros(3 * stride + 1, dtype=np.int64)
        pos = 0
        for f in range(3):
            head, tail = self.x[f], self.tails[f]
            for m in range(M + 1):
                w = head[:m + 1] + tail[m::-1]
                p = np.exp(w - lse(w))
                keep = np.flatnonzero(p > tail_cut)
                a, b = keep[0], keep[-1] + 1
                c = np.cumsum(p[a:b])
                c /= c[-1]
                c[-1] = 1.0
                blocks.append(c)
                los[f * stride + m] = a
                pos += b - a
                off[f * stride + m + 1] = pos
        return np.concatenate(blocks), off, los

    def log_weight(self, t):
        t = np.asarray(t, dtype=np.int64)
        return sum(self.x[j][t[..., j]] for j in range(4))

    def log_prob(self, t):
        """Exact log-probability of composition(s) t, shape (..., 4)."""
        t = np.asarray(t, dtype=np.int64)
        return self.log_weight(t) - self.log_norm[t.sum(axis=-1)]

    def draw(self, m, keys):
        """Child counts for counts m driven by node keys (one row each)."""
        return _backend.split_draw(np.ascontiguousarray(m, dtype=np.int64),
                                   np.ascontiguousarray(keys, dtype=np.uint64), *self.tables)

    def law(self, n) -> SplitLaw:
        return SplitLaw(self, n)


class SplitLaw:
    """Exact law of the four child counts of a square holding n points."""

    def __init__(self, family: SplitFamily, n: int):
        if not 0 <= n <= family.m_max:
            raise IndexError(f"count {n} outside table range 0..{family.m_max}")
        self.family = family
        self.n = int(n)

    def log_prob(self, t) -> float:
        t = np.asarray(t, dtype=np.int64)
        if t.shape[-1] != 4 or np.any(t < 0) or np.any(t.sum(axis=-1) != self.n):
            raise SupportError(f"{t.tolist()} is not a composition of {self.n}")
        return self.family.log_prob(t)

    def prob(self, t) -> float:
        return np.exp(self.log_prob(t))

    def marginal_t1(self):
        """log P(t1 = a) for a = 0..n."""
        f = self.family
        n = self.n
        return f.x[0][:n + 1] + f.tails[0][n::-1] - f.log_norm[n]

    def conditional_t2(self, t1):
        """log P(t2 = b | t1) for b = 0..n-t1."""
        f = self.family
        r = self.n - t1
        w = f.x[1][:r + 1] + f.tails[1][r::-1]
        return w - lse(w)

    def conditional_t3(self, t1, t2):
        f = self.family
        r = self.n - t1 - t2
        w = f.x[2][:r + 1] + f.tails[2][r::-1]
        return w - lse(w)

    def support(self):
        return compositions(self.n)

    def joint(self):
        """(compositions, log-probabilities); materializes O(n^3) rows."""
        T = compositions(self.n)
        return T, self.family.log_prob(T)


@lru_cache(maxsize=64)
def _compositions(n):
    rows = []
    for a in range(n + 1):
        for b in range(n - a + 1):
            c = np.arange(n - a - b + 1)
            blk = np.empty((len(c), 4), dtype=np.int64)
            blk[:, 0], blk[:, 1], blk[:, 2], blk[:, 3] = a, b, c, n - a - b - c
            rows.append(blk)
    T = np.concatenate(rows)
    T.setflags(write=False)
    return T


def compositions(n):
    """All (t1,t2,t3,t4) >= 0 with sum n, in lexicographic order."""
    return _compositions(int(n))


class PartitionTable:
    """log Z(n, beta) for n = 0..n_max, plus derived split-law tables."""

    def __init__(self, beta, la):
        self.beta = float(beta)
        la = np.array(la, dtype=np.float64)
        la.setflags(write=False)
        self.la = la
        self.n_max = len(la) - 1

    @cached_property
    def logZ(self):
        z = self.la + gammaln(np.arange(self.n_max + 1) + 1.0)
        z.setflags(write=False)
        return z

    @cached_property
    def log_split_norm(self):
        """log of sum over compositions of prod_j Z(t_j)/t_j!, per n."""
        c = self.la - log_q(np.arange(self.n_max + 1), self.beta)
        c.setflags(write=False)
        return c

    def log_z(self, n) -> LogReal:
        return LogReal.from_log(self.logZ[n])

    @cached_property
    def family(self) -> SplitFamily:
        return SplitFamily(self.la, self.la, self.la, self.la, self.n_max)

    def header(self):
        return _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, self.beta, self.n_max)

    @cached_property
    def checksum(self):
        return hashlib.sha256(self.header() + self.la.astype("<f8").tobytes()).hexdigest()

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = self.header() + self.la.astype("<f8").tobytes()
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(body + hashlib.sha256(body).digest())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> PartitionTable:
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size + 32:
            raise ResourceError(f"{path}: truncated partition cache")
        magic, version, beta, n_max = _HEADER.unpack_from(raw)
        if magic != CACHE_MAGIC:
            raise ResourceError(f"{path}: not a partition cache file")
        if version != CACHE_VERSION:
            raise CacheVersionError(
                f"{path}: cache format version {version}, this build reads {CACHE_VERSION}; "
                "rerun with --rebuild to regenerate it")
        body, digest = raw[:-32], raw[-32:]
        if len(body) != _HEADER.size + 8 * (n_max + 1):
            raise ResourceError(f"{path}: payload size does not match header")
        if hashlib.sha256(body).digest() != digest:
            raise ResourceError(f"{path}: checksum mismatch, cache is corrupt")
        la = np.frombuffer(body, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        return cls(beta, la)

    def to_csv(self, path):
        write_csv(path, ["n", "logZ"], ((n, float(v)) for n, v in enumerate(self.logZ)))


def build_partition_table(beta, n_max=DEFAULT_N_MAX, ceiling=DEFAULT_CEILING) -> PartitionTable:
    """Exact table of log Z(n, beta), n <= n_max. Runs in O(n_max^2)."""
    beta = _check_beta(beta)
    n_max = int(n_max)
    if n_max < 2:
        raise ConfigError(f"n_max must be at least 2, got {n_max}")
    if n_max > ceiling:
        raise ResourceError(
            f"n_max={n_max} exceeds the table ceiling {ceiling}; raise the ceiling explicitly "
            "if this size is intended")
    return PartitionTable(beta, _solve_la(beta, n_max))


def cache_file(cache_dir, beta, n_max):
    return Path(cache_dir) / f"logz_beta{float(beta)!r}_n{int(n_max)}_v{CACHE_VERSION}.bin"


def cached_partition_table(beta, n_max, cache, rebuild=False, ceiling=DEFAULT_CEILING):
    """Load the table from ``cache`` or build and store it.

    ``cache`` is a file path, or a directory in which a file named after
    (beta, n_max, format version) is used. Returns (table, loaded_from_cache).
    """
    path = Path(cache)
    if path.is_dir():
        path = cache_file(path, beta, n_max)
    if path.exists() and not rebuild:
        table = PartitionTable.load(path)
        if table.beta == float(beta) and table.n_max == int(n_max):
            log.info("loaded partition table from %s", path)
            return table, True
        log.info("cache %s holds beta=%r n_max=%d; rebuilding", path, table.beta, table.n_max)
    table = build_partition_table(beta, n_max, ceiling=ceiling)
    table.save(path)
    log.info("built partition table beta=%r n_max=%d into %s", table.beta, table.n_max, path)
    return table, False


def _check_n(table, n):
    if not 0 <= n <= table.n_max:
        raise IndexError(f"count {n} outside table range 0..{table.n_max}")


def log_split_prob(table: PartitionTable, n: int, t) -> LogReal:
    """log P(child counts = t | n points), evaluated term by term."""
    _check_n(table, n)
    t = [int(v) for v in t]
    if len(t) != 4 or min(t) < 0 or sum(t) != n:
        raise SupportError(f"{t} is not a composition of {n}")
    for v in t:
        _check_n(table, v)
    val = (float(log_q(n, table.beta)) + gammaln(n + 1.0)
           - sum(gammaln(v + 1.0) for v in t)
           + sum(table.logZ[v] for v in t) - table.logZ[n])
    return LogReal.from_log(val)


def split_law(table: PartitionTable, n: int) -> SplitLaw:
    _check_n(table, n)
    return table.family.law(n)


def _counts_from_discrepancy(n, k):
    k = np.asarray(k, dtype=np.float64)
    t = n / 4.0 + k
    ti = np.rint(t)
    if k.shape != (4,) or np.any(np.abs(t - ti) > 1e-9) or np.any(ti < 0):
        raise SupportError(f"n/4 + k = {t.tolist()} is not a vector of nonnegative integers")
    if int(ti.sum()) != n:
        raise SupportError(f"discrepancies {k.tolist()} do not sum to zero")
    return ti.astype(np.int64)


def top_level_discrepancy_prob(table: PartitionTable, n: int, k) -> LogReal:
    """P[(X_1..X_4) = k] where X_j = t_j - n/4."""
    return log_split_prob(table, n, _counts_from_discrepancy(n, k))


def _support_logp(table, n):
    _check_n(table, n)
    if n > MGF_CEILING:
        raise ResourceError(f"exact enumeration limited to n <= {MGF_CEILING}, got {n}")
    T = compositions(n)
    return T, table.family.log_prob(T)


def exact_mgf_linear(table: PartitionTable, n: int, lam) -> LogReal:
    """E[exp(sum_j lam_j X_j)] by enumeration of the full support."""
    lam = np.asarray(lam, dtype=np.float64)
    T, lp = _support_logp(table, n)
    return LogReal.from_log(lse(lp + (T - n / 4.0) @ lam))


def exact_mgf_quadratic(table: PartitionTable, n: int, s) -> LogReal:
    """E[exp(sum_j s_j X_j^2)] by enumeration; requires ||s|| < beta/2."""
    s = np.asarray(s, dtype=np.float64)
    if np.linalg.norm(s) >= table.beta / 2.0:
        raise HypothesisError(f"||s|| = {np.linalg.norm(s):.6g} must be below beta/2 = {table.beta / 2}")
    T, lp = _support_logp(table, n)
    return LogReal.from_log(lse(lp + ((T - n / 4.0) ** 2) @ s))


def normalization_residual(table: PartitionTable, n: int) -> float:
    """log(total split mass at n), recomputed by visiting every composition.

    Zero up to rounding when the table satisfies its defining recursion.
    """
    _check_n(table, n)
    g = np.ascontiguousarray(table.logZ - gammaln(np.arange(table.n_max + 1) + 1.0))
    lhs = gammaln(n + 1.0) + _backend.composition_lse(g, n)
    rhs = table.logZ[n] + n * LOG4 + table.beta * n * (n - 1) / 2.0
    return float(lhs - rhs)


def jensen_gap(table: PartitionTable) -> np.ndarray:
    """log Z(n) minus the lower bound -(2 beta / 3) n^2 + (2 beta / 3) n, per n."""
    n = np.arange(table.n_max + 1, dtype=np.float64)
    c = 2.0 * table.beta / 3.0
    return table.logZ - (-c * n * n + c * n)


def envelope_ratio(table: PartitionTable, n_min=2) -> np.ndarray:
    """|log Z(n) + (2 beta / 3) n^2| / (n log n) for n = n_min..n_max."""
    n = np.arange(max(n_min, 2), table.n_max + 1, dtype=np.float64)
    return np.abs(table.logZ[n.astype(np.int64)] + 2.0 * table.beta / 3.0 * n * n) / (n * np.log(n))


def split_envelope_sup(table: PartitionTable, n: int) -> float:
    """Smallest C with log P(k) + (2 beta / 3) sum k_j^2 <= C log(n + 1) sum |k_j|.

    The sup runs over support points with k != 0; at k = 0 the bound only
    needs log P <= 0.
    """
    T, lp = _support_logp(table, n)
    k = T - n / 4.0
    l1 = np.abs(k).sum(axis=1)
    nz = l1 > 1e-12
    lhs = lp[nz] + 2.0 * table.beta / 3.0 * (k[nz] ** 2).sum(axis=1)
    return float(np.max(lhs / (math.log(n + 1.0) * l1[nz])))


_TABLES: dict = {}


def install_table(table: PartitionTable):
    """Make ``table`` the shared in-process table for its beta."""
    cur = _TABLES.get(table.beta)
    if cur is None or cur.n_max <= table.n_max:
        _TABLES[table.beta] = table


def table_for(beta, n) -> PartitionTable:
    """Shared in-process table for beta covering counts up to n."""
    beta = _check_beta(beta)
    t = _TABLES.get(beta)
    if t is None or t.n_max < n:
        t = build_partition_table(beta, max(int(n), DEFAULT_N_MAX))
        _TABLES[beta] = t
    return t
