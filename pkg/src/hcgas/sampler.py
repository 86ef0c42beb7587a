"""Exact sampling by recursive splitting down the dyadic tree.

Given the count m of a square, its four child counts follow the split law
for m, independently of everything outside the square; a square holding a
single point places it uniformly. Every node draws from its own counter
stream (see ``rng``), so the functions below that only look at part of the
tree reproduce the full sampler's values exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, rng
from .energy import Configuration
from .errors import ConfigError
from .hierarchy import DiskRegion, DyadicSquare
from .parallel import map_replicas
from .partition import PartitionTable, SplitFamily, table_for

DEFAULT_MAX_DEPTH = 64


@dataclass(frozen=True)
class SamplerSpec:
    n: int
    beta: float
    seed: int
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError(f"n must be nonnegative, got {self.n}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError(f"beta must be a finite nonnegative real, got {self.beta}")
        if not 1 <= self.max_depth <= 64:
            raise ConfigError(f"max_depth must lie in 1..64, got {self.max_depth}")


@dataclass
class CountTree:
    """Occupied squares in preorder, down to squares holding one point.

    ``points`` holds each single-point square's point, in the same preorder.
    """

    levels: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    counts: np.ndarray
    points: np.ndarray = field(repr=False)
    root_key: int = 0

    @property
    def n(self) -> int:
        return int(self.counts[0]) if len(self.counts) else 0

    def __len__(self):
        return len(self.counts)

    def as_dict(self):
        return {DyadicSquare(int(l), int(x), int(y)): int(c)
                for l, x, y, c in zip(self.levels, self.ix, self.iy, self.counts)}

    def is_consistent(self) -> bool:
        """Every internal node's count equals the sum over its children."""
        d = self.as_dict()
        for Q, c in d.items():
            if c >= 2:
                if sum(d.get(ch, 0) for ch in Q.children()) != c:
                    return False
            elif any(ch in d for ch in Q.children()):
                return False
        return True

    def counts_at_level(self, k):
        """{square: count} for occupied level-k squares, descending into leaves."""
        out = {}
        for Q, c in self.as_dict().items():
            if Q.level == k:
                out[Q] = c
        leaf = (self.counts == 1) & (self.levels < k)
        for x, y in self.points[leaf[self.counts == 1]]:
            Q = DyadicSquare(k, int(math.ldexp(x, k)), int(math.ldexp(y, k)))
            out[Q] = out.get(Q, 0) + 1
        return out

    def write_text(self, path):
        with open(path, "w") as fh:
            for l, x, y, c in zip(self.levels, self.ix, self.iy, self.counts):
                fh.write(f"{l} {x} {y} {c}\n")


def _family(spec, table):
    if table is None:
        table = table_for(spec.beta, max(spec.n, 2))
    elif table.beta != float(spec.beta):
        raise ConfigError(f"table is for beta={table.beta}, spec wants {spec.beta}")
    elif table.n_max < spec.n:
        raise ConfigError(f"table covers n <= {table.n_max}, spec wants {spec.n}")
    return table.family


def _tree(family: SplitFamily, rkey, n, max_depth, level=0, ix=0, iy=0):
    L, X, Y, C, PX, PY = _backend.sample_tree(int(rkey), int(n), *family.tables, int(max_depth),
                                              int(level), int(ix), int(iy))
    return CountTree(L, X, Y, C, np.stack([PX, PY], axis=1),
                     rng.node_key(rkey, level, ix, iy))


def sample_count_tree(spec: SamplerSpec, table: PartitionTable | None = None,
                      replica: int = 0) -> CountTree:
    family = _family(spec, table)
    return _tree(family, rng.replica_key(spec.seed, replica), spec.n, spec.max_depth)


def realize_points(tree: CountTree, spec: SamplerSpec | None = None) -> Configuration:
    """Leaf points in a uniformly random order drawn from the root stream."""
    n = len(tree.points)
    if n <= 1:
        return Configuration(tree.points)
    order = np.argsort(rng.stream(tree.root_key, 3, n), kind="stable")
    return Configuration(tree.points[order])


def sample_configuration(spec: SamplerSpec, table: PartitionTable | None = None,
                         replica: int = 0) -> Configuration:
    return realize_points(sample_count_tree(spec, table, replica), spec)


def resample_subtree(family: SplitFamily, rkey, square: DyadicSquare, count: int,
                     max_depth=DEFAULT_MAX_DEPTH) -> CountTree:
    """Fresh subtree below a square with a given count, from replica key rkey."""
    return _tree(family, rkey, count, max_depth, square.level, square.ix, square.iy)


def sample_configurations(n, beta, seed, start, count, table=None):
    spec = SamplerSpec(n, beta, seed)
    return [sample_configuration(spec, table, r) for r in range(start, start + count)]


def top_split_counts(n, beta, seed, start, count, table=None):
    """Level-1 count vectors of replicas start..start+count-1, shape (count, 4)."""
    family = _family(SamplerSpec(n, beta, seed), table)
    rk = rng.replica_keys(seed, start, count)
    if n < 2:
        out = np.zeros((count, 4), dtype=np.int64)
        if n == 1:
            keys = rng.node_keys(rk, 0, 0, 0)
            u = _backend.uniforms(keys, 0), _backend.uniforms(keys, 1)
            out[np.arange(count), (u[0] >= 0.5) + 2 * (u[1] >= 0.5)] = 1
        return out
    return family.draw(np.full(count, n), rng.node_keys(rk, 0, 0, 0))


def _leaf_points(keys, level, ix, iy):
    side = math.ldexp(1.0, -level)
    out = []
    for idx, c in ((ix, 0), (iy, 1)):
        v = idx.astype(np.float64) * side + _backend.uniforms(keys, c) * side
        hi = (idx + 1).astype(np.float64) * side
        out.append(np.where(v >= hi, np.nextafter(hi, 0.0), v))
    return out


def level_counts(n, beta, seed, start, count, level, table=None):
    """Counts of every level-k square, shape (count, 2^k, 2^k) indexed [r, ix, iy]."""
    family = _family(SamplerSpec(n, beta, seed), table)
    m = 1 << level
    out = np.zeros((count, m, m), dtype=np.int64)
    rk = rng.replica_keys(seed, start, count)
    rep = np.arange(count)
    cnt = np.full(count, n, dtype=np.int64)
    sx = np.zeros(count, dtype=np.uint64)
    sy = np.zeros(count, dtype=np.uint64)
    for k in range(level):
        keys = _backend.node_keys_at(rk[rep], k, sx, sy)
        single = cnt == 1
        if np.any(single):
            px, py = _leaf_points(keys[single], k, sx[single], sy[single])
            np.add.at(out, (rep[single], np.floor(np.ldexp(px, level)).astype(np.int64),
                            np.floor(np.ldexp(py, level)).astype(np.int64)), 1)
        multi = cnt >= 2
        rep, cnt, sx, sy, keys = rep[multi], cnt[multi], sx[multi], sy[multi], keys[multi]
        t = family.draw(cnt, keys)
        j = np.repeat(np.arange(4)[None, :], len(cnt), axis=0)
        keep = t > 0
        rows = np.nonzero(keep)[0]
        jj = j[keep].astype(np.uint64)
        rep = rep[rows]
        cnt = t[keep]
        sx = 2 * sx[rows] + (jj & np.uint64(1))
        sy = 2 * sy[rows] + (jj >> np.uint64(1))
    np.add.at(out, (rep, sx.astype(np.int64), sy.astype(np.int64)), cnt)
    return out


def path_counts(n, beta, seed, start, count, square: DyadicSquare, table=None):
    """Counts of the ancestors of ``square`` (levels 0..j), shape (count, j+1)."""
    family = _family(SamplerSpec(n, beta, seed), table)
    j = square.level
    out = np.zeros((count, j + 1), dtype=np.int64)
    rk = rng.replica_keys(seed, start, count)
    cnt = np.full(count, n, dtype=np.int64)
    point = np.full((count, 2), np.nan)
    out[:, 0] = cnt
    for k in range(j):
        ax, ay = square.ix >> (j - k), square.iy >> (j - k)
        child = ((square.ix >> (j - k - 1)) & 1) + 2 * ((square.iy >> (j - k - 1)) & 1)
        keys = rng.node_keys(rk, k, ax, ay)
        single = (cnt == 1) & np.isnan(point[:, 0])
        if np.any(single):
            px, py = _leaf_points(keys[single], k, np.full(single.sum(), ax, dtype=np.uint64),
                                  np.full(single.sum(), ay, dtype=np.uint64))
            point[single] = np.stack([px, py], axis=1)
        nxt = np.zeros(count, dtype=np.int64)
        multi = cnt >= 2
        if np.any(multi):
            nxt[multi] = family.draw(cnt[multi], keys[multi])[:, child]
        has_pt = ~np.isnan(point[:, 0])
        if np.any(has_pt):
            cx = np.floor(np.ldexp(point[has_pt, 0], k + 1)).astype(np.int64)
            cy = np.floor(np.ldexp(point[has_pt, 1], k + 1)).astype(np.int64)
            ok = (cx == square.ix >> (j - k - 1)) & (cy == square.iy >> (j - k - 1))
            nxt[has_pt] = ok.astype(np.int64)
            point[np.flatnonzero(has_pt)[~ok]] = np.nan
        cnt = nxt
        out[:, k + 1] = cnt
    return out


def _disk_chunk(start, count, n, beta, seed, disk, max_depth):
    family = table_for(beta, max(n, 2)).family
    rk = rng.replica_keys(seed, start, count)
    zeros = np.zeros(count, dtype=np.uint64)
    return _backend.disk_counts(rk, np.full(count, n, dtype=np.int64),
                                np.zeros(count, dtype=np.int64), zeros, zeros.copy(),
                                *family.tables, max_depth, disk.center[0], disk.center[1],
                                disk.radius)


def disk_counts(n, beta, seed, start, count, disk: DiskRegion, workers=1,
                max_depth=DEFAULT_MAX_DEPTH):
    """mu_n(D) for replicas start..start+count-1, sampling only near the circle."""
    return map_replicas(_disk_chunk, start, count, n, float(beta), seed, disk, max_depth,
                        workers=workers)


def subtree_disk_counts(family: SplitFamily, rkeys, squares, counts, disk: DiskRegion,
                        max_depth=DEFAULT_MAX_DEPTH):
    """Per-item points in D for subtrees rooted at given squares and counts."""
    return _backend.disk_counts(
        np.ascontiguousarray(rkeys, dtype=np.uint64),
        np.ascontiguousarray(counts, dtype=np.int64),
        np.asarray([Q.level for Q in squares], dtype=np.int64),
        np.asarray([Q.ix for Q in squares], dtype=np.uint64),
        np.asarray([Q.iy for Q in squares], dtype=np.uint64),
        *family.tables, max_depth, disk.center[0], disk.center[1], disk.radius)
