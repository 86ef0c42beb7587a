"""Charge fluctuations: disk discrepancies, variances, tails and exponent fits."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, InsufficientDataError, LevelError, DomainError
from .hierarchy import (DiskRegion, DyadicSquare, classify_level, ell_level, relative_area,
                        squares_by_class)
from .logreal import LogReal, lse
from .outputs import write_csv
from .partition import log_split_prob, table_for
from .sampler import (SamplerSpec, disk_counts, path_counts, sample_count_tree,
                      subtree_disk_counts)


@dataclass(frozen=True)
class DiscrepancyStat:
    disk: DiskRegion
    count: int
    expected: float
    delta: float


def disk_discrepancy(c, n, D: DiskRegion) -> DiscrepancyStat:
    pts = c.points if hasattr(c, "points") else np.asarray(c, dtype=np.float64).reshape(-1, 2)
    count = int(D.contains_points(pts).sum())
    expected = n * D.area
    return DiscrepancyStat(D, count, expected, count - expected)


def _check_replicas(replicas):
    if int(replicas) < 1:
        raise ConfigError(f"replicas must be at least 1, got {replicas}")
    return int(replicas)


def jackknife_variance(x):
    """Sample variance of x and its delete-one jackknife standard error."""
    x = np.asarray(x, dtype=np.float64)
    N = len(x)
    if N < 3:
        raise InsufficientDataError("variance needs at least 3 replicas")
    mean = x.mean()
    d2 = (x - mean) ** 2
    s2 = d2.sum() / (N - 1)
    loo = ((N - 1) * s2 - N / (N - 1) * d2) / (N - 2)
    se = math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2))
    return float(s2), se


@dataclass
class VarianceRow:
    R: float
    variance: float
    stderr: float
    replicas: int
    mean: float
    expected: float


@dataclass
class VarianceReport:
    n: int
    beta: float
    z: tuple
    rows: list

    def to_csv(self, path):
        _write_rows(path, [asdict(r) for r in self.rows],
                    ["R", "variance", "stderr", "replicas", "mean", "expected"])


def variance_scan(n, beta, z, R_grid, replicas, seed=0, workers=1) -> VarianceReport:
    """Monte Carlo variance of mu_n over disks of radius R/sqrt(n) around z."""
    replicas = _check_replicas(replicas)
    disks = [DiskRegion.scaled(n, z, R) for R in R_grid]
    rows = []
    for R, D in zip(R_grid, disks):
        x = disk_counts(n, beta, seed, 0, replicas, D, workers=workers)
        v, se = jackknife_variance(x)
        rows.append(VarianceRow(float(R), v, se, replicas, float(x.mean()), n * D.area))
    return VarianceReport(n, float(beta), tuple(z), rows)


@dataclass
class TailReport:
    """P[|Delta| >= threshold] (or a one-sided variant) with its uncertainty."""

    threshold: float
    estimate: LogReal
    stderr: float
    replicas: int
    estimator: str
    stderr_scale: str = "linear"
    hits: int | None = None
    upper_bound: bool = False
    ess: float | None = None
    xi: tuple | None = None
    R: float | None = None
    alpha: float | None = None
    n: int | None = None
    beta: float | None = None

    @property
    def probability(self) -> float:
        return float(self.estimate)

    @property
    def fit_value(self) -> LogReal:
        """Estimate, or the rule-of-three bound when nothing was observed."""
        if self.upper_bound:
            return LogReal.from_float(3.0 / self.replicas)
        return self.estimate

    def row(self):
        return {"estimator": self.estimator, "n": self.n, "beta": self.beta, "R": self.R,
                "alpha": self.alpha, "threshold": self.threshold, "replicas": self.replicas,
                "hits": self.hits, "estimate": float(self.estimate),
                "log_estimate": self.estimate.logmag, "stderr": self.stderr,
                "stderr_scale": self.stderr_scale, "upper_bound": int(self.upper_bound),
                "ess": self.ess,
                "xi": "" if self.xi is None else ";".join(repr(float(v)) for v in self.xi)}


TAIL_COLUMNS = ["estimator", "n", "beta", "R", "alpha", "threshold", "replicas", "hits",
                "estimate", "log_estimate", "stderr", "stderr_scale", "upper_bound", "ess", "xi"]


def naive_tail(hits_mask, threshold, **meta) -> TailReport:
    hits_mask = np.asarray(hits_mask, dtype=bool)
    N = len(hits_mask)
    h = int(hits_mask.sum())
    p = h / N
    return TailReport(float(threshold), LogReal.from_float(p), math.sqrt(p * (1 - p) / N), N,
                      "naive", hits=h, upper_bound=(h == 0), ess=float(N), **meta)


def tail_scan(n, beta, z, R, alpha_grid, replicas, seed=0, workers=1):
    """Naive estimates of P[|Delta_n(D)| >= R^alpha] over an alpha grid."""
    replicas = _check_replicas(replicas)
    D = DiskRegion.scaled(n, z, R)
    x = disk_counts(n, beta, seed, 0, replicas, D, workers=workers)
    delta = x - n * D.area
    return [naive_tail(np.abs(delta) >= R ** a, R ** a, R=float(R), alpha=float(a), n=n,
                       beta=float(beta)) for a in alpha_grid]


def write_tail_reports(path, reports):
    _write_rows(path, [r.row() for r in reports], TAIL_COLUMNS)


def read_tail_reports(path):
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            est = LogReal.from_log(float(r["log_estimate"]))
            out.append(TailReport(
                float(r["threshold"]), est, float(r["stderr"]), int(r["replicas"]),
                r["estimator"], r.get("stderr_scale", "linear"),
                int(r["hits"]) if r.get("hits") not in (None, "", "None") else None,
                bool(int(r.get("upper_bound") or 0)),
                float(r["ess"]) if r.get("ess") not in (None, "", "None") else None, None,
                float(r["R"]) if r.get("R") not in (None, "", "None") else None,
                float(r["alpha"]) if r.get("alpha") not in (None, "", "None") else None))
    return out


def _write_rows(path, rows, columns):
    write_csv(path, columns, rows)


def jlm_phi(alpha: float) -> float:
    """Tail exponent of the disk discrepancy at threshold R^alpha."""
    if not alpha > 0.5:
        raise DomainError(f"exponent defined for alpha > 1/2, got {alpha}")
    if alpha <= 1.0:
        return 2.0 * alpha - 1.0
    if alpha <= 2.0:
        return 3.0 * alpha - 2.0
    return 2.0 * alpha


@dataclass
class JlmFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    R: list = field(default_factory=list)
    y: list = field(default_factory=list)


def jlm_fit(R, log_p=None, log_p_se=None, level=0.95) -> JlmFit:
    """Slope of log(-log P) against log R.

    ``R`` may be a list of TailReports, in which case log-probabilities and
    their standard errors are read from them. Per-point errors on log P are
    carried to log(-log P) by the delta method and used as least-squares
    weights; without them the residual scatter sets the interval.
    """
    if log_p is None:
        reps = list(R)
        R = [r.R for r in reps]
        log_p = [r.fit_value.logmag for r in reps]
        log_p_se = [r.stderr / float(r.estimate) if r.estimate.sign > 0 and r.stderr > 0
                    and r.stderr_scale == "linear" else
                    (r.stderr if r.stderr_scale == "log" else np.nan) for r in reps]
    R = np.asarray(R, dtype=np.float64)
    lp = np.asarray(log_p, dtype=np.float64)
    ok = np.isfinite(lp) & (lp < 0) & (R > 1)
    if ok.sum() < 3:
        raise InsufficientDataError("need at least 3 points with 0 < P < 1")
    R, lp = R[ok], lp[ok]
    x = np.log(R)
    y = np.log(-lp)
    if log_p_se is not None:
        se_lp = np.asarray(log_p_se, dtype=np.float64)[ok]
        se_y = se_lp / np.abs(lp)
    else:
        se_y = np.full(len(x), np.nan)
    from scipy import stats as sps
    z = sps.norm.ppf(0.5 + level / 2.0)
    if np.all(np.isfinite(se_y)) and np.all(se_y > 0):
        w = 1.0 / se_y ** 2
        X = np.stack([np.ones_like(x), x], axis=1)
        cov = np.linalg.inv(X.T @ (w[:, None] * X))
        b = cov @ (X.T @ (w * y))
        se = math.sqrt(cov[1, 1])
    else:
        X = np.stack([np.ones_like(x), x], axis=1)
        b, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ b
        dof = len(x) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        se = math.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
    return JlmFit(float(b[1]), float(b[0]), se, float(b[1] - z * se), float(b[1] + z * se),
                  R.tolist(), y.tolist())


def _child_marginal_matrix(table, m_max):
    """Row m: log P(child count = a | parent count m)."""
    f = table.family
    m = np.arange(m_max + 1)[:, None]
    a = np.arange(m_max + 1)[None, :]
    idx = np.clip(m - a, 0, None)
    out = f.x[0][a] + f.tails[0][idx] - f.log_norm[m]
    return np.where(a <= m, out, -np.inf)


def exact_path_pmf(n, beta, j):
    """log pmf of the count of a fixed level-j square, by exact propagation."""
    table = table_for(beta, max(n, 2))
    pmf = np.full(n + 1, -np.inf)
    pmf[n] = 0.0
    if j == 0:
        return pmf
    M = _child_marginal_matrix(table, n)
    for _ in range(j):
        pmf = lse(pmf[:, None] + M, axis=0)
    return pmf


@dataclass
class DyadicTailReport:
    n: int
    j: int
    L: float
    kappa: float
    threshold: float
    mode: str
    estimate: LogReal
    stderr: float
    replicas: int | None
    scaled: float


def dyadic_tail(j, L, beta, kappa, replicas=0, seed=0, mode="monte-carlo", square=None):
    """P[|Delta_n(Q)| >= L^kappa] for a level-j square Q with n = 4^j L."""
    if not 0 < kappa < 1:
        raise ConfigError(f"kappa must lie in (0, 1), got {kappa}")
    if j < 0 or L < 2:
        raise ConfigError("need j >= 0 and L >= 2")
    n = int(round(4 ** j * L))
    thr = L ** kappa
    if mode == "exact":
        pmf = exact_path_pmf(n, beta, j)
        c = np.arange(n + 1)
        mask = np.abs(c - n / 4 ** j) >= thr
        est = LogReal.from_log(lse(pmf[mask]))
        se, N = 0.0, None
    elif mode == "monte-carlo":
        N = _check_replicas(replicas)
        Q = square or DyadicSquare(j, 0, 0)
        if j == 0:
            counts = np.full(N, n)
        else:
            counts = path_counts(n, beta, seed, 0, N, Q)[:, -1]
        hit = np.abs(counts - n / 4 ** j) >= thr
        p = hit.mean()
        est = LogReal.from_float(p)
        se = math.sqrt(p * (1 - p) / N)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    scaled = -est.logmag / L ** (2 * kappa) if est.sign > 0 else math.inf
    return DyadicTailReport(n, j, float(L), float(kappa), thr, mode, est, se, N, scaled)


@dataclass
class MartingaleTerms:
    level: int
    ell: int
    delta: float
    maximal_sum: float
    boundary_weighted_sum: float
    boundary_residual: float
    boundary_disk_sum: float

    @property
    def identity_residual(self) -> float:
        return self.delta - (self.maximal_sum + self.boundary_disk_sum)


def _square_counts(pts, level, ix, iy):
    """Number of points in each listed level-k square."""
    m = 1 << level
    key = (np.floor(np.ldexp(pts[:, 0], level)).astype(np.int64) * m
           + np.floor(np.ldexp(pts[:, 1], level)).astype(np.int64))
    tgt = np.asarray(ix, dtype=np.int64) * m + np.asarray(iy, dtype=np.int64)
    uk, cnt = np.unique(key, return_counts=True)
    pos = np.searchsorted(uk, tgt)
    hit = pos < len(uk)
    hit[hit] = uk[pos[hit]] == tgt[hit]
    out = np.zeros(len(tgt), dtype=np.int64)
    out[hit] = cnt[pos[hit]]
    return out


def martingale_decomposition(c, n, D: DiskRegion, k: int) -> MartingaleTerms:
    """Split Delta_n(D) into completed maximal squares and level-k boundary terms.

    M_k = sum over maximal squares of levels l..k of Delta_n(Q)
          + sum over level-k boundary squares of p(Q) Delta_n(Q),
    and B_k = Delta_n(D) - M_k.
    """
    ell = ell_level(D.radius)
    if k < ell:
        raise LevelError(f"level {k} is below the first comparable level {ell}")
    pts = c.points if hasattr(c, "points") else np.asarray(c, dtype=np.float64).reshape(-1, 2)
    delta = disk_discrepancy(pts, n, D).delta
    maximal = 0.0
    for j in range(ell, k + 1):
        ix, iy, lab = classify_level(D, j)
        sel = lab == "maximal"
        cnt = _square_counts(pts, j, ix[sel], iy[sel])
        maximal += float(np.sum(cnt - n * math.ldexp(1.0, -2 * j)))
    ix, iy, lab = classify_level(D, k)
    sel = lab == "boundary"
    bix, biy = ix[sel], iy[sel]
    cnt = _square_counts(pts, k, bix, biy)
    area = math.ldexp(1.0, -2 * k)
    p = np.array([relative_area(DyadicSquare(k, int(a), int(b)), D) for a, b in zip(bix, biy)])
    weighted = float(np.sum(p * (cnt - n * area)))
    inside = D.contains_points(pts)
    in_cnt = _square_counts(pts[inside], k, bix, biy)
    disk_sum = float(np.sum(in_cnt - n * p * area))
    return MartingaleTerms(k, ell, delta, maximal, weighted, delta - maximal - weighted, disk_sum)


def conditional_boundary_mean(n, beta, D: DiskRegion, k, resamples, seed=0, base_replica=0):
    """Mean and stderr of B_k over fresh interiors of the level-k boundary squares.

    The level-k counts stay those of the base sample; only the subtrees of
    boundary squares are redrawn, each resample from its own replica key.
    """
    resamples = _check_replicas(resamples)
    ell = ell_level(D.radius)
    if k < ell:
        raise LevelError(f"level {k} is below the first comparable level {ell}")
    table = table_for(beta, max(n, 2))
    tree = sample_count_tree(SamplerSpec(n, beta, seed), table, base_replica)
    counts = tree.counts_at_level(k)
    _, boundary = squares_by_class(D, k)
    sq = [Q for Q in boundary if counts.get(Q, 0) > 0]
    m = np.array([counts[Q] for Q in sq], dtype=np.int64)
    p = np.array([relative_area(Q, D) for Q in sq])
    if len(sq) == 0:
        return 0.0, 0.0
    rk = rng.replica_keys(rng.combine(seed, 0x5EED), 0, resamples)
    keys = np.repeat(rk, len(sq))
    items_sq = sq * resamples
    inside = subtree_disk_counts(table.family, keys, items_sq, np.tile(m, resamples), D)
    b = inside.reshape(resamples, len(sq)).astype(np.float64) - p * m
    total = b.sum(axis=1)
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(resamples))


def overcrowd_probability(n, beta, j, mode="exact-path", delta=1.0, replicas=0, seed=0,
                          square=None) -> LogReal:
    """P[mu_n(Q) = n] along a level-j path, or P[mu_n(Q) >= delta n] by Monte Carlo."""
    if j < 1:
        raise ConfigError(f"j must be at least 1, got {j}")
    if mode == "exact-path":
        one_level = log_split_prob(table_for(beta, max(n, 2)), n, (n, 0, 0, 0))
        return LogReal.from_log(j * one_level.logmag)
    if mode == "monte-carlo":
        return overcrowd_tail(n, beta, j, delta, replicas, seed, square).estimate
    raise ConfigError(f"unknown mode {mode!r}")


def overcrowd_tail(n, beta, j, delta, replicas, seed=0, square=None) -> TailReport:
    N = _check_replicas(replicas)
    Q = square or DyadicSquare(j, 0, 0)
    counts = path_counts(n, beta, seed, 0, N, Q)[:, -1]
    return naive_tail(counts >= delta * n, delta * n, n=n, beta=float(beta))
