"""Metropolis sampler over continuous configurations, used as an oracle.

Each step picks a point uniformly and proposes moving it to a fresh uniform
position; the move is accepted with probability min(1, exp(-beta dH)) where
dH is the exact integer energy change. The proposal is symmetric and
irreducible in one step, so the chain targets the gas law directly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import _backend
from .energy import Configuration
from .errors import ConfigError
from .partition import compositions, table_for
from .rng import numpy_generator
from .sampler import level_counts

BLOCK = 1 << 20
MIXING_TAU = 1.5


class MixingWarning(UserWarning):
    """The integrated autocorrelation time exceeds the thinning interval."""


@dataclass(frozen=True)
class McmcSpec:
    n: int
    beta: float
    seed: int
    burn_in: int = 1000
    thinning: int = 10
    total_samples: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"chain needs n >= 1, got {self.n}")
        if self.burn_in < 1 or self.thinning < 1:
            raise ConfigError("burn_in and thinning must be at least 1")
        if self.total_samples < 0:
            raise ConfigError("total_samples must be nonnegative")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError(f"beta must be a finite nonnegative real, got {self.beta}")


@dataclass
class McmcResult:
    spec: McmcSpec
    samples: np.ndarray
    energies: np.ndarray
    trace: np.ndarray = field(repr=False)
    accepted: int = 0

    @property
    def steps(self) -> int:
        return len(self.trace)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.steps if self.steps else 0.0

    def configurations(self):
        for s in self.samples:
            yield Configuration(s)

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "energy"])
            for i, e in enumerate(self.trace):
                w.writerow([i, int(e)])


def mcmc_run(spec: McmcSpec, init=None) -> McmcResult:
    g = numpy_generator(spec.seed, 0x4D434D43)
    pts = np.ascontiguousarray(g.random((spec.n, 2)) if init is None else
                               np.array(init, dtype=np.float64).reshape(spec.n, 2))
    samples, energies, traces = [], [], []
    accepted = 0

    def run(steps, burn, thin):
        nonlocal accepted
        idx = g.integers(0, spec.n, steps, dtype=np.int64)
        ux, uy, ua = g.random(steps), g.random(steps), g.random(steps)
        out, en, tr, acc = _backend.mcmc_chain(pts, float(spec.beta), idx, ux, uy, ua, burn, thin)
        accepted += acc
        samples.append(out)
        energies.append(en)
        traces.append(tr)

    left = spec.burn_in
    while left > 0:
        s = min(left, BLOCK)
        run(s, s, 1)
        left -= s
    per_block = max(1, BLOCK // spec.thinning)
    left = spec.total_samples
    while left > 0:
        k = min(left, per_block)
        run(k * spec.thinning, 0, spec.thinning)
        left -= k
    return McmcResult(spec,
                      np.concatenate(samples) if samples else np.zeros((0, spec.n, 2)),
                      np.concatenate(energies) if energies else np.zeros(0, np.int64),
                      np.concatenate(traces) if traces else np.zeros(0, np.int64),
                      accepted)


def integrated_autocorr_time(x) -> float:
    """Batch-means estimate of the integrated autocorrelation time of a series."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 16:
        return 1.0
    var = x.var()
    if var == 0.0:
        return 1.0
    b = int(math.sqrt(n))
    nb = n // b
    means = x[:nb * b].reshape(nb, b).mean(axis=1)
    return max(1.0, b * means.var(ddof=1) / var)


def _cell_counts(samples, level):
    """Counts of each level-k square per sample, shape (S, 4^k), index ix + 2^k iy."""
    m = 1 << level
    cells = np.floor(np.ldexp(samples, level)).astype(np.int64)
    flat = cells[..., 0] + m * cells[..., 1]
    out = np.zeros((len(samples), m * m), dtype=np.int64)
    rows = np.repeat(np.arange(len(samples)), samples.shape[1])
    np.add.at(out, (rows, flat.ravel()), 1)
    return out


def level_statistic(counts):
    """Encode count vectors (S, K) as hashable category keys."""
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    return counts.view(np.dtype((np.void, counts.dtype.itemsize * counts.shape[1]))).ravel()


def _homogeneity(a_keys, ess_a, b_keys, ess_b, min_expected=5.0):
    """Chi-square homogeneity test with per-sample effective sizes."""
    cats, inv = np.unique(np.concatenate([a_keys, b_keys]), return_inverse=True)
    na, nb = len(a_keys), len(b_keys)
    ca = np.bincount(inv[:na], minlength=len(cats)).astype(float)
    cb = np.bincount(inv[na:], minlength=len(cats)).astype(float)
    pa, pb = ca / na, cb / nb
    tv = 0.5 * np.abs(pa - pb).sum()
    pooled = (pa * ess_a + pb * ess_b) / (ess_a + ess_b)
    small = pooled * min(ess_a, ess_b) < min_expected
    if small.any():
        pa = np.append(pa[~small], pa[small].sum())
        pb = np.append(pb[~small], pb[small].sum())
        pooled = np.append(pooled[~small], pooled[small].sum())
        keep = pooled > 0
        pa, pb, pooled = pa[keep], pb[keep], pooled[keep]
    df = len(pooled) - 1
    if df < 1:
        return 0.0, 1.0, tv
    x2 = float(np.sum((pa - pb) ** 2 / (pooled * (1.0 / ess_a + 1.0 / ess_b))))
    return x2, float(sps.chi2.sf(x2, df)), tv


@dataclass
class LevelComparison:
    level: int
    chi2: float
    p_value: float
    tv: float
    tv_exact_vs_law: float | None = None
    tv_mcmc_vs_law: float | None = None


@dataclass
class AgreementReport:
    n: int
    beta: float
    exact_samples: int
    mcmc_samples: int
    mcmc_ess: float
    tau: float
    acceptance_rate: float
    levels: list

    @property
    def min_p_value(self) -> float:
        return min(c.p_value for c in self.levels)


def _law_tv(counts4, n, beta):
    table = table_for(beta, max(n, 2))
    T = compositions(n)
    p = np.exp(table.family.log_prob(T))
    enc = level_statistic(T)
    emp = level_statistic(counts4)
    cats, inv = np.unique(np.concatenate([enc, emp]), return_inverse=True)
    pe = np.bincount(inv[len(enc):], minlength=len(cats)) / len(emp)
    pl = np.zeros(len(cats))
    pl[inv[:len(enc)]] = p
    return 0.5 * np.abs(pe - pl).sum()


def compare_samplers(n, beta, seeds=(1, 2), levels=(1, 2), mcmc_samples=100_000,
                     burn_in=1000, thinning=10, exact_samples=None,
                     exact_beta=None) -> AgreementReport:
    """Compare dyadic count statistics of the exact sampler and the chain.

    ``exact_beta`` runs the exact sampler at a different temperature, which
    gives a deliberately wrong reference for power checks. The exact sample
    size defaults to the chain's effective sample size.
    """
    if n > 16:
        raise ConfigError(f"the chain oracle is limited to n <= 16, got {n}")
    eb = beta if exact_beta is None else exact_beta
    res = mcmc_run(McmcSpec(n, beta, seeds[1], burn_in, thinning, mcmc_samples))
    level_cells = {k: _cell_counts(res.samples, k) for k in levels}
    taus = [integrated_autocorr_time(res.energies)]
    for k in levels:
        c = level_cells[k]
        for col in range(c.shape[1]):
            taus.append(integrated_autocorr_time(c[:, col]))
    tau = max(taus)
    if tau > MIXING_TAU:
        warnings.warn(f"autocorrelation time {tau:.2f} (in thinned samples) exceeds the "
                      f"thinning interval; increase thinning above {thinning}", MixingWarning)
    ess = mcmc_samples / tau
    n_exact = int(round(ess)) if exact_samples is None else int(exact_samples)
    out = []
    for k in levels:
        ex = level_counts(n, eb, seeds[0], 0, n_exact, k)
        ex = ex.transpose(0, 2, 1).reshape(n_exact, -1)
        x2, p, tv = _homogeneity(level_statistic(ex), float(n_exact),
                                 level_statistic(level_cells[k]), ess)
        lc = LevelComparison(k, x2, p, tv)
        if k == 1:
            lc.tv_exact_vs_law = _law_tv(ex[:, [0, 1, 2, 3]], n, beta)
            lc.tv_mcmc_vs_law = _law_tv(level_cells[1], n, beta)
        out.append(lc)
    return AgreementReport(n, beta, n_exact, mcmc_samples, ess, tau, res.acceptance_rate, out)


def chi2_against_law(counts4, n, beta, ess=None):
    """Goodness of fit of level-1 count vectors to the exact split law."""
    table = table_for(beta, max(n, 2))
    T = compositions(n)
    p = np.exp(table.family.log_prob(T))
    N = len(counts4)
    ess = N if ess is None else ess
    enc = level_statistic(T)
    idx = {k.tobytes(): i for i, k in enumerate(enc)}
    obs = np.zeros(len(T))
    for k, c in zip(*np.unique(level_statistic(counts4), return_counts=True)):
        obs[idx[k.tobytes()]] = c
    exp_ = p * N
    small = exp_ < 5.0
    if small.any():
        obs = np.append(obs[~small], obs[small].sum())
        exp_ = np.append(exp_[~small], exp_[small].sum())
    x2 = float(np.sum((obs - exp_) ** 2 / exp_) * ess / N)
    return x2, float(sps.chi2.sf(x2, len(exp_) - 1))
