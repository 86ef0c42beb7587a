import math

import numpy as np
import pytest

from hcgas.energy import Configuration
from hcgas.errors import ConfigError, DomainError, InsufficientDataError, LevelError, WindowError
from hcgas.hierarchy import DiskRegion, DyadicSquare, ell_level
from hcgas.logreal import LogReal, lse
from hcgas.partition import split_law, table_for
from hcgas.sampler import disk_counts, sample_configurations, top_split_counts
from hcgas.stats import (TailReport, conditional_boundary_mean, disk_discrepancy, dyadic_tail,
                         exact_path_pmf, jackknife_variance, jlm_fit, jlm_phi,
                         martingale_decomposition, naive_tail, overcrowd_probability,
                         overcrowd_tail, read_tail_reports, tail_scan, variance_scan,
                         write_tail_reports)


def test_disk_discrepancy_edges():
    D = DiskRegion((0.5, 0.5), 0.1)
    far = Configuration([[0.05, 0.05], [0.9, 0.9]])
    s = disk_discrepancy(far, 2, D)
    assert s.count == 0 and s.delta == pytest.approx(-2 * D.area)
    near = Configuration([[0.5, 0.5], [0.55, 0.5]])
    s = disk_discrepancy(near, 2, D)
    assert s.count == 2 and s.delta == pytest.approx(2 - 2 * D.area)
    # closed disk: a point on the circle counts
    assert disk_discrepancy(Configuration([[0.75, 0.5]]), 1, DiskRegion((0.5, 0.5), 0.25)).count == 1


def test_mean_discrepancy_vanishes():
    n, R = 64, 3.0
    D = DiskRegion.scaled(n, (0.5, 0.5), R)
    x = disk_counts(n, 1.0, 4, 0, 100_000, D) - n * D.area
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(len(x))


def test_jackknife():
    g = np.random.default_rng(3)
    x = g.normal(0, 2, 5000)
    v, se = jackknife_variance(x)
    assert v == pytest.approx(np.var(x, ddof=1))
    assert se == pytest.approx(4 * math.sqrt(2 / 5000), rel=0.15)
    with pytest.raises(InsufficientDataError):
        jackknife_variance([1.0, 2.0])


def test_variance_scan_and_control():
    rep = variance_scan(1024, 1.0, (0.5, 0.5), [2, 4, 8], 20_000, seed=1)
    for row in rep.rows:
        assert row.variance > 0
        assert 0.2 < row.variance / row.R < 5
    ctl = variance_scan(1024, 0.0, (0.5, 0.5), [2, 4, 8], 20_000, seed=1)
    for row in ctl.rows:
        a = row.expected / 1024
        assert abs(row.variance - 1024 * a * (1 - a)) < 4 * row.stderr


def test_variance_scan_window():
    with pytest.raises(WindowError):
        variance_scan(64, 1.0, (0.5, 0.5), [5.0], 100)
    with pytest.raises(ConfigError):
        variance_scan(64, 1.0, (0.5, 0.5), [2.0], 0)


def test_total_count_is_deterministic():
    for c in sample_configurations(30, 1.0, 0, 0, 20):
        assert len(c.points) == 30


def test_tail_scan_monotone():
    reps = tail_scan(256, 1.0, (0.5, 0.5), 3.0, [0.1, 0.5, 1.0, 1.5, 2.0, 2.5], 20_000)
    p = [r.probability for r in reps]
    assert all(a >= b for a, b in zip(p, p[1:]))
    assert reps[0].probability > 0.3
    last = reps[-1]
    assert last.upper_bound and last.hits == 0
    assert float(last.fit_value) == pytest.approx(3 / 20_000)
    for r in reps:
        assert r.estimator == "naive" and r.stderr >= 0
        assert r.probability == pytest.approx(r.hits / r.replicas, rel=1e-14)


def test_tail_reports_roundtrip(tmp_path):
    reps = tail_scan(256, 1.0, (0.5, 0.5), 3.0, [0.5, 1.0], 2000)
    path = tmp_path / "tail.csv"
    write_tail_reports(path, reps)
    back = read_tail_reports(path)
    for a, b in zip(reps, back):
        assert b.estimate.logmag == pytest.approx(a.estimate.logmag)
        assert (b.R, b.alpha, b.hits, b.replicas) == (a.R, a.alpha, a.hits, a.replicas)
    header = path.read_bytes().split(b"\r\n")[0].decode()
    assert "ess" in header and "xi" in header


def test_jlm_phi():
    assert jlm_phi(0.75) == pytest.approx(0.5)
    assert jlm_phi(1.5) == pytest.approx(2.5)
    assert jlm_phi(3.0) == 6.0
    assert jlm_phi(1.0) == pytest.approx(1.0) == pytest.approx(jlm_phi(1.0 + 1e-12), abs=1e-9)
    assert jlm_phi(2.0) == pytest.approx(4.0) == pytest.approx(jlm_phi(2.0 + 1e-12), abs=1e-9)
    assert jlm_phi(2.0 - 1e-12) == pytest.approx(4.0, abs=1e-9)
    with pytest.raises(DomainError):
        jlm_phi(0.5)


def test_jlm_fit_synthetic():
    R = np.array([2.0, 4.0, 8.0, 16.0])
    fit = jlm_fit(R, -R ** 2)
    assert fit.slope == pytest.approx(2.0, abs=1e-9)
    R = np.geomspace(4, 64, 9)
    fit = jlm_fit(R, -R ** 2 * np.log(R))
    assert 2.0 < fit.slope < 2.5
    assert fit.ci_low < fit.slope < fit.ci_high
    with pytest.raises(InsufficientDataError):
        jlm_fit([2.0, 3.0], [-1.0, -2.0])


def test_jlm_fit_from_reports():
    reps = [TailReport(R ** 2, LogReal.from_log(-R ** 3), 0.01, 1000, "tilted", "log", R=R)
            for R in (2.0, 3.0, 4.0, 6.0)]
    fit = jlm_fit(reps)
    assert fit.slope == pytest.approx(3.0, abs=1e-9)
    assert fit.stderr > 0


def test_naive_tail():
    r = naive_tail([True, False, False, True], 1.0)
    assert r.probability == 0.5 and r.hits == 2 and r.stderr == pytest.approx(0.25)


def test_overcrowd_exact_path():
    assert float(overcrowd_probability(2, 1.0, 1)) == pytest.approx(math.exp(-1) / 16, rel=1e-13)
    assert float(overcrowd_probability(2, 1.0, 2)) == pytest.approx(math.exp(-2) / 256, rel=1e-13)
    for n in (2, 5, 9):
        for j in (1, 2, 3):
            pmf = exact_path_pmf(n, 1.0, j)
            assert pmf[n] == pytest.approx(overcrowd_probability(n, 1.0, j).logmag, abs=1e-10)
            assert lse(pmf) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        overcrowd_probability(2, 1.0, 0)


def test_overcrowd_monte_carlo():
    r = overcrowd_tail(3, 1.0, 1, 2 / 3, 200_000, seed=3)
    want = float(LogReal.from_log(lse(exact_path_pmf(3, 1.0, 1)[2:])))
    assert abs(r.probability - want) < 4 * r.stderr


def test_dyadic_tail():
    for L in (2, 4):
        r = dyadic_tail(1, L, 1.0, 0.75, mode="exact")
        mc = dyadic_tail(1, L, 1.0, 0.75, replicas=200_000, seed=1)
        assert abs(float(mc.estimate) - float(r.estimate)) < 4 * mc.stderr
        assert r.scaled > 0
    zero = dyadic_tail(0, 16, 1.0, 0.75, replicas=100)
    assert zero.estimate.sign == 0
    with pytest.raises(ConfigError):
        dyadic_tail(1, 16, 1.0, 1.5)


def test_dyadic_tail_envelope():
    vals = [dyadic_tail(1, L, 1.0, 0.75, mode="exact").scaled for L in (16, 32, 64)]
    assert min(vals) > 0.05
    assert max(vals) / min(vals) < 5


def test_level_one_statistic_matches_enumeration():
    n = 20
    T, lp = split_law(table_for(1.0, n), n).joint()
    exact = np.exp(lp) @ (T[:, 0] * T[:, 3])
    mc = top_split_counts(n, 1.0, 0, 0, 100_000)
    x = mc[:, 0] * mc[:, 3]
    assert abs(x.mean() - exact) < 4 * x.std() / math.sqrt(len(x))


def test_martingale_identity():
    n = 256
    D = DiskRegion.scaled(n, (0.47, 0.52), 4.0)
    ell = ell_level(D.radius)
    for c in sample_configurations(n, 1.0, 2, 0, 200):
        for k in (ell, ell + 2, ell + 5):
            m = martingale_decomposition(c, n, D, k)
            assert abs(m.identity_residual) < 1e-9
            assert m.boundary_residual == pytest.approx(m.delta - m.maximal_sum
                                                        - m.boundary_weighted_sum)
    empty = martingale_decomposition(np.zeros((0, 2)), n, D, ell + 1)
    assert empty.delta == pytest.approx(-n * D.area)
    assert abs(empty.identity_residual) < 1e-9
    with pytest.raises(LevelError):
        martingale_decomposition(np.zeros((0, 2)), n, D, ell - 1)


def test_conditional_boundary_mean():
    n = 256
    D = DiskRegion.scaled(n, (0.47, 0.52), 4.0)
    k = ell_level(D.radius) + 2
    for base in range(3):
        mean, se = conditional_boundary_mean(n, 1.0, D, k, 20_000, seed=5, base_replica=base)
        assert abs(mean) < 4 * se
