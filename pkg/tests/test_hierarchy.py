import math

import numpy as np
import pytest
from scipy import integrate

from hcgas.errors import ConfigError, DegenerateInputError, WindowError
from hcgas.hierarchy import (DiskRegion, DyadicSquare, SquareClass, classify_level,
                             classify_square, ell_level, enclosing_square, hierarchical_distance,
                             is_good_boundary, relative_area, squares_by_class,
                             write_squares_csv)

D0 = DiskRegion((0.5, 0.5), 0.3)


def quad_area(Q, D):
    """Leb(D n Q)/Leb(Q) by adaptive quadrature of the clipped chord."""
    x0, y0, x1, y1 = Q.bounds
    cx, cy = D.center
    r = D.radius

    def chord(x):
        h2 = r * r - (x - cx) ** 2
        if h2 <= 0:
            return 0.0
        h = math.sqrt(h2)
        return max(0.0, min(y1, cy + h) - max(y0, cy - h))

    brk = [p for p in (cx - r, cx + r) if x0 < p < x1]
    for yb in (y0, y1):
        d = r * r - (yb - cy) ** 2
        if d > 0:
            brk += [p for p in (cx - math.sqrt(d), cx + math.sqrt(d)) if x0 < p < x1]
    val, _ = integrate.quad(chord, x0, x1, points=sorted(brk) or None, epsabs=1e-15,
                            epsrel=1e-13, limit=200)
    return val / Q.area


@pytest.mark.parametrize("p,k,want", [((0.6, 0.3), 1, (1, 1, 0)), ((0.0, 0.0), 3, (3, 0, 0)),
                                      ((0.999, 0.999), 2, (2, 3, 3))])
def test_enclosing_square(p, k, want):
    assert enclosing_square(p, k) == DyadicSquare(*want)


def test_enclosing_chain_and_children(gen):
    for p in gen.random((200, 2)):
        for k in range(12):
            Q = enclosing_square(p, k)
            assert Q.contains(p)
            assert enclosing_square(p, k + 1) in Q.children()
    Q = DyadicSquare(3, 5, 2)
    kids = Q.children()
    assert sum(c.area for c in kids) == Q.area
    assert all(c.parent() == Q for c in kids)


def test_square_invariants():
    with pytest.raises(ConfigError):
        DyadicSquare(2, 4, 0)
    assert DyadicSquare(0, 0, 0).bounds == (0.0, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("p,q,w", [((0.1, 0.1), (0.9, 0.9), 1), ((0.1, 0.1), (0.2, 0.2), 3)])
def test_hierarchical_distance(p, q, w):
    assert hierarchical_distance(p, q) == w
    assert hierarchical_distance(q, p) == w


def test_hierarchical_distance_degenerate():
    with pytest.raises(DegenerateInputError):
        hierarchical_distance((0.3, 0.3), (0.3, 0.3))


def test_distance_matches_first_split_level(gen):
    pts = gen.random((300, 2, 2))
    pts[:100, 1] = pts[:100, 0] + gen.normal(0, 1e-4, (100, 2))
    pts = np.clip(pts, 0, 0.999999)
    for p, q in pts:
        k = 1
        while enclosing_square(p, k) == enclosing_square(q, k):
            k += 1
        assert hierarchical_distance(p, q) == k


def test_mean_distance(gen):
    N = 1_000_000
    a, b = gen.random((N, 2)), gen.random((N, 2))
    w = np.ones(N)
    same = np.ones(N, dtype=bool)
    for k in range(1, 40):
        same &= (np.floor(a * 2 ** k) == np.floor(b * 2 ** k)).all(axis=1)
        w += same
    se = w.std() / math.sqrt(N)
    assert abs(w.mean() - 4 / 3) < 4 * se


def test_disk_window():
    with pytest.raises(WindowError):
        DiskRegion((0.1, 0.5), 0.2)
    with pytest.raises(WindowError):
        DiskRegion.scaled(64, (0.5, 0.5), 5.0)
    with pytest.raises(ConfigError):
        DiskRegion((0.0, 0.5), 0.1)
    assert DiskRegion.scaled(64, (0.5, 0.5), 2.0).radius == 0.25


def test_classify_examples():
    assert classify_square(DyadicSquare(3, 4, 4), D0) is SquareClass.MAXIMAL
    assert classify_square(DyadicSquare(1, 0, 0), D0) is SquareClass.BOUNDARY
    assert classify_square(DyadicSquare(2, 3, 0), D0) is SquareClass.EXTERIOR
    assert classify_square(DyadicSquare(5, 16, 16), D0) is SquareClass.INTERIOR
    maximal, boundary = squares_by_class(D0, 1)
    assert maximal == [] and len(boundary) == 4


def test_classify_level_is_exhaustive(gen):
    for _ in range(10):
        r = gen.uniform(0.02, 0.2)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        for k in range(ell_level(r), ell_level(r) + 4):
            ix, iy, lab = classify_level(D, k)
            m = 1 << k
            for a in range(m):
                for b in range(m):
                    Q = DyadicSquare(k, a, b)
                    c = classify_square(Q, D)
                    hit = np.flatnonzero((ix == a) & (iy == b))
                    if c is SquareClass.EXTERIOR:
                        assert len(hit) == 0
                    else:
                        assert len(hit) == 1 and lab[hit[0]] == c.value


def test_maximal_consistency(gen):
    for _ in range(5):
        r = gen.uniform(0.05, 0.2)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        for k in range(1, 7):
            maximal, _ = squares_by_class(D, k)
            for Q in maximal:
                assert relative_area(Q, D) == 1.0
                assert relative_area(Q.parent(), D) < 1.0


def test_ell_level():
    assert ell_level(0.3) == 1
    assert ell_level(0.25) == 2
    assert ell_level(0.26) == 1
    for r in np.geomspace(1e-4, 0.49, 200):
        ell = ell_level(r)
        assert r <= 2.0 ** -ell < 2 * r


def test_first_level_has_few_squares(gen):
    for _ in range(50):
        r = gen.uniform(0.01, 0.2)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        ell = ell_level(r)
        u, v = squares_by_class(D, ell)
        assert len(u) + len(v) <= 10


def test_boundary_count_scaling(gen):
    ratios = []
    for _ in range(50):
        r = gen.uniform(0.01, 0.2)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        ell = ell_level(r)
        for k in range(ell, ell + 8):
            ratios.append(len(squares_by_class(D, k)[1]) / 2 ** (k - ell))
    # perimeter 2 pi r over side 2^-k, with r < 2^-ell, gives about 8-16 squares per unit
    assert max(ratios) < 40


def test_relative_area_trivial():
    Q = DyadicSquare(2, 1, 1)
    assert relative_area(Q, DiskRegion((0.375, 0.375), 0.2)) == 1.0
    assert relative_area(Q, DiskRegion((0.8, 0.8), 0.1)) == 0.0
    assert relative_area(Q, DiskRegion((0.375, 0.375), 0.0625)) == pytest.approx(math.pi / 16,
                                                                                 abs=1e-12)


def test_relative_area_quadrature():
    assert relative_area(DyadicSquare(1, 0, 0), D0) == pytest.approx(
        quad_area(DyadicSquare(1, 0, 0), D0), abs=1e-9)


def test_relative_area_quadrature_random(gen):
    for _ in range(150):
        r = gen.uniform(0.01, 0.3)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        k = int(gen.integers(0, 7))
        ix, iy, _ = classify_level(D, k)
        i = int(gen.integers(len(ix)))
        Q = DyadicSquare(k, int(ix[i]), int(iy[i]))
        assert abs(relative_area(Q, D) - quad_area(Q, D)) < 1e-9


def test_child_average_identity(gen):
    for _ in range(100):
        r = gen.uniform(0.005, 0.25)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        k = int(gen.integers(0, 9))
        ix, iy, _ = classify_level(D, k)
        for a, b in zip(ix[:5], iy[:5]):
            P = DyadicSquare(k, int(a), int(b))
            avg = sum(relative_area(c, D) for c in P.children()) / 4
            assert abs(avg - relative_area(P, D)) < 1e-10


def test_areas_sum_to_disk(gen):
    for _ in range(10):
        r = gen.uniform(0.02, 0.3)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        k = ell_level(r) + 3
        ix, iy, _ = classify_level(D, k)
        tot = sum(relative_area(DyadicSquare(k, int(a), int(b)), D) for a, b in zip(ix, iy))
        assert tot * 4.0 ** -k == pytest.approx(D.area, rel=1e-11)


def test_good_boundary():
    assert not is_good_boundary(DyadicSquare(3, 4, 4), D0)
    assert not is_good_boundary(DyadicSquare(2, 3, 0), D0)
    assert is_good_boundary(DyadicSquare(1, 0, 0), D0)


def test_good_square_counts_grow(gen):
    fits = []
    for _ in range(10):
        r = gen.uniform(0.02, 0.1)
        D = DiskRegion(tuple(gen.uniform(r, 1 - r, 2)), r)
        ell = ell_level(r)
        for j in range(ell + 2, min(ell + 9, 11)):
            good = sum(is_good_boundary(Q, D) for Q in squares_by_class(D, j)[1])
            fits.append(good / 2 ** (j - ell))
    assert min(fits) > 0.5


def test_squares_csv(tmp_path):
    path = tmp_path / "sq.csv"
    write_squares_csv(path, squares_by_class(D0, 2)[1], D0)
    rows = path.read_text().splitlines()
    assert rows[0] == "level,ix,iy,class,relative_area"
    assert len(rows) == 1 + len(squares_by_class(D0, 2)[1])
