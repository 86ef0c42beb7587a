"""Dyadic squares of [0,1)^2, disks, and exact circle-square overlap."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, WindowError

GOOD_LO = 1e-5


@dataclass(frozen=True, order=True)
class DyadicSquare:
    """[ix, ix+1) x [iy, iy+1) scaled by 2^-level."""

    level: int
    ix: int
    iy: int

    def __post_init__(self):
        if self.level < 0:
            raise ConfigError(f"negative level {self.level}")
        m = 1 << self.level
        if not (0 <= self.ix < m and 0 <= self.iy < m):
            raise ConfigError(f"index ({self.ix}, {self.iy}) outside level {self.level}")

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def bounds(self):
        """(x0, y0, x1, y1)."""
        s = self.side
        return self.ix * s, self.iy * s, (self.ix + 1) * s, (self.iy + 1) * s

    @property
    def area(self) -> float:
        return math.ldexp(1.0, -2 * self.level)

    def parent(self) -> DyadicSquare:
        if self.level == 0:
            raise ValueError("the unit square has no parent")
        return DyadicSquare(self.level - 1, self.ix >> 1, self.iy >> 1)

    def children(self):
        """Children in the order j = dx + 2 dy used for split counts."""
        l, x, y = self.level + 1, 2 * self.ix, 2 * self.iy
        return (DyadicSquare(l, x, y), DyadicSquare(l, x + 1, y),
                DyadicSquare(l, x, y + 1), DyadicSquare(l, x + 1, y + 1))

    def contains(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] < x1 and y0 <= p[1] < y1


@dataclass(frozen=True)
class UnitPoint:
    x: float
    y: float

    def __post_init__(self):
        for v in (self.x, self.y):
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"coordinate {v!r} outside [0, 1)")

    def __iter__(self):
        yield self.x
        yield self.y

    def __getitem__(self, i):
        return (self.x, self.y)[i]


@dataclass(frozen=True)
class DiskRegion:
    """Closed disk contained in the unit square."""

    center: tuple
    radius: float

    def __post_init__(self):
        cx, cy = (float(v) for v in self.center)
        r = float(self.radius)
        object.__setattr__(self, "center", (cx, cy))
        object.__setattr__(self, "radius", r)
        if not (0.0 < cx < 1.0 and 0.0 < cy < 1.0):
            raise ConfigError(f"disk center {self.center} not interior to the unit square")
        if not (r > 0.0 and math.isfinite(r)):
            raise ConfigError(f"disk radius must be positive, got {r}")
        if min(cx, cy, 1.0 - cx, 1.0 - cy) < r:
            raise WindowError(f"disk of radius {r} at {self.center} leaves the unit square")

    @classmethod
    def scaled(cls, n: int, z, R: float) -> DiskRegion:
        """Disk of radius R / sqrt(n): R is measured in interpoint spacings."""
        return cls(tuple(z), R / math.sqrt(n))

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    def contains_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return in_closed_disk(pts[:, 0], pts[:, 1], self)


def in_closed_disk(x, y, disk: DiskRegion):
    cx, cy = disk.center
    r = disk.radius
    dx = np.asarray(x) - cx
    dy = np.asarray(y) - cy
    return dx * dx + dy * dy <= r * r


class SquareClass(enum.Enum):
    INTERIOR = "interior"
    MAXIMAL = "maximal"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


def enclosing_square(p, k: int) -> DyadicSquare:
    if k < 0:
        raise ConfigError(f"negative level {k}")
    x, y = float(p[0]), float(p[1])
    return DyadicSquare(k, int(math.ldexp(x, k)), int(math.ldexp(y, k)))


def fixed64(v):
    """Truncate coordinates in [0,1) to exact 64-bit fixed point (uint64)."""
    v = np.asarray(v, dtype=np.float64)
    a = v * 4294967296.0
    hi = np.floor(a)
    lo = np.floor((a - hi) * 4294967296.0)
    return (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)


def bit_length64(v):
    """Vectorized bit length of uint64 values."""
    v = np.asarray(v, dtype=np.uint64)
    hi = (v >> np.uint64(32)).astype(np.float64)
    lo = (v & np.uint64(0xFFFFFFFF)).astype(np.float64)
    return np.where(hi > 0, 32 + np.frexp(hi)[1], np.frexp(lo)[1])


def hierarchical_distance(p, q) -> int:
    """First level at which p and q fall in different dyadic squares."""
    ax, ay = int(float(p[0]) * 18446744073709551616.0), int(float(p[1]) * 18446744073709551616.0)
    bx, by = int(float(q[0]) * 18446744073709551616.0), int(float(q[1]) * 18446744073709551616.0)
    common = 64 - max((ax ^ bx).bit_length(), (ay ^ by).bit_length())
    if common >= 64:
        raise DegenerateInputError(f"points {tuple(p)} and {tuple(q)} coincide to 64 bits")
    return 1 + common


def _bounds_arrays(level, ix, iy):
    s = math.ldexp(1.0, -int(level))
    x0 = np.asarray(ix, dtype=np.float64) * s
    y0 = np.asarray(iy, dtype=np.float64) * s
    return x0, y0, x0 + s, y0 + s


def cell_inside(level, ix, iy, disk: DiskRegion):
    """Whole closed square inside the closed disk (farthest corner within r)."""
    cx, cy = disk.center
    x0, y0, x1, y1 = _bounds_arrays(level, ix, iy)
    fx = np.maximum(np.abs(x0 - cx), np.abs(x1 - cx))
    fy = np.maximum(np.abs(y0 - cy), np.abs(y1 - cy))
    return fx * fx + fy * fy <= disk.radius ** 2


def cell_meets(level, ix, iy, disk: DiskRegion):
    """Square and disk overlap in positive area (nearest point closer than r)."""
    cx, cy = disk.center
    x0, y0, x1, y1 = _bounds_arrays(level, ix, iy)
    nx = np.maximum(np.maximum(x0 - cx, cx - x1), 0.0)
    ny = np.maximum(np.maximum(y0 - cy, cy - y1), 0.0)
    return nx * nx + ny * ny < disk.radius ** 2


def classify_square(Q: DyadicSquare, D: DiskRegion) -> SquareClass:
    if bool(cell_inside(Q.level, Q.ix, Q.iy, D)):
        if Q.level > 0:
            P = Q.parent()
            if not bool(cell_inside(P.level, P.ix, P.iy, D)):
                return SquareClass.MAXIMAL
        return SquareClass.INTERIOR
    if bool(cell_meets(Q.level, Q.ix, Q.iy, D)):
        return SquareClass.BOUNDARY
    return SquareClass.EXTERIOR


def _candidate_indices(D: DiskRegion, k: int):
    k = int(k)
    m = 1 << k
    cx, cy = D.center
    r = D.radius
    lo_x = max(0, int(math.ldexp(cx - r, k)) - 1)
    hi_x = min(m - 1, int(math.ldexp(cx + r, k)) + 1)
    lo_y = max(0, int(math.ldexp(cy - r, k)) - 1)
    hi_y = min(m - 1, int(math.ldexp(cy + r, k)) + 1)
    ix, iy = np.meshgrid(np.arange(lo_x, hi_x + 1), np.arange(lo_y, hi_y + 1), indexing="ij")
    return ix.ravel(), iy.ravel()


def classify_level(D: DiskRegion, k: int):
    """Index arrays (ix, iy) and class labels of every level-k square meeting D."""
    k = int(k)
    ix, iy = _candidate_indices(D, k)
    meets = cell_meets(k, ix, iy, D)
    ix, iy = ix[meets], iy[meets]
    inside = cell_inside(k, ix, iy, D)
    if k > 0:
        parent_inside = cell_inside(k - 1, ix >> 1, iy >> 1, D)
    else:
        parent_inside = np.ones_like(inside)
    labels = np.where(~inside, SquareClass.BOUNDARY.value,
                      np.where(parent_inside, SquareClass.INTERIOR.value, SquareClass.MAXIMAL.value))
    return ix, iy, labels


def squares_by_class(D: DiskRegion, k: int):
    """(maximal squares, boundary squares) of level k."""
    if k < 0:
        raise ConfigError(f"negative level {k}")
    ix, iy, labels = classify_level(D, k)
    maximal = [DyadicSquare(k, int(a), int(b))
               for a, b, c in zip(ix, iy, labels) if c == SquareClass.MAXIMAL.value]
    boundary = [DyadicSquare(k, int(a), int(b))
                for a, b, c in zip(ix, iy, labels) if c == SquareClass.BOUNDARY.value]
    return maximal, boundary


def ell_level(radius: float) -> int:
    """The level l with radius <= 2^-l < 2 radius."""
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    m, e = math.frexp(radius)
    return 1 - e if m == 0.5 else -e


def _theta_minus_sin(th):
    if th < 1e-3:
        t2 = th * th
        return th * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    return th - math.sin(th)


def _int_h(p, q, R):
    """Integral of sqrt(R^2 - u^2) for u in [p, q], as trapezoid plus segment."""
    hp = math.sqrt(max(R * R - p * p, 0.0))
    hq = math.sqrt(max(R * R - q * q, 0.0))
    # central angle between (p, hp) and (q, hq); atan2 stays accurate near pi
    th = math.atan2(abs(p * hq - q * hp), p * q + hp * hq)
    return 0.5 * (q - p) * (hp + hq) + 0.5 * R * R * _theta_minus_sin(th)


def _unit_overlap(a, b, R):
    """Area of the disk (center (a, b), radius R) inside [0,1]^2."""
    xa, xb = max(0.0, a - R), min(1.0, a + R)
    if xa >= xb:
        return 0.0
    pts = {xa, xb}
    for d in (-b, 1.0 - b):
        if abs(d) < R:
            w = math.sqrt((R - abs(d)) * (R + abs(d)))
            for x in (a - w, a + w):
                if xa < x < xb:
                    pts.add(x)
    pts = sorted(pts)
    total = 0.0
    for p, q in zip(pts[:-1], pts[1:]):
        if q <= p:
            continue
        um = 0.5 * (p + q) - a
        hm = math.sqrt(max(R * R - um * um, 0.0))
        top = b + hm
        bot = b - hm
        up_const = 1.0 if top >= 1.0 else (0.0 if top <= 0.0 else None)
        lo_const = 0.0 if bot <= 0.0 else (1.0 if bot >= 1.0 else None)
        w = q - p
        if up_const is not None and lo_const is not None:
            total += (up_const - lo_const) * w
        elif up_const is None and lo_const is None:
            total += 2.0 * _int_h(p - a, q - a, R)
        elif up_const is None:
            total += (b - lo_const) * w + _int_h(p - a, q - a, R)
        else:
            total += (up_const - b) * w + _int_h(p - a, q - a, R)
    return total


def relative_area(Q: DyadicSquare, D: DiskRegion) -> float:
    """Leb(D n Q) / Leb(Q), exact up to floating-point rounding.

    The overlap is computed in the frame where Q is the unit square; the
    integrand is the clipped chord height, integrated piecewise between the
    points where the circle crosses the horizontal sides.
    """
    s = Q.side
    x0, y0, x1, y1 = Q.bounds
    if bool(cell_inside(Q.level, Q.ix, Q.iy, D)):
        return 1.0
    if not bool(cell_meets(Q.level, Q.ix, Q.iy, D)):
        return 0.0
    a = (D.center[0] - x0) / s
    b = (D.center[1] - y0) / s
    v = _unit_overlap(a, b, D.radius / s)
    return min(1.0, max(0.0, v))


def is_good_boundary(Q: DyadicSquare, D: DiskRegion) -> bool:
    p = relative_area(Q, D)
    return GOOD_LO <= p <= 1.0 - GOOD_LO


def write_squares_csv(path, squares, D: DiskRegion):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "ix", "iy", "class", "relative_area"])
        for Q in squares:
            w.writerow([Q.level, Q.ix, Q.iy, classify_square(Q, D).value,
                        repr(relative_area(Q, D))])
