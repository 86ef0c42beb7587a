"""Hierarchical energy of a configuration, in pairwise and dyadic form."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .hierarchy import bit_length64, fixed64

MAX_LEVEL = 64


@dataclass(frozen=True)
class Configuration:
    """Ordered points in [0,1)^2, pairwise distinct at 64-bit resolution."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size and (np.any(pts < 0.0) or np.any(pts >= 1.0) or not np.all(np.isfinite(pts))):
            raise ConfigError("points must lie in [0, 1)^2")
        fx, fy = fixed64(pts[:, 0]), fixed64(pts[:, 1])
        if len(np.unique(np.stack([fx, fy], axis=1), axis=0)) != len(pts):
            raise DegenerateInputError("configuration has coincident points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        return isinstance(other, Configuration) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


def _points(c):
    if isinstance(c, Configuration):
        return c.points
    return np.asarray(c, dtype=np.float64).reshape(-1, 2)


def pairwise_energy(c) -> int:
    """Sum of hierarchical distances over unordered pairs."""
    pts = _points(c)
    n = len(pts)
    if n < 2:
        return 0
    fx, fy = fixed64(pts[:, 0]), fixed64(pts[:, 1])
    total = 0
    for i in range(n - 1):
        lx = bit_length64(fx[i] ^ fx[i + 1:])
        ly = bit_length64(fy[i] ^ fy[i + 1:])
        common = 64 - np.maximum(lx, ly)
        if np.any(common >= MAX_LEVEL):
            raise DegenerateInputError(f"point {i} coincides with another to 64 bits")
        total += int(np.sum(1 + common))
    return total


def dyadic_energy(c) -> int:
    """C(n,2) + sum over levels j >= 1 and squares Q of C(count(Q), 2)."""
    pts = _points(c)
    n = len(pts)
    if n < 2:
        return 0
    fx, fy = fixed64(pts[:, 0]), fixed64(pts[:, 1])
    total = n * (n - 1) // 2
    for j in range(1, MAX_LEVEL + 1):
        sh = np.uint64(64 - j)
        cells = np.stack([fx >> sh, fy >> sh], axis=1)
        _, counts = np.unique(cells, axis=0, return_counts=True)
        counts = counts.astype(object)
        if counts.max() <= 1:
            return total
        total += int(np.sum(counts * (counts - 1) // 2))
    raise DegenerateInputError("points still share a square at level 64")


def energy_delta(c, i: int, new_point) -> int:
    """Change in energy when point i moves to new_point."""
    pts = _points(c)
    fx, fy = fixed64(pts[:, 0]), fixed64(pts[:, 1])
    nx, ny = fixed64(float(new_point[0])), fixed64(float(new_point[1]))
    others = np.arange(len(pts)) != i

    def dist(ax, ay):
        common = 64 - np.maximum(bit_length64(ax ^ fx[others]), bit_length64(ay ^ fy[others]))
        if np.any(common >= MAX_LEVEL):
            raise DegenerateInputError("move makes two points coincide")
        return int(np.sum(1 + common))

    return dist(nx, ny) - dist(fx[i], fy[i])


def write_configuration_csv(path, c):
    pts = _points(c)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(pts):
            w.writerow([i, f"{x:.17g}", f"{y:.17g}"])


def read_configuration_csv(path) -> Configuration:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["index"]))
    return Configuration(np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2))
