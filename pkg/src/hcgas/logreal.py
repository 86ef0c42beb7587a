"""Signed reals stored as (sign, log|x|)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogReal:
    """A real number ``sign * exp(logmag)``.

    Products add log-magnitudes; sums use log-sum-exp anchored at the larger
    magnitude, so values like exp(-1e6) survive arithmetic intact.
    """

    sign: int
    logmag: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or 1, got {self.sign}")
        if self.sign == 0 and self.logmag != -math.inf:
            object.__setattr__(self, "logmag", -math.inf)
        elif self.sign != 0 and math.isnan(self.logmag):
            raise ValueError("logmag is nan")
        elif self.sign != 0 and self.logmag == -math.inf:
            object.__setattr__(self, "sign", 0)

    @classmethod
    def zero(cls) -> LogReal:
        return cls(0, -math.inf)

    @classmethod
    def one(cls) -> LogReal:
        return cls(1, 0.0)

    @classmethod
    def from_log(cls, logmag: float) -> LogReal:
        """Positive value with the given log."""
        logmag = float(logmag)
        if logmag == -math.inf:
            return cls.zero()
        return cls(1, logmag)

    @classmethod
    def from_float(cls, x: float) -> LogReal:
        x = float(x)
        if x == 0.0:
            return cls.zero()
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    def __float__(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.logmag > 709.78:
            return self.sign * math.inf
        return self.sign * math.exp(self.logmag)

    def log(self) -> float:
        """Natural log; defined for nonnegative values (log 0 = -inf)."""
        if self.sign < 0:
            raise ValueError("log of a negative LogReal")
        return self.logmag

    def __neg__(self) -> LogReal:
        return LogReal(-self.sign, self.logmag)

    def __mul__(self, other) -> LogReal:
        other = _coerce(other)
        if self.sign == 0 or other.sign == 0:
            return LogReal.zero()
        return LogReal(self.sign * other.sign, self.logmag + other.logmag)

    __rmul__ = __mul__

    def __truediv__(self, other) -> LogReal:
        other = _coerce(other)
        if other.sign == 0:
            raise ZeroDivisionError("LogReal division by zero")
        if self.sign == 0:
            return LogReal.zero()
        return LogReal(self.sign * other.sign, self.logmag - other.logmag)

    def __add__(self, other) -> LogReal:
        other = _coerce(other)
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        big, small = (self, other) if self.logmag >= other.logmag else (other, self)
        d = small.logmag - big.logmag
        if big.sign == small.sign:
            return LogReal(big.sign, big.logmag + math.log1p(math.exp(d)))
        if d == 0.0:
            return LogReal.zero()
        return LogReal(big.sign, big.logmag + math.log1p(-math.exp(d)))

    __radd__ = __add__

    def __sub__(self, other) -> LogReal:
        return self + (-_coerce(other))

    def __rsub__(self, other) -> LogReal:
        return _coerce(other) - self

    def isclose(self, other, rel: float = 1e-12) -> bool:
        """Relative closeness, compared on the log scale."""
        other = _coerce(other)
        if self.sign != other.sign:
            return False
        if self.sign == 0:
            return True
        return abs(self.logmag - other.logmag) <= rel


def _coerce(x) -> LogReal:
    if isinstance(x, LogReal):
        return x
    return LogReal.from_float(x)


def lse(a, axis=None):
    """log(sum(exp(a))) that returns -inf on empty or all -inf input."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return -np.inf
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)
