"""Discrete probability mass functions on a uniform integer grid.

Counts (cars derailed, tank cars releasing) live on a grid with step 1; gallon
totals use a coarser step (1,000 gallons by default).  Convolution is done by
direct summation so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np


class GridOverflowError(ValueError):
    """Raised when a distribution would extend past the configured grid."""


@dataclass(frozen=True, eq=False)
class DiscretePmf:
    """Masses on the grid ``0, step, 2*step, ...``.

    ``declared_total`` is the mass the distribution is supposed to carry.  It
    is 1 for full conditionals; sub-distributions that hold the zero outcome
    elsewhere declare less.
    """

    masses: np.ndarray
    step: int = 1
    declared_total: float = 1.0

    def __post_init__(self):
        m = np.array(self.masses, dtype=float, copy=True)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("masses must be a non-empty 1-D array")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be finite and non-negative")
        if self.step < 1:
            raise ValueError("step must be a positive integer")
        if m.sum() > 1.0 + 1e-12:
            raise ValueError(f"total mass {m.sum()!r} exceeds 1")
        # drop trailing zeros so equal distributions share a shape
        nz = np.flatnonzero(m)
        m = m[: nz[-1] + 1] if nz.size else m[:1]
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @classmethod
    def point(cls, value: int = 0, step: int = 1) -> DiscretePmf:
        if value % step:
            raise ValueError(f"{value} is not on the grid with step {step}")
        m = np.zeros(value // step + 1)
        m[-1] = 1.0
        return cls(m, step)

    @classmethod
    def from_dict(cls, mapping: Mapping[int, float], step: int = 1,
                  declared_total: float = 1.0) -> DiscretePmf:
        if not mapping:
            raise ValueError("empty mapping")
        idx = {}
        for k, v in mapping.items():
            if k < 0 or k % step:
                raise ValueError(f"support point {k} is not on the grid with step {step}")
            idx[k // step] = idx.get(k // step, 0.0) + float(v)
        m = np.zeros(max(idx) + 1)
        for i, v in idx.items():
            m[i] = v
        return cls(m, step, declared_total)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.masses.size, dtype=np.int64) * self.step

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.total - self.declared_total) <= tol

    def check_normalized(self, tol: float = 1e-9) -> None:
        if not self.is_normalized(tol):
            raise ValueError(
                f"mass {self.total!r} differs from declared total {self.declared_total!r}")

    def prob(self, value: int) -> float:
        if value % self.step or value < 0:
            return 0.0
        i = value // self.step
        return float(self.masses[i]) if i < self.masses.size else 0.0

    def mean(self) -> float:
        return float(np.dot(self.support, self.masses))

    def expect(self, fn) -> float:
        return float(np.dot(np.asarray(fn(self.support), dtype=float), self.masses))

    def sf(self, value: float) -> float:
        """Mass strictly above ``value``."""
        return float(self.masses[self.support > value].sum())

    def to_dict(self, drop_zeros: bool = True) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.support, self.masses)
                if v or not drop_zeros}

    def allclose(self, other: DiscretePmf, atol: float = 1e-12) -> bool:
        if self.step != other.step:
            return False
        n = max(self.masses.size, other.masses.size)
        a = np.pad(self.masses, (0, n - self.masses.size))
        b = np.pad(other.masses, (0, n - other.masses.size))
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))

    def __repr__(self):
        items = ", ".join(f"{k}: {v:.6g}" for k, v in list(self.to_dict().items())[:8])
        more = ", ..." if np.count_nonzero(self.masses) > 8 else ""
        return f"DiscretePmf({{{items}{more}}}, step={self.step})"


def convolve(a: DiscretePmf, b: DiscretePmf) -> DiscretePmf:
    if a.step != b.step:
        raise ValueError("cannot convolve distributions on different grids")
    return DiscretePmf(np.convolve(a.masses, b.masses), a.step,
                       a.declared_total * b.declared_total)


def binomial_mixture(count_masses: np.ndarray, p: float) -> np.ndarray:
    """Masses of R where R | T=t ~ Binomial(t, p) and T has ``count_masses``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p!r} outside [0, 1]")
    count_masses = np.asarray(count_masses, dtype=float)
    out = np.zeros(count_masses.size)
    for t, w in enumerate(count_masses):
        if w == 0.0:
            continue
        r = np.arange(t + 1)
        comb = np.array([math.comb(t, k) for k in r], dtype=float)
        # 0.0 ** 0 == 1.0, so the p in {0, 1} edges come out right
        out[: t + 1] += w * comb * p ** r * (1.0 - p) ** (t - r)
    return out


def compound(count: DiscretePmf, per_unit: DiscretePmf,
             max_value: int | None = None) -> DiscretePmf:
    """Distribution of a sum of ``count`` iid draws from ``per_unit``.

    ``count`` lives on the unit grid; the result lives on ``per_unit``'s grid.
    """
    if count.step != 1:
        raise ValueError("count distribution must live on the unit grid")
    step = per_unit.step
    limit = None if max_value is None else max_value // step
    acc = np.array([1.0])
    out = np.zeros(1)
    out[0] = count.masses[0]
    for r in range(1, count.masses.size):
        acc = np.convolve(acc, per_unit.masses)
        w = count.masses[r]
        if w == 0.0:
            continue
        hi = np.flatnonzero(acc)[-1]
        if limit is not None and hi > limit:
            raise GridOverflowError(
                f"{r} units reach {hi * step} which exceeds the {max_value} grid limit")
        if acc.size > out.size:
            out = np.pad(out, (0, acc.size - out.size))
        out[: acc.size] += w * acc
    return DiscretePmf(out, step, count.declared_total)
