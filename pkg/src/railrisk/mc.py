"""Seeded Monte Carlo of the derailment -> release chain.

Used as an oracle for the analytic distributions.  Trials are split into
fixed-size blocks; block ``k`` draws from the stream keyed by ``(seed, k)``,
so results do not depend on how many workers run the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .consist import ScenarioSpec, TrainConsist
from .pmf import DiscretePmf
from .severity import (ModelSet, OperationalContext, context_consist, pod_for_consist)

BLOCK_SIZE = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    trials: int
    seed: int = 42
    workers: int = 1
    derail_prob: float = 1.0
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 <= self.derail_prob <= 1.0:
            raise ValueError("derail_prob must lie in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    tank_counts: np.ndarray
    release_counts: np.ndarray
    gallon_counts: np.ndarray
    gallon_step: int
    derailments: int

    def _pmf(self, counts, step=1) -> DiscretePmf:
        return DiscretePmf(counts / self.config.trials, step)

    @property
    def tank(self) -> DiscretePmf:
        return self._pmf(self.tank_counts)

    @property
    def release(self) -> DiscretePmf:
        return self._pmf(self.release_counts)

    @property
    def gallons(self) -> DiscretePmf:
        return self._pmf(self.gallon_counts, self.gallon_step)

    def _estimate(self, counts, step=1) -> Estimate:
        n = self.config.trials
        v = np.arange(counts.size, dtype=float) * step
        m = float(np.dot(v, counts)) / n
        var = float(np.dot((v - m) ** 2, counts)) / max(n - 1, 1)
        return Estimate(m, math.sqrt(var / n))

    def estimates(self) -> dict[str, Estimate]:
        return {"tank": self._estimate(self.tank_counts),
                "release": self._estimate(self.release_counts),
                "gallons": self._estimate(self.gallon_counts, self.gallon_step)}


def _row_cdfs(models: ModelSet, ctx: OperationalContext, n: int) -> np.ndarray:
    M = models.severity_model(ctx).matrix(n, ctx.speed)
    cdf = np.cumsum(M, axis=1)
    for i in range(n):
        last = np.flatnonzero(M[i])[-1]
        cdf[i, last:] = 1.0
    return cdf


def _run_block(k, size, seed, derail_prob, pod_cdf, sev_cdf, prefix, p, car_vals, car_cdf,
               sizes):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))
    n = pod_cdf.size
    occurs = rng.random(size) < derail_prob
    pod = np.minimum(np.searchsorted(pod_cdf, rng.random(size), side="right"), n - 1)
    u = rng.random(size)
    x = (sev_cdf[pod] < u[:, None]).sum(axis=1) + 1
    t = np.where(occurs, prefix[pod + x] - prefix[pod], 0)
    r = rng.binomial(t, p)
    if car_vals.size == 1:
        g = r * car_vals[0]
    else:
        draws = np.minimum(np.searchsorted(car_cdf, rng.random(int(r.sum())), side="right"),
                           car_vals.size - 1)
        g = np.bincount(np.repeat(np.arange(size), r), weights=car_vals[draws], minlength=size)
        g = g.astype(np.int64)
    return (np.bincount(t, minlength=sizes[0]), np.bincount(r, minlength=sizes[0]),
            np.bincount(g, minlength=sizes[1]), int(occurs.sum()))


def simulate(config: SimConfig, models: ModelSet, ctx: OperationalContext,
             consist: TrainConsist) -> SimResult:
    """Sample POD, cars derailed, tank overlap, per-car release and amount."""
    n = len(consist)
    pod_cdf = np.cumsum(pod_for_consist(ctx, consist, models).pmf)
    sev_cdf = _row_cdfs(models, ctx, n)
    prefix = np.concatenate([[0], np.cumsum(consist.tank_mask)]).astype(np.int64)
    p = models.release.cpr(ctx)
    per_car = models.amount.per_car()
    step = per_car.step
    nz = np.flatnonzero(per_car.masses)
    car_vals = nz.astype(np.int64)  # in grid units
    car_cdf = np.cumsum(per_car.masses[nz])
    car_cdf[-1] = 1.0
    n_tank = int(prefix[-1])
    sizes = (n_tank + 1, n_tank * int(car_vals.max()) + 1)

    blocks = []
    left, k = config.trials, 0
    while left > 0:
        blocks.append((k, min(config.block_size, left)))
        left -= blocks[-1][1]
        k += 1

    def job(b):
        return _run_block(b[0], b[1], config.seed, config.derail_prob, pod_cdf, sev_cdf,
                          prefix, p, car_vals, car_cdf, sizes)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            parts = list(ex.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]
    tank = sum(x[0] for x in parts)
    rel = sum(x[1] for x in parts)
    gal = sum(x[2] for x in parts)
    return SimResult(config, tank, rel, gal, step, sum(x[3] for x in parts))


def simulate_component(config: SimConfig, spec: ScenarioSpec, component: str,
                       models: ModelSet, speed: float | None = None) -> SimResult:
    ctx, consist = context_consist(spec, component, models,
                                   speed if component == "line_haul" else None)
    return simulate(config, models, ctx, consist)


# --- comparison --------------------------------------------------------------

@dataclass(frozen=True)
class PointCheck:
    support: str
    analytic: float
    empirical: float
    stderr: float
    z: float
    passed: bool


@dataclass(frozen=True)
class CompareReport:
    points: tuple[PointCheck, ...]
    threshold: float
    trials: int
    chi2: float
    dof: int
    low_power: bool

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    @property
    def max_abs_z(self) -> float:
        return max((abs(p.z) for p in self.points), default=0.0)

    @property
    def status(self) -> str:
        # too few trials to call either way: flag it, never fail it
        if self.low_power:
            return "low-power"
        return "pass" if self.passed else "fail"


def _z(diff: float, se: float) -> float:
    if diff == 0.0:
        return 0.0
    return math.copysign(math.inf, diff) if se == 0.0 else diff / se


def familywise_threshold(tolerance_sigma: float, m: int) -> float:
    """Per-point |z| threshold giving ``m`` independent checks the same
    overall false-alarm rate as one check at ``tolerance_sigma``."""
    if m <= 1:
        return tolerance_sigma
    alpha = 2.0 * stats.norm.sf(tolerance_sigma)
    per = -math.expm1(math.log1p(-alpha) / m)
    return float(stats.norm.isf(per / 2.0))


def compare(analytic: DiscretePmf, empirical: DiscretePmf, trials: int,
            tolerance_sigma: float = 3.0, familywise: bool = False,
            min_expected: float = 5.0, low_power_trials: int = 1000) -> CompareReport:
    """Check each analytic mass against its empirical frequency.

    Support points whose expected count ``trials * mass`` is below
    ``min_expected`` are pooled into one tail bin, where the normal
    approximation to the binomial count holds.
    """
    if analytic.step != empirical.step:
        raise ValueError("analytic and empirical distributions use different grids")
    size = max(analytic.masses.size, empirical.masses.size)
    a = np.pad(analytic.masses, (0, size - analytic.masses.size))
    e = np.pad(empirical.masses, (0, size - empirical.masses.size))
    big = a * trials >= min_expected
    bins = [(str(int(k) * analytic.step), a[k], e[k]) for k in np.flatnonzero(big)]
    if (~big).any():
        bins.append(("pooled", float(a[~big].sum()), float(e[~big].sum())))
    threshold = familywise_threshold(tolerance_sigma, len(bins)) if familywise else tolerance_sigma
    points = []
    chi2 = 0.0
    for label, pa, pe in bins:
        se = math.sqrt(max(pa * (1.0 - pa), 0.0) / trials)
        z = _z(pe - pa, se)
        points.append(PointCheck(label, float(pa), float(pe), se, float(z), abs(z) <= threshold))
        if pa > 0:
            chi2 += trials * (pe - pa) ** 2 / pa
    low_power = trials < low_power_trials or not big.any()
    return CompareReport(tuple(points), float(threshold), trials, chi2, max(len(bins) - 1, 0), low_power)


def check_mean(analytic: float, est: Estimate, tolerance_sigma: float = 3.0) -> PointCheck:
    z = _z(est.mean - analytic, est.stderr)
    return PointCheck("mean", analytic, est.mean, est.stderr, z, abs(z) <= tolerance_sigma)
