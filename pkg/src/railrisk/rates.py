"""Derailment likelihoods for line-haul, arrival/departure and switching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .consist import (ScenarioSpec, TrainConsist, ValidationError, build_consist,
                      gross_tonnage, shipment_plan)

METRICS = ("train_mile", "car_mile", "ton_mile")
MODES = ("per_shipment_mile", "per_exposure_unit")


class RateFileError(ValueError):
    """Malformed rate table."""


def _metric(raw: str) -> str:
    m = raw.strip().lower().replace("-", "_").replace(" ", "_")
    if m not in METRICS:
        raise RateFileError(f"unknown metric {raw!r}")
    return m


def _nonneg(raw: str, what: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise RateFileError(f"{what}: not a number: {raw!r}") from None
    if not math.isfinite(v) or v < 0:
        raise RateFileError(f"{what}: must be finite and >= 0, got {raw!r}")
    return v


def _rows(path, header: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return []
        if tuple(c.strip() for c in first) != header:
            raise RateFileError(f"{path}: expected header {','.join(header)}, got {first}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RateFileError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            out.append({k: v.strip() for k, v in zip(header, row)} | {"_line": lineno})
        return out


@dataclass(frozen=True)
class CauseRate:
    cause: str
    metric: str
    value: float


@dataclass(frozen=True)
class CauseRateTable:
    rows: tuple[CauseRate, ...] = ()
    mode: str = "per_shipment_mile"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def total(self, metric: str | None = None) -> float:
        return math.fsum(r.value for r in self.rows if metric is None or r.metric == metric)


def load_cause_rates(path: str | Path, mode: str = "per_shipment_mile") -> CauseRateTable:
    rows = []
    seen = set()
    for r in _rows(path, ("cause", "metric", "value")):
        where = f"{path}:{r['_line']}"
        if not r["cause"]:
            raise RateFileError(f"{where}: empty cause name")
        if r["cause"] in seen:
            raise RateFileError(f"{where}: duplicate cause {r['cause']!r}")
        seen.add(r["cause"])
        try:
            metric = _metric(r["metric"])
        except RateFileError as e:
            raise RateFileError(f"{where}: {e}") from None
        rows.append(CauseRate(r["cause"], metric, _nonneg(r["value"], where)))
    return CauseRateTable(tuple(rows), mode)


def mainline_derailment_prob(consist: TrainConsist, segment_miles: float,
                             table: CauseRateTable, count_locomotives: bool = True) -> float:
    """Probability that one train derails on a segment.

    Tables of already-converted per-shipment-mile values are summed and
    scaled by length.  Raw rates are multiplied by the exposure matching each
    cause's metric: train-miles, vehicle-miles or gross-ton-miles.
    """
    if segment_miles < 0:
        raise ValueError("segment_miles must be >= 0")
    if table.mode == "per_shipment_mile":
        return segment_miles * table.total()
    vehicles = len(consist) if count_locomotives else consist.railcar_count
    tons = gross_tonnage(consist)
    if not count_locomotives:
        tons -= sum(v.gross_weight for v in consist.vehicles if v.kind.value == "locomotive")
    exposure = {"train_mile": 1.0, "car_mile": float(vehicles), "ton_mile": tons}
    return segment_miles * math.fsum(r.value * exposure[r.metric] for r in table.rows)


def route_derailment_prob(per_mile: float, route_miles: float, n_trains: int,
                          poisson: bool = False) -> float:
    """Expected derailments over a route for ``n_trains`` shipments.

    With ``poisson`` the probability of at least one derailment is returned
    instead of the linear expectation.
    """
    if per_mile < 0 or route_miles < 0 or n_trains < 0:
        raise ValueError("arguments must be >= 0")
    lam = per_mile * route_miles * n_trains
    return -math.expm1(-lam) if poisson else lam


@dataclass(frozen=True)
class YardRates:
    ad_train_rate: float
    ad_car_rate: float
    switch_car_rate: float | None = None


@dataclass(frozen=True)
class YardRateTable:
    """Rates per million events, keyed by ``(train_type, yard_type)``."""

    entries: dict = field(default_factory=dict)

    def get(self, train_type: str, yard_type: str) -> YardRates:
        try:
            return self.entries[(train_type, yard_type)]
        except KeyError:
            raise KeyError(f"no yard rates for ({train_type}, {yard_type})") from None

    def switch_rate(self, yard_type: str) -> float:
        for (_, yt), r in sorted(self.entries.items()):
            if yt == yard_type and r.switch_car_rate is not None:
                return r.switch_car_rate
        raise KeyError(f"no switching rate for yard type {yard_type!r}")


def load_yard_rates(path: str | Path) -> YardRateTable:
    entries = {}
    header = ("train_type", "yard_type", "ad_train_rate", "ad_car_rate", "switch_car_rate")
    for r in _rows(path, header):
        where = f"{path}:{r['_line']}"
        key = (r["train_type"], r["yard_type"])
        if key in entries:
            raise RateFileError(f"{where}: duplicate key {key}")
        sw = _nonneg(r["switch_car_rate"], where) if r["switch_car_rate"] else None
        entries[key] = YardRates(_nonneg(r["ad_train_rate"], where),
                                 _nonneg(r["ad_car_rate"], where), sw)
    return YardRateTable(entries)


@dataclass(frozen=True)
class MetricProportions:
    """Share of yard derailments attributable to train-count vs car-count causes."""

    shares: dict = field(default_factory=dict)

    def __post_init__(self):
        for tt, (a, b) in self.shares.items():
            if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
                raise ValueError(f"shares for {tt} must be >= 0 and sum to 1")

    def get(self, train_type: str) -> tuple[float, float]:
        try:
            return self.shares[train_type]
        except KeyError:
            raise KeyError(f"no metric proportions for {train_type!r}") from None


def load_proportions(path: str | Path) -> MetricProportions:
    shares = {}
    for r in _rows(path, ("train_type", "train_share", "car_share")):
        where = f"{path}:{r['_line']}"
        if r["train_type"] in shares:
            raise RateFileError(f"{where}: duplicate train type")
        shares[r["train_type"]] = (_nonneg(r["train_share"], where), _nonneg(r["car_share"], where))
    try:
        return MetricProportions(shares)
    except ValueError as e:
        raise RateFileError(f"{path}: {e}") from None


def ad_terms(train_type: str, yard_type: str, cars: int, ad_events: int,
             rates: YardRateTable) -> tuple[float, float]:
    """Train-count and car-count A/D derailment probabilities before weighting."""
    if cars < 1 or ad_events < 0:
        raise ValueError("need cars >= 1 and ad_events >= 0")
    r = rates.get(train_type, yard_type)
    return r.ad_train_rate * 1e-6 * ad_events, r.ad_car_rate * 1e-6 * cars * ad_events


def ad_derailment_prob(train_type: str, yard_type: str, cars: int, ad_events: int,
                       rates: YardRateTable, shares: MetricProportions) -> float:
    by_train, by_car = ad_terms(train_type, yard_type, cars, ad_events, rates)
    s_train, s_car = shares.get(train_type)
    return s_train * by_train + s_car * by_car


def switching_derailment_prob(cut_size: int, events: int, yard_type: str,
                              rates: YardRateTable) -> float:
    if cut_size < 1 or events < 0:
        raise ValueError("need cut_size >= 1 and events >= 0")
    return rates.switch_rate(yard_type) * 1e-6 * cut_size * events


DATA = resources.files("railrisk") / "data"


@dataclass(frozen=True)
class RateTables:
    cause: dict  # train_type -> CauseRateTable
    yard: YardRateTable
    shares: MetricProportions
    count_locomotives: bool = True

    @classmethod
    def load(cls, unit_causes=None, manifest_causes=None, yard=None, proportions=None,
             mode: str = "per_shipment_mile") -> RateTables:
        return cls(
            {"unit": load_cause_rates(unit_causes or DATA / "cause_rates_unit.csv", mode),
             "manifest": load_cause_rates(manifest_causes or DATA / "cause_rates_manifest.csv", mode)},
            load_yard_rates(yard or DATA / "yard_rates.csv"),
            load_proportions(proportions or DATA / "proportions.csv"),
        )

    def causes_for(self, train_type: str) -> CauseRateTable:
        try:
            return self.cause[train_type]
        except KeyError:
            raise KeyError(f"no cause table for {train_type!r}") from None


def line_haul_per_mile(spec: ScenarioSpec, tables: RateTables) -> float:
    consist = build_consist(spec, "mainline")
    return mainline_derailment_prob(consist, 1.0, tables.causes_for(spec.train_type),
                                    tables.count_locomotives)


def ad_per_shipment(spec: ScenarioSpec, tables: RateTables) -> float:
    plan = shipment_plan(spec)
    return ad_derailment_prob(spec.train_type, spec.yard_type, spec.total_railcars,
                              plan.ad_events_per_shipment, tables.yard, tables.shares)


def switching_per_shipment(spec: ScenarioSpec, tables: RateTables) -> float | None:
    plan = shipment_plan(spec)
    if spec.train_type == "unit":
        return None
    return switching_derailment_prob(plan.cut_size_switched, plan.switching_events_per_shipment,
                                     spec.yard_type, tables.yard)


def summarize_likelihoods(spec: ScenarioSpec, tables: RateTables) -> dict[str, float]:
    """Per-shipment derailment probabilities; line-haul is per mile."""
    out = {
        "line_haul_per_mile": line_haul_per_mile(spec, tables),
        "ad_per_shipment": ad_per_shipment(spec, tables),
    }
    sw = switching_per_shipment(spec, tables)
    if sw is not None:
        out["switching_per_shipment"] = sw
    return out


__all__ = [
    "CauseRate", "CauseRateTable", "MetricProportions", "RateFileError", "RateTables",
    "ValidationError", "YardRateTable", "YardRates", "ad_derailment_prob", "ad_terms",
    "load_cause_rates", "load_proportions", "load_yard_rates", "mainline_derailment_prob",
    "route_derailment_prob", "summarize_likelihoods", "switching_derailment_prob",
]
