"""Expected casualties, exceedance curves, scenario totals and rankings."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .consist import ScenarioSpec, ValidationError
from .pmf import DiscretePmf
from .rates import (RateTables, ad_per_shipment, line_haul_per_mile, route_derailment_prob,
                    switching_per_shipment)
from .severity import ModelSet, conditional_chain, context_consist

YARD_COMPONENTS = ("ad", "switching")


class ConsequenceDomainError(ValueError):
    """Release amount outside the casualty table."""


@dataclass(frozen=True)
class ConsequenceModel:
    """Piecewise-linear map from gallons released to expected casualties."""

    gallons: tuple[float, ...]
    casualties: tuple[float, ...]
    scale: float = 1.0
    preset_name: str = "evac-2h"
    calibration: dict | None = None

    def __post_init__(self):
        g = np.asarray(self.gallons, float)
        c = np.asarray(self.casualties, float)
        if g.size < 2 or g.shape != c.shape:
            raise ValueError("need matching gallon and casualty breakpoints")
        if g[0] != 0 or c[0] != 0:
            raise ValueError("casualty function must start at (0, 0)")
        if np.any(np.diff(g) <= 0):
            raise ValueError("gallon breakpoints must increase")
        if np.any(np.diff(c) < 0):
            raise ValueError("casualties must be non-decreasing in gallons")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "gallons", tuple(float(x) for x in g))
        object.__setattr__(self, "casualties", tuple(float(x) for x in c))

    @property
    def max_gallons(self) -> float:
        return self.gallons[-1]

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < 0) or np.any(q > self.max_gallons):
            raise ConsequenceDomainError(
                f"release amounts must lie in [0, {self.max_gallons:g}] gallons")
        return self.scale * np.interp(q, self.gallons, self.casualties)

    def scaled(self, factor: float) -> ConsequenceModel:
        return replace(self, scale=self.scale * factor)

    @classmethod
    def from_dict(cls, d: dict) -> ConsequenceModel:
        try:
            pts = d["breakpoints"]
            return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts),
                       float(d.get("scale", 1.0)), d.get("preset_name", "evac-2h"),
                       d.get("calibrate"))
        except (KeyError, IndexError, TypeError) as e:
            raise ValueError(f"bad consequence preset: {e!r}") from None

    @classmethod
    def load(cls, path: str | Path | None = None) -> ConsequenceModel:
        if path is None:
            text = (resources.files("railrisk") / "data" / "consequence.yaml").read_text()
        else:
            text = Path(path).read_text()
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ValueError(f"{path}: {e}") from None
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: expected a mapping")
        return cls.from_dict(doc)


def exceedance_curve(dist: DiscretePmf, weight: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Grid points q and ``weight * P(Q > q)``."""
    tail = np.cumsum(dist.masses[::-1])[::-1]
    above = np.concatenate([tail[1:], [0.0]])
    return dist.support.astype(float), weight * np.clip(above, 0.0, None)


def exceedance_at(dist: DiscretePmf, q: float, weight: float = 1.0) -> float:
    return weight * dist.sf(q)


def expected_casualties_component(weight: float, dist: DiscretePmf,
                                  model: ConsequenceModel) -> float:
    return weight * dist.expect(model)


@dataclass(frozen=True)
class ComponentRisk:
    component: str
    derailment_weight: float
    conditional_release_dist: DiscretePmf
    expected_casualties: float

    @classmethod
    def build(cls, component: str, weight: float, dist: DiscretePmf,
              model: ConsequenceModel) -> ComponentRisk:
        return cls(component, weight, dist, expected_casualties_component(weight, dist, model))


@dataclass(frozen=True)
class ScenarioRiskReport:
    code: str
    components: dict
    total: float
    rank: int | None = None

    def casualties(self, component: str) -> float:
        c = self.components.get(component)
        return 0.0 if c is None else c.expected_casualties

    @property
    def yard_total(self) -> float:
        return math.fsum(self.casualties(c) for c in YARD_COMPONENTS)

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "rank": self.rank,
            "components": {
                k: {"derailment_weight": c.derailment_weight,
                    "expected_casualties": c.expected_casualties,
                    "p_release": c.conditional_release_dist.sf(0)}
                for k, c in self.components.items()},
            "total": self.total,
        }


def required_components(spec: ScenarioSpec) -> tuple[str, ...]:
    return ("line_haul", "ad") if spec.train_type == "unit" else ("line_haul", "ad", "switching")


def aggregate_scenario(spec: ScenarioSpec, risks: Iterable[ComponentRisk]) -> ScenarioRiskReport:
    comps = {r.component: r for r in risks}
    need = required_components(spec)
    missing = [c for c in need if c not in comps]
    extra = [c for c in comps if c not in need]
    if missing:
        raise ValidationError(f"{spec.code}: missing components {missing}")
    if extra:
        raise ValidationError(f"{spec.code}: components {extra} do not apply")
    ordered = {c: comps[c] for c in need}
    return ScenarioRiskReport(spec.code, ordered,
                              math.fsum(r.expected_casualties for r in ordered.values()))


def rank_reports(reports: Sequence[ScenarioRiskReport]) -> list[ScenarioRiskReport]:
    """Rank 1 is the lowest total; equal totals are ordered by code."""
    order = sorted(reports, key=lambda r: (r.total, r.code))
    return [replace(r, rank=i) for i, r in enumerate(order, start=1)]


def component_weight(spec: ScenarioSpec, component: str, rates: RateTables,
                     poisson: bool = False) -> float:
    """Derailment probability weight per traffic demand."""
    if component == "line_haul":
        return route_derailment_prob(line_haul_per_mile(spec, rates), spec.route_miles,
                                     spec.n_trains, poisson)
    if component == "ad":
        return spec.n_trains * ad_per_shipment(spec, rates)
    if component == "switching":
        sw = switching_per_shipment(spec, rates)
        if sw is None:
            raise ValidationError(f"{spec.code}: no switching component")
        return spec.n_trains * sw
    raise ValueError(f"unknown component {component!r}")


def evaluate_component(spec: ScenarioSpec, component: str, rates: RateTables, models: ModelSet,
                       consequence: ConsequenceModel, speed: float | None = None) -> ComponentRisk:
    ctx, consist = context_consist(spec, component, models,
                                   speed if component == "line_haul" else None)
    chain = conditional_chain(ctx, consist, models)
    return ComponentRisk.build(component, component_weight(spec, component, rates),
                               chain.gallons, consequence)


def evaluate_scenario(spec: ScenarioSpec, rates: RateTables, models: ModelSet,
                      consequence: ConsequenceModel, speed: float | None = None
                      ) -> ScenarioRiskReport:
    return aggregate_scenario(spec, [
        evaluate_component(spec, c, rates, models, consequence, speed)
        for c in required_components(spec)])


def evaluate_scenarios(specs: Iterable[ScenarioSpec], rates: RateTables, models: ModelSet,
                       consequence: ConsequenceModel, speed: float | None = None
                       ) -> list[ScenarioRiskReport]:
    return rank_reports([evaluate_scenario(s, rates, models, consequence, speed) for s in specs])


def calibrate_scale(consequence: ConsequenceModel, spec: ScenarioSpec, component: str,
                    target: float, rates: RateTables, models: ModelSet,
                    speed: float | None = None) -> ConsequenceModel:
    """Rescale the casualty map so one component hits ``target`` exactly."""
    base = evaluate_component(spec, component, rates, models, consequence, speed)
    if base.expected_casualties <= 0:
        raise ValueError("cannot calibrate against a component with zero expected casualties")
    return consequence.scaled(target / base.expected_casualties)


def apply_calibration(consequence: ConsequenceModel, rates: RateTables, models: ModelSet,
                      scenarios: dict[str, ScenarioSpec] | None = None) -> ConsequenceModel:
    """Apply the preset's own ``calibrate`` block, if it has one."""
    cal = consequence.calibration
    if not cal:
        return consequence
    from .consist import PRESETS
    pool = {**PRESETS, **(scenarios or {})}
    spec = pool[cal["scenario"]]
    return calibrate_scale(consequence, spec, cal.get("component", "line_haul"),
                           float(cal["target"]), rates, models, cal.get("speed"))


@dataclass(frozen=True)
class SensitivityRow:
    code: str
    speed: float
    line_haul: float
    yard: float
    total: float
    rank: int


def speed_sensitivity(specs: Iterable[ScenarioSpec], speeds: Iterable[float], rates: RateTables,
                      models: ModelSet, consequence: ConsequenceModel) -> list[SensitivityRow]:
    """Totals per (scenario, line-haul speed); yard moves stay at yard speed."""
    speeds = sorted(set(float(s) for s in speeds))
    if any(s <= 0 for s in speeds):
        raise ValueError("speeds must be positive")
    specs = list(specs)
    yard = {}
    for s in specs:
        yard[s.code] = math.fsum(
            evaluate_component(s, c, rates, models, consequence).expected_casualties
            for c in required_components(s) if c != "line_haul")
    rows = []
    for v in speeds:
        lh = {s.code: evaluate_component(s, "line_haul", rates, models, consequence, v)
              .expected_casualties for s in specs}
        totals = {c: lh[c] + yard[c] for c in lh}
        ranked = sorted(totals, key=lambda c: (totals[c], c))
        rank = {c: i for i, c in enumerate(ranked, start=1)}
        rows.extend(SensitivityRow(s.code, v, lh[s.code], yard[s.code], totals[s.code],
                                   rank[s.code]) for s in specs)
    return rows


def load_reference_values(path: str | Path | None = None) -> dict:
    """Reference case-study casualty figures used for residual reports."""
    if path is None:
        text = (resources.files("railrisk") / "data" / "reference_values.yaml").read_text()
    else:
        text = Path(path).read_text()
    return yaml.safe_load(text)
