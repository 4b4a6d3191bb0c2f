"""Fit POD and severity parameters to target conditional probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import least_squares

from .consist import PRESETS, ScenarioSpec
from .severity import ModelConfigError, ModelSet, PodModel, conditional_chain, context_consist

STATISTICS = ("p_zero_tank", "mean_tank", "p_zero_release")
_SPEC_FIELDS = ("yard_type", "block_placement", "switching_approach", "tank_block_size",
                "total_railcars", "en_masse_leading_cars")


@dataclass(frozen=True)
class Anchor:
    component: str
    spec: ScenarioSpec
    statistic: str
    target: float
    label: str = ""

    @classmethod
    def from_mapping(cls, d: dict) -> Anchor:
        try:
            ctx = dict(d["context"])
            stat, target = d["statistic"], float(d["target"])
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"bad anchor entry {d!r}: {e}") from None
        if stat not in STATISTICS:
            raise ValueError(f"unknown anchor statistic {stat!r}")
        component = ctx.pop("component")
        base = PRESETS[ctx.pop("scenario")] if "scenario" in ctx else None
        train_type = ctx.pop("train_type", base.train_type if base else "manifest")
        if base is None:
            base = PRESETS["U-T"] if train_type == "unit" else PRESETS["MBAF"]
        unknown = set(ctx) - set(_SPEC_FIELDS)
        if unknown:
            raise ValueError(f"unknown anchor context keys {sorted(unknown)}")
        spec = replace(base, code="anchor", yard_sequence=(), **ctx)
        label = d.get("label") or ", ".join(
            [component, train_type] + [f"{k}={v}" for k, v in sorted(ctx.items())])
        return cls(component, spec, stat, target, label)


def load_anchors(path: str | Path) -> list[Anchor]:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping with an 'anchors' list")
    return [Anchor.from_mapping(a) for a in doc.get("anchors") or []]


def anchor_statistic(anchor: Anchor, models: ModelSet) -> float:
    ctx, consist = context_consist(anchor.spec, anchor.component, models)
    chain = conditional_chain(ctx, consist, models)
    if anchor.statistic == "p_zero_tank":
        return chain.tank.prob(0)
    if anchor.statistic == "mean_tank":
        return chain.tank.mean()
    return chain.release.prob(0)


# Free parameters are stored in unconstrained coordinates so the optimiser
# cannot leave each family's admissible shape.

def _pod_to_free(key: str, m: PodModel) -> list[float]:
    if key.split(".")[1:2] == ["unit"]:
        return [math.log(m.a / (1 - m.a)) if m.a < 1 else 6.0, math.log(max(m.b - 1, 1e-6))]
    return [math.log(max(m.a - 1, 1e-6)), math.log(m.b)]


def _pod_from_free(key: str, m: PodModel, u) -> PodModel:
    if key.split(".")[1:2] == ["unit"]:
        return replace(m, a=1 / (1 + math.exp(-u[0])), b=1 + math.exp(u[1]))
    return replace(m, a=1 + math.exp(u[0]), b=math.exp(u[1]))


@dataclass
class _Slot:
    kind: str  # pod | severity
    key: str
    size: int


def _free_slots(anchors: list[Anchor], models: ModelSet) -> list[_Slot]:
    slots: dict[tuple[str, str], _Slot] = {}
    for a in anchors:
        ctx, _ = context_consist(a.spec, a.component, models)
        pk = next(k for k in ctx.keys() if k in models.pod)
        if models.pod[pk].family == "beta" and len(pk.split(".")) > 1:
            slots.setdefault(("pod", pk), _Slot("pod", pk, 2))
        sk = next(k for k in ctx.keys() if k in models.severity)
        if models.severity[sk].family == "truncated_geometric":
            slots.setdefault(("severity", sk), _Slot("severity", sk, 1))
    return list(slots.values())


def _pack(slots, models: ModelSet) -> np.ndarray:
    x = []
    for s in slots:
        if s.kind == "pod":
            x += _pod_to_free(s.key, models.pod[s.key])
        else:
            x.append(math.log(max(models.severity[s.key].mean - 1.0, 1e-6)))
    return np.array(x)


def _unpack(slots, models: ModelSet, x) -> ModelSet:
    pod, sev, i = {}, {}, 0
    for s in slots:
        u = x[i: i + s.size]
        i += s.size
        if s.kind == "pod":
            pod[s.key] = _pod_from_free(s.key, models.pod[s.key], u)
        else:
            sev[s.key] = replace(models.severity[s.key], mean=1.0 + math.exp(u[0]))
    return models.with_params(pod, sev)


@dataclass(frozen=True)
class CalibrationResult:
    models: ModelSet
    anchors: tuple[Anchor, ...]
    fitted: tuple[float, ...]
    tolerance: float

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(f - a.target for f, a in zip(self.fitted, self.anchors))

    @property
    def infeasible(self) -> list[Anchor]:
        return [a for a, r in zip(self.anchors, self.residuals) if abs(r) > self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.infeasible

    def rows(self) -> list[dict]:
        return [{"anchor": a.label, "statistic": a.statistic, "target": a.target,
                 "fitted": f, "residual": f - a.target,
                 "status": "ok" if abs(f - a.target) <= self.tolerance else "infeasible"}
                for a, f in zip(self.anchors, self.fitted)]


def calibrate(anchors: list[Anchor], models: ModelSet, tolerance: float = 0.02,
              ridge: float = 1e-4) -> CalibrationResult:
    """Least-squares fit of the POD/severity parameters the anchors depend on.

    A small ridge pull towards the starting values picks one solution when
    there are more free parameters than anchors.  Anchors still off by more
    than ``tolerance`` afterwards are reported as infeasible.
    """
    anchors = list(anchors)
    if not anchors:
        return CalibrationResult(models, (), (), tolerance)
    slots = _free_slots(anchors, models)
    if not slots:
        raise ModelConfigError("anchors touch no parametric POD or severity model")
    x0 = _pack(slots, models)
    w = math.sqrt(ridge)

    def resid(x):
        try:
            m = _unpack(slots, models, x)
        except ModelConfigError:
            return np.full(len(anchors) + x.size, 1e3)
        r = [anchor_statistic(a, m) - a.target for a in anchors]
        return np.concatenate([r, w * (x - x0)])

    sol = least_squares(resid, x0, method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                        max_nfev=2000, diff_step=1e-6)
    fitted_models = _unpack(slots, models, sol.x)
    fitted = tuple(anchor_statistic(a, fitted_models) for a in anchors)
    return CalibrationResult(fitted_models, tuple(anchors), fitted, tolerance)


def statistic_table(anchors: list[Anchor], models: ModelSet) -> list[tuple[str, float, float]]:
    return [(a.label, a.target, anchor_statistic(a, models)) for a in anchors]


__all__ = ["Anchor", "CalibrationResult", "anchor_statistic", "calibrate", "load_anchors",
           "statistic_table"]
