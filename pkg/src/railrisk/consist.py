"""Trains, scenarios and shipment plans."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml

LOCOMOTIVE_TONS = 212.5
RAILCAR_TONS = 143.0
MAINLINE_LOCOMOTIVES = 5
EN_MASSE_LEADING_CARS = 19


class ValidationError(ValueError):
    """Inconsistent scenario, plan or configuration."""


class Kind(str, Enum):
    LOCOMOTIVE = "locomotive"
    TANK = "tank_car"
    NON_TANK = "non_tank_car"


@dataclass(frozen=True)
class VehicleKind:
    kind: Kind
    gross_weight: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.gross_weight > 0:
            raise ValidationError(f"gross weight must be positive, got {self.gross_weight}")


LOCOMOTIVE = VehicleKind(Kind.LOCOMOTIVE, LOCOMOTIVE_TONS)
TANK_CAR = VehicleKind(Kind.TANK, RAILCAR_TONS)
NON_TANK_CAR = VehicleKind(Kind.NON_TANK, RAILCAR_TONS)


@dataclass(frozen=True)
class TrainConsist:
    """Ordered vehicles, position 1 at the front."""

    vehicles: tuple[VehicleKind, ...]
    view: str = "mainline"

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        if self.view not in ("mainline", "yard"):
            raise ValidationError(f"unknown view {self.view!r}")

    def __len__(self):
        return len(self.vehicles)

    @property
    def tank_mask(self) -> np.ndarray:
        return np.array([v.kind is Kind.TANK for v in self.vehicles], dtype=bool)

    @property
    def locomotive_count(self) -> int:
        return sum(v.kind is Kind.LOCOMOTIVE for v in self.vehicles)

    @property
    def railcar_count(self) -> int:
        return len(self.vehicles) - self.locomotive_count

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "kind", "weight"])
        for i, v in enumerate(self.vehicles, start=1):
            w.writerow([i, v.kind.value, v.gross_weight])
        return buf.getvalue()


def tank_positions(consist: TrainConsist) -> tuple[int, ...]:
    return tuple(int(i) + 1 for i in np.flatnonzero(consist.tank_mask))


def gross_tonnage(consist: TrainConsist) -> float:
    return float(sum(v.gross_weight for v in consist.vehicles))


@dataclass(frozen=True)
class YardStop:
    role: str  # origin | intermediate | destination
    yard_type: str

    def __post_init__(self):
        if self.role not in ("origin", "intermediate", "destination"):
            raise ValidationError(f"unknown yard role {self.role!r}")
        if self.yard_type not in ("terminal", "flat", "hump"):
            raise ValidationError(f"unknown yard type {self.yard_type!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    code: str
    train_type: str
    n_trains: int
    tank_block_size: int
    block_placement: str
    switching_approach: str
    yard_type: str
    route_miles: float = 400.0
    yard_sequence: tuple[YardStop, ...] = ()
    total_railcars: int = 100
    n_locomotives: int = MAINLINE_LOCOMOTIVES
    locomotive_tons: float = LOCOMOTIVE_TONS
    railcar_tons: float = RAILCAR_TONS
    en_masse_leading_cars: int = EN_MASSE_LEADING_CARS

    def __post_init__(self):
        stops = tuple(s if isinstance(s, YardStop) else YardStop(**s) for s in self.yard_sequence)
        if not stops:
            stops = _default_yards(self.train_type, self.yard_type)
        object.__setattr__(self, "yard_sequence", stops)
        self.validate()

    def validate(self) -> None:
        err = []
        if self.train_type not in ("unit", "manifest"):
            err.append(f"unknown train type {self.train_type!r}")
        if self.block_placement not in ("back", "middle", "n/a"):
            err.append(f"unknown placement {self.block_placement!r}")
        if self.switching_approach not in ("alone", "en_masse", "n/a"):
            err.append(f"unknown switching approach {self.switching_approach!r}")
        if self.yard_type not in ("terminal", "flat", "hump"):
            err.append(f"unknown yard type {self.yard_type!r}")
        if self.n_trains < 1:
            err.append("n_trains must be >= 1")
        if not 0 <= self.tank_block_size <= self.total_railcars:
            err.append("tank_block_size must lie in [0, total_railcars]")
        if self.route_miles < 0:
            err.append("route_miles must be >= 0")
        if self.train_type == "unit":
            if self.block_placement != "n/a" or self.switching_approach != "n/a":
                err.append("unit trains have no block placement or switching approach")
            if self.yard_type != "terminal":
                err.append("unit trains run between terminals")
            if self.tank_block_size != self.total_railcars:
                err.append("unit trains carry only tank cars")
        if self.train_type == "manifest":
            if self.block_placement == "n/a" or self.switching_approach == "n/a":
                err.append("manifest trains need a block placement and switching approach")
            if self.yard_type == "terminal":
                err.append("manifest trains are classified in flat or hump yards")
            roles = [s.role for s in self.yard_sequence]
            if roles[:1] != ["origin"] or roles[-1:] != ["destination"]:
                err.append("yard sequence must start at an origin and end at a destination")
        if err:
            raise ValidationError(f"scenario {self.code}: " + "; ".join(err))

    @classmethod
    def from_mapping(cls, d: dict) -> ScenarioSpec:
        d = dict(d)
        d["yard_sequence"] = tuple(s if isinstance(s, YardStop) else YardStop(**s)
                                   for s in d.get("yard_sequence", ()))
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(f"bad scenario entry {d.get('code')!r}: {e}") from None


def _default_yards(train_type: str, yard_type: str) -> tuple[YardStop, ...]:
    if train_type == "unit":
        return (YardStop("origin", yard_type), YardStop("destination", yard_type))
    return (YardStop("origin", yard_type), YardStop("intermediate", yard_type),
            YardStop("destination", yard_type))


PRESETS: dict[str, ScenarioSpec] = {
    "U-T": ScenarioSpec("U-T", "unit", 1, 100, "n/a", "n/a", "terminal"),
    "MBAF": ScenarioSpec("MBAF", "manifest", 5, 20, "back", "alone", "flat"),
    "MBAH": ScenarioSpec("MBAH", "manifest", 5, 20, "back", "alone", "hump"),
    "MMEF": ScenarioSpec("MMEF", "manifest", 5, 20, "middle", "en_masse", "flat"),
    "MMEH": ScenarioSpec("MMEH", "manifest", 5, 20, "middle", "en_masse", "hump"),
}
PRESET_ORDER = ("U-T", "MBAF", "MBAH", "MMEF", "MMEH")


def load_scenarios(path: str | Path) -> dict[str, ScenarioSpec]:
    """Read a YAML file with a top-level ``scenarios`` list.

    Entries naming only ``preset: CODE`` pull in the bundled preset; other keys
    override its fields.
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict) or not isinstance(doc.get("scenarios", []), list):
        raise ValidationError(f"{path}: expected a mapping with a 'scenarios' list")
    out: dict[str, ScenarioSpec] = {}
    for entry in doc.get("scenarios", []):
        if not isinstance(entry, dict):
            raise ValidationError(f"{path}: scenario entries must be mappings")
        entry = dict(entry)
        preset = entry.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ValidationError(f"{path}: unknown preset {preset!r}")
            base = {f.name: getattr(PRESETS[preset], f.name) for f in fields(ScenarioSpec)}
            if "yard_type" in entry and "yard_sequence" not in entry:
                base["yard_sequence"] = ()
            base.update(entry)
            entry = base
        spec = ScenarioSpec.from_mapping(entry)
        if spec.code in out:
            raise ValidationError(f"{path}: duplicate scenario code {spec.code!r}")
        out[spec.code] = spec
    return out


@dataclass(frozen=True)
class ShipmentPlan:
    scenario: ScenarioSpec
    ad_events_per_shipment: int
    switching_events_per_shipment: int
    cut_size_switched: int


_AD_EVENTS = {"origin": 1, "intermediate": 2, "destination": 1}


def shipment_plan(spec: ScenarioSpec) -> ShipmentPlan:
    """A/D and switching events a single train incurs along its yard sequence.

    Origin and destination each see one A/D event; an intermediate yard sees
    an arrival and a departure.  The block is switched at the origin and at
    every intermediate yard.
    """
    ad = sum(_AD_EVENTS[s.role] for s in spec.yard_sequence)
    if spec.train_type == "unit":
        return ShipmentPlan(spec, ad, 0, 0)
    switching = sum(s.role != "destination" for s in spec.yard_sequence)
    cut = spec.tank_block_size
    if spec.switching_approach == "en_masse":
        cut += spec.en_masse_leading_cars
    return ShipmentPlan(spec, ad, switching, cut)


def geometric_center_start(n_railcars: int, block: int) -> int:
    """1-based railcar index where a centred block starts."""
    return (n_railcars - block) // 2 + 1


def build_consist(spec: ScenarioSpec, view: str = "mainline",
                  middle_start: int | Callable[[ScenarioSpec], int] | None = None
                  ) -> TrainConsist:
    """Lay out the train for ``spec``.

    ``middle_start`` gives the 1-based railcar index (locomotives excluded)
    at which a middle-placed block starts.  It may be a callable, normally
    :func:`railrisk.severity.ModelSet.middle_block_start`; without one the
    block is centred geometrically.
    """
    if view not in ("mainline", "yard"):
        raise ValidationError(f"unknown view {view!r}")
    spec.validate()
    n, k = spec.total_railcars, spec.tank_block_size
    tank = VehicleKind(Kind.TANK, spec.railcar_tons)
    other = VehicleKind(Kind.NON_TANK, spec.railcar_tons)
    if spec.block_placement == "middle":
        if callable(middle_start):
            start = middle_start(spec)
        elif middle_start is None:
            start = geometric_center_start(n, k)
        else:
            start = middle_start
        if not 1 <= start <= n - k + 1:
            raise ValidationError(f"block start {start} does not fit {k} cars in {n}")
    else:
        # back placement, and unit trains where k == n
        start = n - k + 1
    cars = [tank if start <= i < start + k else other for i in range(1, n + 1)]
    locos: list[VehicleKind] = []
    if view == "mainline":
        locos = [VehicleKind(Kind.LOCOMOTIVE, spec.locomotive_tons)] * spec.n_locomotives
    return TrainConsist(tuple(locos + cars), view)


def switching_cut(spec: ScenarioSpec) -> TrainConsist:
    """The group of cars moved together in a switching event."""
    plan = shipment_plan(spec)
    if spec.train_type == "unit":
        raise ValidationError("unit trains are not switched")
    lead = plan.cut_size_switched - spec.tank_block_size
    return consist_from_kinds(["non_tank_car"] * lead + ["tank_car"] * spec.tank_block_size,
                              view="yard", railcar_tons=spec.railcar_tons)


def consist_from_kinds(kinds: Iterable[str], view: str = "yard",
                       railcar_tons: float = RAILCAR_TONS,
                       locomotive_tons: float = LOCOMOTIVE_TONS) -> TrainConsist:
    vs = []
    for k in kinds:
        k = Kind(k)
        vs.append(VehicleKind(k, locomotive_tons if k is Kind.LOCOMOTIVE else railcar_tons))
    return TrainConsist(tuple(vs), view)


def best_block_start(weights: Sequence[float], block: int) -> int:
    """1-based start of the contiguous block with the largest total weight.

    Ties go to the frontmost block.
    """
    w = np.asarray(weights, dtype=float)
    if block == 0:
        return 1
    sums = np.convolve(w, np.ones(block), mode="valid")
    # rounding noise should not decide between equal blocks
    best = np.flatnonzero(sums >= sums.max() - 1e-15)[0]
    return int(best) + 1
