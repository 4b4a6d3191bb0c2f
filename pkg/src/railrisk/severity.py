"""Conditional severity chain given a derailment.

Point of derailment (POD) -> cars derailed -> tank cars derailed -> tank cars
releasing -> gallons released.  A derailment starts at the POD and spreads
rearward over a contiguous run of vehicles.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml
from scipy import stats

from .consist import (Kind, ScenarioSpec, TrainConsist, ValidationError, best_block_start,
                      build_consist)
from .pmf import DiscretePmf, binomial_mixture, compound

COMPONENTS = ("line_haul", "ad", "switching")
REF_SPEED = 25.0
YARD_SPEED = 15.0
SWITCHING_CAP = 20


class ModelConfigError(ValueError):
    """Missing or malformed model configuration."""


@dataclass(frozen=True)
class OperationalContext:
    component: str
    train_type: str = "manifest"
    yard_type: str | None = None
    speed: float | None = None
    switching_approach: str | None = None

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if self.speed is None:
            object.__setattr__(self, "speed",
                               REF_SPEED if self.component == "line_haul" else YARD_SPEED)
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.component != "line_haul" and self.speed != YARD_SPEED:
            raise ValueError(f"yard and terminal moves run at {YARD_SPEED} mph")

    def keys(self) -> list[str]:
        """Model lookup keys, most specific first."""
        c, t, y = self.component, self.train_type, self.yard_type
        ks = []
        if y:
            ks.append(f"{c}.{t}.{y}")
        ks.append(f"{c}.{t}")
        if y:
            ks.append(f"{c}.{y}")
        ks.append(c)
        return ks


@dataclass(frozen=True, eq=False)
class PodDistribution:
    pmf: np.ndarray

    def __post_init__(self):
        p = np.array(self.pmf, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("POD masses must be a non-empty non-negative vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"POD masses sum to {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "pmf", p)

    def __len__(self):
        return self.pmf.size


@dataclass(frozen=True)
class PodModel:
    """POD family: ``uniform``, discretized ``beta(a, b)`` over the train length,
    or ``empirical`` masses for one specific length."""

    family: str = "uniform"
    a: float = 1.0
    b: float = 1.0
    masses: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in ("uniform", "beta", "empirical"):
            raise ModelConfigError(f"unknown POD family {self.family!r}")
        if self.family == "beta" and not (self.a > 0 and self.b > 0):
            raise ModelConfigError("beta POD needs a > 0 and b > 0")
        if self.family == "empirical" and not self.masses:
            raise ModelConfigError("empirical POD needs masses")
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))

    def pmf(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("train length must be >= 1")
        if self.family == "uniform":
            p = np.full(n, 1.0 / n)
        elif self.family == "beta":
            p = np.diff(stats.beta.cdf(np.linspace(0.0, 1.0, n + 1), self.a, self.b))
        else:
            if len(self.masses) != n:
                raise ModelConfigError(
                    f"empirical POD has {len(self.masses)} positions, train has {n}")
            p = np.array(self.masses)
        p = np.clip(p, 0.0, None)
        return p / p.sum()


@dataclass(frozen=True)
class SeverityModel:
    """Number of vehicles derailed, counted from the POD rearward.

    ``truncated_geometric`` has P(x) proportional to q**(x-1) with q chosen so
    the untruncated mean is ``mean``; the mean scales as a power of speed
    around ``ref_speed``.  Support ends at the rear of the train and at
    ``cap``.  ``truncation='renormalize'`` rescales what is left;
    ``'lump'`` piles the cut-off mass onto the longest feasible run.
    """

    family: str = "truncated_geometric"
    mean: float = 1.0
    ref_speed: float = REF_SPEED
    speed_exponent: float = 0.0
    cap: int | None = None
    truncation: str = "renormalize"
    masses: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in ("truncated_geometric", "empirical"):
            raise ModelConfigError(f"unknown severity family {self.family!r}")
        if self.truncation not in ("renormalize", "lump"):
            raise ModelConfigError(f"unknown truncation {self.truncation!r}")
        if self.family == "truncated_geometric" and not self.mean >= 1.0:
            raise ModelConfigError("geometric severity mean must be >= 1")
        if self.speed_exponent < 0:
            raise ModelConfigError("speed exponent must be >= 0")
        if self.family == "empirical":
            if not self.masses or any(m < 0 for m in self.masses):
                raise ModelConfigError("empirical severity needs non-negative masses")
            if self.speed_exponent:
                raise ModelConfigError("empirical severity cannot scale with speed")
        if self.cap is not None and self.cap < 1:
            raise ModelConfigError("cap must be >= 1")
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))

    @classmethod
    def geometric(cls, q: float, **kw) -> SeverityModel:
        if not 0.0 <= q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        return cls("truncated_geometric", mean=1.0 / (1.0 - q), **kw)

    @classmethod
    def point(cls, x: int, **kw) -> SeverityModel:
        kw.setdefault("truncation", "lump")
        return cls("empirical", masses=(0.0,) * (x - 1) + (1.0,), **kw)

    def mean_at(self, speed: float) -> float:
        return max(1.0, self.mean * (speed / self.ref_speed) ** self.speed_exponent)

    def ratio_at(self, speed: float) -> float:
        return 1.0 - 1.0 / self.mean_at(speed)

    def base_masses(self, limit: int, speed: float) -> np.ndarray:
        """Untruncated masses over x = 1..limit (tail beyond ``limit`` omitted)."""
        if self.family == "empirical":
            m = np.zeros(limit)
            k = min(limit, len(self.masses))
            m[:k] = self.masses[:k]
            return m
        q = self.ratio_at(speed)
        return (1.0 - q) * q ** np.arange(limit)

    def row(self, room: int, speed: float) -> np.ndarray:
        """Masses over x = 1..m where m = min(room, cap) and ``room`` is the
        number of vehicles from the POD to the rear inclusive."""
        m = room if self.cap is None else min(room, self.cap)
        w = self.base_masses(m, speed)
        if self.truncation == "lump":
            w[-1] += max(0.0, 1.0 - w.sum())
            return w / w.sum()
        s = w.sum()
        if s <= 0:
            raise ModelConfigError(
                f"severity has no mass within {m} cars; use truncation='lump'")
        return w / s

    def matrix(self, n: int, speed: float) -> np.ndarray:
        """``M[i, x-1]`` = P(x cars derail | POD at 0-based position i)."""
        M = np.zeros((n, n))
        for i in range(n):
            r = self.row(n - i, speed)
            M[i, : r.size] = r
        return M


@dataclass(frozen=True)
class ReleaseParams:
    base_cpr: float = 0.043
    yard_cpr_multiplier: float = 0.35
    ref_speed: float = REF_SPEED
    speed_exponent: float = 0.0

    def cpr(self, ctx: OperationalContext) -> float:
        if ctx.component == "line_haul":
            p = self.base_cpr * (ctx.speed / self.ref_speed) ** self.speed_exponent
        else:
            p = self.base_cpr * self.yard_cpr_multiplier
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"conditional probability of release {p!r} outside [0, 1]")
        return p


# --- the chain ---------------------------------------------------------------

def pod_pmf(ctx: OperationalContext, n: int, models: ModelSet) -> PodDistribution:
    return PodDistribution(models.pod_model(ctx).pmf(n))


def pod_for_consist(ctx: OperationalContext, consist: TrainConsist,
                    models: ModelSet) -> PodDistribution:
    """POD over every vehicle; locomotives get zero mass when excluded."""
    n = len(consist)
    locos = consist.locomotive_count
    if ctx.component == "line_haul" and locos and not models.locomotives_in_pod:
        lead = np.array([v.kind is Kind.LOCOMOTIVE for v in consist.vehicles])
        if lead[:locos].all() and not lead[locos:].any():
            p = np.zeros(n)
            p[locos:] = models.pod_model(ctx).pmf(n - locos)
            return PodDistribution(p)
    return pod_pmf(ctx, n, models)


def cars_derailed_pmf(ctx: OperationalContext, pod: int, n: int,
                      model: SeverityModel) -> DiscretePmf:
    if not 1 <= pod <= n:
        raise ValueError(f"POD {pod} outside 1..{n}")
    if ctx.component == "switching" and (model.cap is None or model.cap > SWITCHING_CAP):
        model = replace(model, cap=SWITCHING_CAP)
    return DiscretePmf(np.concatenate([[0.0], model.row(n - pod + 1, ctx.speed)]))


def _pod_array(pod_dist) -> np.ndarray:
    return pod_dist.pmf if isinstance(pod_dist, PodDistribution) else np.asarray(pod_dist, float)


def position_derail_prob(consist: TrainConsist | int, pod_dist, model: SeverityModel,
                         speed: float = REF_SPEED) -> np.ndarray:
    """P(vehicle k derails | derailment) for k = 1..n (0-based array)."""
    n = consist if isinstance(consist, int) else len(consist)
    pod = _pod_array(pod_dist)
    if pod.size != n:
        raise ValueError("POD and consist lengths differ")
    M = model.matrix(n, speed)
    # surv[i, j] = P(x >= j + 1 | POD i)
    surv = np.cumsum(M[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros(n)
    for i in range(n):
        if pod[i]:
            out[i:] += pod[i] * surv[i, : n - i]
    return out


def tank_derailed_pmf(consist: TrainConsist, pod_dist, model: SeverityModel,
                      speed: float = REF_SPEED) -> DiscretePmf:
    n = len(consist)
    pod = _pod_array(pod_dist)
    if pod.size != n:
        raise ValueError("POD and consist lengths differ")
    S = np.concatenate([[0], np.cumsum(consist.tank_mask)])
    out = np.zeros(int(S[-1]) + 1)
    M = model.matrix(n, speed)
    for i in range(n):
        if not pod[i]:
            continue
        m = n - i
        t = S[i + 1: i + m + 1] - S[i]
        np.add.at(out, t, pod[i] * M[i, :m])
    return DiscretePmf(out)


def release_count_pmf(tank_pmf: DiscretePmf, params: ReleaseParams,
                      ctx: OperationalContext) -> DiscretePmf:
    """Each derailed tank car releases independently with the context's CPR."""
    p = params.cpr(ctx)
    return DiscretePmf(binomial_mixture(tank_pmf.masses, p), 1, tank_pmf.declared_total)


def release_amount_dist(release_pmf: DiscretePmf, per_car_amount: DiscretePmf,
                        max_gallons: int | None = None) -> DiscretePmf:
    return compound(release_pmf, per_car_amount, max_gallons)


# --- model bundle ---------------------------------------------------------------

def read_index_mass_csv(path: str | Path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "mass"]:
            raise ModelConfigError(f"{path}: expected header index,mass")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                k, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise ModelConfigError(f"{path}:{lineno}: malformed row {row}") from None
            if k < 0 or v < 0 or k in out:
                raise ModelConfigError(f"{path}:{lineno}: bad or duplicate entry {row}")
            out[k] = v
    if not out:
        raise ModelConfigError(f"{path}: no rows")
    return out


def _dense_from_one(mapping: Mapping[int, float]) -> tuple[float, ...]:
    if min(mapping) < 1:
        raise ModelConfigError("positions and car counts are 1-based")
    m = [0.0] * max(mapping)
    for k, v in mapping.items():
        m[k - 1] = v
    return tuple(m)


@dataclass(frozen=True)
class AmountModel:
    capacity_gallons: int = 30000
    grid_step: int = 1000
    max_gallons: int = 4_000_000
    masses: dict | None = None  # gallons -> mass, overrides the capacity point mass

    def per_car(self) -> DiscretePmf:
        if self.masses:
            return DiscretePmf.from_dict(self.masses, self.grid_step)
        return DiscretePmf.point(self.capacity_gallons, self.grid_step)


def _shape_problem(train_type: str, p: np.ndarray) -> str | None:
    if train_type == "unit":
        prefix = max(2, p.size // 10)
        if np.any(np.diff(p[:prefix]) > 1e-15):
            return "unit-train POD must be non-increasing over the front of the train"
    elif train_type == "manifest" and not p[0] < p.max():
        return "manifest POD must put less mass on position 1 than on its peak"
    return None


@dataclass(frozen=True)
class ModelSet:
    pod: dict = field(default_factory=dict)
    severity: dict = field(default_factory=dict)
    release: ReleaseParams = ReleaseParams()
    amount: AmountModel = AmountModel()
    locomotives_in_pod: bool = True
    placement_speed: float = REF_SPEED
    reference_length: int = 100

    def __post_init__(self):
        for key, m in self.severity.items():
            if key.split(".")[0] == "switching" and (m.cap is None or m.cap > SWITCHING_CAP):
                raise ModelConfigError(f"switching severity {key!r} must be capped at "
                                       f"{SWITCHING_CAP} cars")
        for key, m in self.pod.items():
            parts = key.split(".")
            if parts[0] not in COMPONENTS:
                raise ModelConfigError(f"unknown component in POD key {key!r}")
            if m.family == "beta" and len(parts) > 1:
                msg = _shape_problem(parts[1], m.pmf(self.reference_length))
                if msg:
                    raise ModelConfigError(f"POD {key!r}: {msg}")

    def _lookup(self, table: dict, ctx: OperationalContext, what: str):
        for k in ctx.keys():
            if k in table:
                return table[k]
        raise ModelConfigError(f"no {what} model configured for {ctx.keys()[0]!r}")

    def pod_model(self, ctx: OperationalContext) -> PodModel:
        return self._lookup(self.pod, ctx, "POD")

    def severity_model(self, ctx: OperationalContext) -> SeverityModel:
        return self._lookup(self.severity, ctx, "severity")

    def middle_block_start(self, spec: ScenarioSpec) -> int:
        """Railcar index where the block with the highest line-haul derailment
        probability starts."""
        probe = build_consist(replace(spec, block_placement="back"), "mainline")
        ctx = OperationalContext("line_haul", spec.train_type, speed=self.placement_speed)
        pod = pod_for_consist(ctx, probe, self)
        probs = position_derail_prob(probe, pod, self.severity_model(ctx), ctx.speed)
        return best_block_start(probs[probe.locomotive_count:], spec.tank_block_size)

    def consist(self, spec: ScenarioSpec, view: str) -> TrainConsist:
        return build_consist(spec, view, self.middle_block_start)

    def with_params(self, pod: dict | None = None, severity: dict | None = None) -> ModelSet:
        return replace(self, pod={**self.pod, **(pod or {})},
                       severity={**self.severity, **(severity or {})})

    # serialization

    def to_dict(self) -> dict:
        def clean(d):
            return {k: v for k, v in d.items() if v not in ((), None)}
        return {
            "pod": {k: clean(asdict(v)) for k, v in sorted(self.pod.items())},
            "severity": {k: clean(asdict(v)) for k, v in sorted(self.severity.items())},
            "release": asdict(self.release),
            "amount": clean(asdict(self.amount)),
            "locomotives_in_pod": self.locomotives_in_pod,
            "placement_speed": self.placement_speed,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> ModelSet:
        base_dir = base_dir or Path(".")
        try:
            pod = {}
            for k, v in (d.get("pod") or {}).items():
                v = dict(v)
                if "file" in v:
                    v["masses"] = _dense_from_one(read_index_mass_csv(base_dir / v.pop("file")))
                    v.setdefault("family", "empirical")
                pod[k] = PodModel(**v)
            sev = {}
            for k, v in (d.get("severity") or {}).items():
                v = dict(v)
                if "file" in v:
                    v["masses"] = _dense_from_one(read_index_mass_csv(base_dir / v.pop("file")))
                    v.setdefault("family", "empirical")
                sev[k] = SeverityModel(**v)
            amount = dict(d.get("amount") or {})
            if "file" in amount:
                amount["masses"] = read_index_mass_csv(base_dir / amount.pop("file"))
            return cls(
                pod=pod, severity=sev,
                release=ReleaseParams(**(d.get("release") or {})),
                amount=AmountModel(**amount),
                locomotives_in_pod=bool(d.get("locomotives_in_pod", True)),
                placement_speed=float(d.get("placement_speed", REF_SPEED)),
            )
        except TypeError as e:
            raise ModelConfigError(f"bad model entry: {e}") from None

    @classmethod
    def load(cls, path: str | Path | None = None) -> ModelSet:
        if path is None:
            from importlib import resources
            text = (resources.files("railrisk") / "data" / "models.yaml").read_text()
            base = Path(str(resources.files("railrisk") / "data"))
        else:
            path = Path(path)
            text = path.read_text()
            base = path.parent
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ModelConfigError(f"{path}: {e}") from None
        if not isinstance(doc, dict):
            raise ModelConfigError(f"{path}: expected a mapping")
        return cls.from_dict(doc, base)


@dataclass(frozen=True)
class ChainResult:
    ctx: OperationalContext
    consist: TrainConsist
    pod: PodDistribution
    tank: DiscretePmf
    release: DiscretePmf
    gallons: DiscretePmf


def conditional_chain(ctx: OperationalContext, consist: TrainConsist,
                      models: ModelSet) -> ChainResult:
    """Everything downstream of "a derailment happened" for one context."""
    pod = pod_for_consist(ctx, consist, models)
    sev = models.severity_model(ctx)
    tank = tank_derailed_pmf(consist, pod, sev, ctx.speed)
    rel = release_count_pmf(tank, models.release, ctx)
    gal = release_amount_dist(rel, models.amount.per_car(), models.amount.max_gallons)
    return ChainResult(ctx, consist, pod, tank, rel, gal)


def context_consist(spec: ScenarioSpec, component: str, models: ModelSet,
                    speed: float | None = None) -> tuple[OperationalContext, TrainConsist]:
    """Context and vehicle layout a scenario exposes to one risk component."""
    from .consist import switching_cut
    if component == "line_haul":
        ctx = OperationalContext("line_haul", spec.train_type, speed=speed)
        return ctx, models.consist(spec, "mainline")
    if component == "ad":
        ctx = OperationalContext("ad", spec.train_type, spec.yard_type)
        return ctx, models.consist(spec, "yard")
    if component == "switching":
        if spec.train_type == "unit":
            raise ValidationError("unit trains have no switching component")
        ctx = OperationalContext("switching", spec.train_type, spec.yard_type,
                                 switching_approach=spec.switching_approach)
        return ctx, switching_cut(spec)
    raise ValueError(f"unknown component {component!r}")
