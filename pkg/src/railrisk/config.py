"""Run configuration: which data files, models and scenarios a command uses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .calibration import Anchor, load_anchors
from .consequence import ConsequenceModel
from .consist import PRESET_ORDER, PRESETS, ScenarioSpec, load_scenarios
from .rates import RateTables
from .severity import ModelSet

DATA = Path(str(resources.files("railrisk") / "data"))

DEFAULT_PATHS = {
    "unit_causes": DATA / "cause_rates_unit.csv",
    "manifest_causes": DATA / "cause_rates_manifest.csv",
    "yard_rates": DATA / "yard_rates.csv",
    "proportions": DATA / "proportions.csv",
    "models": DATA / "models.yaml",
    "consequence": DATA / "consequence.yaml",
    "anchors": DATA / "anchors.yaml",
    "references": DATA / "reference_values.yaml",
}


class ConfigError(ValueError):
    """Missing or unreadable input referenced by a run configuration."""


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    paths: dict
    scenarios_file: Path | None = None
    rate_mode: str = "per_shipment_mile"
    count_locomotives: bool = True

    @classmethod
    def load(cls, path: str | Path | None = None, use_defaults: bool = True) -> RunConfig:
        doc: dict = {}
        base = Path(".")
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file {path} not found")
            try:
                doc = yaml.safe_load(path.read_text()) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: {e}") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: expected a mapping")
            base = path.parent
        unknown = set(doc) - set(DEFAULT_PATHS) - {"scenarios", "rate_mode",
                                                   "count_locomotives"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        paths = {}
        for key, default in DEFAULT_PATHS.items():
            if doc.get(key):
                paths[key] = (base / doc[key]).resolve()
            elif use_defaults:
                paths[key] = default
            else:
                raise ConfigError(f"no {key} file given and bundled defaults are disabled")
        for key, p in paths.items():
            if not Path(p).is_file():
                raise ConfigError(f"{key} file {p} not found")
        scen = (base / doc["scenarios"]).resolve() if doc.get("scenarios") else None
        if scen is not None and not scen.is_file():
            raise ConfigError(f"scenarios file {scen} not found")
        return cls(paths, scen, doc.get("rate_mode", "per_shipment_mile"),
                   bool(doc.get("count_locomotives", True)))


@dataclass(frozen=True)
class Inputs:
    """Everything parsed up front, so malformed inputs fail before any work."""

    config: RunConfig
    rates: RateTables
    models: ModelSet
    consequence: ConsequenceModel
    scenarios: dict
    anchors: tuple[Anchor, ...]
    references: dict
    digests: dict = field(default_factory=dict)

    def select(self, codes: list[str] | None) -> list[ScenarioSpec]:
        if codes is None:
            return list(self.scenarios.values())
        missing = [c for c in codes if c not in self.scenarios]
        if missing:
            raise ConfigError(f"unknown scenarios {missing}")
        return [self.scenarios[c] for c in codes]

    def config_digest(self, **options) -> str:
        doc = {"digests": self.digests, "rate_mode": self.config.rate_mode,
               "count_locomotives": self.config.count_locomotives, "options": options}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def load_inputs(cfg: RunConfig) -> Inputs:
    p = cfg.paths
    try:
        rates = RateTables.load(p["unit_causes"], p["manifest_causes"], p["yard_rates"],
                                p["proportions"], cfg.rate_mode)
        rates = RateTables(rates.cause, rates.yard, rates.shares, cfg.count_locomotives)
        models = ModelSet.load(p["models"])
        consequence = ConsequenceModel.load(p["consequence"])
        anchors = tuple(load_anchors(p["anchors"]))
        references = yaml.safe_load(Path(p["references"]).read_text()) or {}
        if cfg.scenarios_file is not None:
            scenarios = load_scenarios(cfg.scenarios_file)
        else:
            scenarios = {c: PRESETS[c] for c in PRESET_ORDER}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(str(e)) from None
    digests = {k: file_digest(v) for k, v in sorted(p.items())}
    if cfg.scenarios_file is not None:
        digests["scenarios"] = file_digest(cfg.scenarios_file)
    return Inputs(cfg, rates, models, consequence, scenarios, anchors, references, digests)
