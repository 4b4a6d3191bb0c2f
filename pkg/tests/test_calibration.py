from dataclasses import replace

import pytest

from railrisk.calibration import Anchor, anchor_statistic, calibrate, load_anchors
from railrisk.config import DEFAULT_PATHS
from railrisk.severity import ModelConfigError


@pytest.fixture(scope="module")
def anchors():
    return load_anchors(DEFAULT_PATHS["anchors"])


def perturbed(models):
    sev = {k: replace(v, mean=v.mean * 2.5) for k, v in models.severity.items()
           if k.startswith(("ad.manifest", "switching"))}
    return models.with_params(severity=sev)


def test_bundled_models_hit_anchors(anchors, models):
    for a in anchors:
        assert anchor_statistic(a, models) == pytest.approx(a.target, abs=0.02)


def test_recovers_anchors_from_perturbed_start(anchors, models):
    start = perturbed(models)
    assert any(abs(anchor_statistic(a, start) - a.target) > 0.02 for a in anchors)
    result = calibrate(anchors, start)
    assert result.ok
    for a, f in zip(anchors, result.fitted):
        assert f == pytest.approx(a.target, abs=0.02)
    assert {r["status"] for r in result.rows()} == {"ok"}


@pytest.mark.parametrize("idx", [0, 2])
def test_single_anchor(anchors, models, idx):
    result = calibrate([anchors[idx]], perturbed(models))
    assert result.fitted[0] == pytest.approx(anchors[idx].target, abs=0.02)


def test_zero_anchors_returns_models_unchanged(models):
    result = calibrate([], models)
    assert result.models is models
    assert result.ok and result.rows() == []


def test_infeasible_anchor_reported(models):
    # switched alone always derails a tank car, so P(t=0) cannot reach 0.5
    a = Anchor.from_mapping({"context": {"component": "switching", "train_type": "manifest",
                                         "yard_type": "flat", "switching_approach": "alone"},
                             "statistic": "p_zero_tank", "target": 0.5})
    result = calibrate([a], models)
    assert not result.ok
    assert result.infeasible == [a]
    assert result.rows()[0]["status"] == "infeasible"


def test_anchor_touching_no_parametric_model(models):
    a = Anchor.from_mapping({"context": {"component": "line_haul", "train_type": "manifest"},
                             "statistic": "p_zero_tank", "target": 0.5})
    fixed = models.with_params(severity={"line_haul.manifest": replace(
        models.severity["line_haul.manifest"], family="empirical", masses=(1.0,),
        speed_exponent=0.0)})
    with pytest.raises(ModelConfigError):
        calibrate([a], fixed.with_params(pod={"line_haul.manifest": replace(
            fixed.pod["line_haul.manifest"], family="uniform")}))


@pytest.mark.parametrize("entry", [
    {"statistic": "p_zero_tank", "target": 0.5},
    {"context": {"component": "ad"}, "statistic": "median", "target": 0.5},
    {"context": {"component": "ad", "colour": "red"}, "statistic": "p_zero_tank", "target": 0.5},
])
def test_bad_anchor_entries(entry):
    with pytest.raises(ValueError):
        Anchor.from_mapping(entry)
