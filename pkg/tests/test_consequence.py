import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from railrisk.consequence import (ComponentRisk, ConsequenceDomainError, ConsequenceModel,
                                  ScenarioRiskReport, aggregate_scenario, evaluate_scenario,
                                  evaluate_scenarios, exceedance_at, exceedance_curve,
                                  expected_casualties_component, rank_reports,
                                  speed_sensitivity)
from railrisk.consist import PRESETS, ValidationError
from railrisk.pmf import DiscretePmf

STEP = 1000


def gal(d):
    return DiscretePmf.from_dict(d, step=STEP)


def test_exceedance_step_function():
    d = gal({10000: 1.0})
    assert exceedance_at(d, 5000) == 1.0
    assert exceedance_at(d, 10000) == 0.0


def test_exceedance_zero_weight():
    g, p = exceedance_curve(gal({0: 0.5, 30000: 0.5}), 0.0)
    assert not p.any()


def test_exceedance_three_point():
    d = gal({20000: 0.25, 30000: 0.5, 40000: 0.25})
    assert exceedance_at(d, 25000) == pytest.approx(0.75)
    assert exceedance_at(d, 35000) == pytest.approx(0.25)
    g, p = exceedance_curve(d, 2.0)
    assert p[list(g).index(20000)] == pytest.approx(1.5)


def test_exceedance_at_zero_excludes_no_release():
    d = gal({0: 0.9, 30000: 0.1})
    g, p = exceedance_curve(d, 1e-3)
    assert p[0] == pytest.approx(1e-4)


def test_consequence_model_contract():
    with pytest.raises(ValueError):
        ConsequenceModel((0, 10), (1, 2))
    with pytest.raises(ValueError):
        ConsequenceModel((0, 10, 20), (0, 2, 1))
    m = ConsequenceModel((0, 10), (0, 5))
    assert m(5) == pytest.approx(2.5)
    with pytest.raises(ConsequenceDomainError):
        m(11)


def test_bundled_preset_is_monotone():
    m = ConsequenceModel.load()
    assert m.preset_name == "evac-2h"
    g = np.arange(0, m.max_gallons + 1, 1000)
    v = m(g)
    assert v[0] == 0 and np.all(np.diff(v) >= 0)


def test_expected_casualties():
    const = ConsequenceModel((0, 1000, 100000), (0, 3.0, 3.0))
    d = gal({30000: 0.4, 60000: 0.6})
    assert expected_casualties_component(0.0, d, const) == 0
    assert expected_casualties_component(2e-4, d, const) == pytest.approx(6e-4)
    with pytest.raises(ConsequenceDomainError):
        expected_casualties_component(1.0, gal({200000: 1.0}), const)


def risk(component, value):
    return ComponentRisk(component, 1.0, gal({0: 1.0}), value)


def test_aggregate_printed_rows():
    r = aggregate_scenario(PRESETS["MBAH"], [risk("line_haul", 1.04e-4), risk("ad", 7.80e-5),
                                             risk("switching", 0.0)])
    assert r.total == pytest.approx(1.82e-4, rel=1e-12)
    r = aggregate_scenario(PRESETS["MMEF"], [risk("line_haul", 2.36e-4), risk("ad", 1.91e-4),
                                             risk("switching", 0.0)])
    # printed components are rounded, so the sum lands one display unit off
    assert r.total == pytest.approx(4.27e-4, rel=1e-12)
    assert abs(r.total - 4.28e-4) <= 1e-6 + 1e-15


def test_aggregate_component_checks():
    with pytest.raises(ValidationError):
        aggregate_scenario(PRESETS["MBAH"], [risk("line_haul", 1.0), risk("ad", 1.0)])
    with pytest.raises(ValidationError):
        aggregate_scenario(PRESETS["U-T"], [risk("line_haul", 1.0), risk("ad", 1.0),
                                            risk("switching", 1.0)])


def test_ranking_ascending_with_code_tiebreak():
    reps = [ScenarioRiskReport(c, {}, t) for c, t in
            [("B", 2.0), ("A", 2.0), ("C", 1.0), ("Z", 0.0)]]
    assert [(r.code, r.rank) for r in rank_reports(reps)] == [
        ("Z", 1), ("C", 2), ("A", 3), ("B", 4)]


def test_single_scenario_ranks_first(rates, models, consequence):
    [r] = evaluate_scenarios([PRESETS["MMEF"]], rates, models, consequence)
    assert r.rank == 1


def test_calibration_target(rates, models, consequence):
    r = evaluate_scenario(PRESETS["U-T"], rates, models, consequence)
    assert r.casualties("line_haul") == pytest.approx(1.94e-4, rel=1e-12)


def test_total_is_component_sum(rates, models, consequence, presets):
    for r in evaluate_scenarios(presets, rates, models, consequence):
        s = math.fsum(c.expected_casualties for c in r.components.values())
        assert r.total == pytest.approx(s, rel=1e-12)
        for c in r.components.values():
            assert c.expected_casualties == pytest.approx(
                c.derailment_weight * c.conditional_release_dist.expect(consequence), rel=1e-12)


def test_default_ranking(rates, models, consequence, presets):
    ranked = sorted(evaluate_scenarios(presets, rates, models, consequence), key=lambda r: r.rank)
    assert [r.code for r in ranked] == ["MBAH", "MBAF", "U-T", "MMEH", "MMEF"]


def test_scaling_consequence_scales_everything(rates, models, consequence, presets):
    base = evaluate_scenarios(presets, rates, models, consequence)
    big = evaluate_scenarios(presets, rates, models, consequence.scaled(7.5))
    for a, b in zip(base, big):
        assert b.total == pytest.approx(7.5 * a.total, rel=1e-12)
        assert a.rank == b.rank


def test_sensitivity(rates, models, consequence, presets):
    rows = speed_sensitivity(presets, [50, 25, 40, 25], rates, models, consequence)
    speeds = sorted({r.speed for r in rows})
    assert [r.speed for r in rows[:5]] == [25.0] * 5 and speeds == [25.0, 40.0, 50.0]
    one = evaluate_scenario(PRESETS["MBAF"], rates, models, consequence)
    at25 = next(r for r in rows if r.code == "MBAF" and r.speed == 25)
    assert at25.total == pytest.approx(one.total, rel=1e-12)
    for code in PRESETS:
        mine = [r for r in rows if r.code == code]
        assert mine[0].total <= mine[1].total <= mine[2].total
        assert len({r.rank for r in mine}) == 1
    with pytest.raises(ValueError):
        speed_sensitivity(presets, [0], rates, models, consequence)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=3, max_size=6))
def test_dominance_under_any_increasing_consequence(increments):
    from railrisk.rates import RateTables
    from railrisk.severity import ModelSet
    rates, models = RateTables.load(), ModelSet.load()
    g = np.linspace(0, 4e6, len(increments) + 1)
    c = np.concatenate([[0.0], np.cumsum(increments)])
    cm = ConsequenceModel(tuple(g), tuple(c))
    reps = {r.code: r for r in evaluate_scenarios(PRESETS.values(), rates, models, cm)}
    assert reps["MMEF"].total > reps["MBAF"].total
    assert reps["MMEH"].total > reps["MBAH"].total
    assert reps["MBAF"].casualties("ad") > reps["MBAH"].casualties("ad")
    assert reps["MMEF"].casualties("ad") > reps["MMEH"].casualties("ad")


def test_report_dict(rates, models, consequence):
    d = evaluate_scenario(PRESETS["U-T"], rates, models, consequence).to_dict()
    assert set(d) == {"code", "rank", "components", "total"}
    assert set(d["components"]) == {"line_haul", "ad"}


def test_zero_total_ranks_first():
    # ascending order puts an all-zero scenario at rank 1
    reps = rank_reports([ScenarioRiskReport("A", {}, 1e-4), ScenarioRiskReport("Z", {}, 0.0)])
    assert [(r.code, r.rank) for r in reps] == [("Z", 1), ("A", 2)]
