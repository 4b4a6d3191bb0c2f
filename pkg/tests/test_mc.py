import numpy as np
import pytest

from railrisk.consist import PRESETS, consist_from_kinds
from railrisk.mc import (SimConfig, check_mean, compare, familywise_threshold, simulate,
                         simulate_component)
from railrisk.pmf import DiscretePmf, binomial_mixture
from railrisk.severity import (AmountModel, ModelSet, OperationalContext, PodModel,
                               ReleaseParams, SeverityModel, conditional_chain)

CTX = OperationalContext("line_haul", "manifest")


def toy_models(pod=None, sev=None, cpr=0.043, amount=None):
    return ModelSet(pod={"line_haul": pod or PodModel("uniform")},
                    severity={"line_haul": sev or SeverityModel.point(2)},
                    release=ReleaseParams(base_cpr=cpr), amount=amount or AmountModel())


FOUR = consist_from_kinds(["non_tank_car", "non_tank_car", "tank_car", "tank_car"])


def test_degenerate_chain_single_trial():
    models = toy_models(PodModel("empirical", masses=(0, 0, 1.0, 0)), SeverityModel.point(2),
                        cpr=1.0, amount=AmountModel(capacity_gallons=25000))
    res = simulate(SimConfig(1, seed=3), models, CTX, FOUR)
    assert res.tank.to_dict() == {2: 1.0}
    assert res.release.to_dict() == {2: 1.0}
    assert res.gallons.to_dict() == {50000: 1.0}


def test_no_release_when_cpr_zero():
    res = simulate(SimConfig(5000), toy_models(cpr=0.0), CTX, FOUR)
    assert res.release.to_dict() == {0: 1.0}


def test_four_car_convergence():
    models = toy_models()
    analytic = conditional_chain(CTX, FOUR, models).tank
    res = simulate(SimConfig(1_000_000, seed=42), models, CTX, FOUR)
    n = res.config.trials
    se = np.sqrt(analytic.prob(2) * (1 - analytic.prob(2)) / n)
    assert abs(res.tank.prob(2) - analytic.prob(2)) <= 3 * se
    assert analytic.prob(2) == pytest.approx(0.25)


def test_compare_identical_and_degenerate():
    d = DiscretePmf([0.2, 0.5, 0.3])
    rep = compare(d, d, 1000)
    assert rep.passed and rep.max_abs_z == 0
    rep = compare(DiscretePmf.point(0), DiscretePmf.point(0), 10)
    assert rep.passed and rep.max_abs_z == 0


def test_compare_grid_mismatch():
    with pytest.raises(ValueError):
        compare(DiscretePmf.point(0), DiscretePmf.point(0, step=1000), 10)


def test_compare_binomial_sampling():
    p, trials = 0.043, 1_000_000
    analytic = DiscretePmf(binomial_mixture(np.array([0, 0, 0, 1.0]), p))
    rng = np.random.default_rng(11)
    draws = rng.binomial(3, p, trials)
    empirical = DiscretePmf(np.bincount(draws, minlength=4) / trials)
    assert compare(analytic, empirical, trials, 3.0).passed


def test_compare_flags_wrong_distribution():
    rep = compare(DiscretePmf([0.5, 0.5]), DiscretePmf([0.6, 0.4]), 100_000)
    assert rep.status == "fail"


def test_low_power_is_flagged_not_failed():
    rep = compare(DiscretePmf([0.5, 0.5]), DiscretePmf([0.9, 0.1]), 10)
    assert rep.status == "low-power"


def test_familywise_threshold():
    assert familywise_threshold(3.0, 1) == 3.0
    assert familywise_threshold(3.0, 20) > 3.0


def test_reproducible_and_parallel_identical(models):
    spec = PRESETS["MMEF"]
    a = simulate_component(SimConfig(150_000, seed=7, workers=1), spec, "switching", models)
    b = simulate_component(SimConfig(150_000, seed=7, workers=4), spec, "switching", models)
    c = simulate_component(SimConfig(150_000, seed=8, workers=1), spec, "switching", models)
    for x in ("tank_counts", "release_counts", "gallon_counts"):
        assert np.array_equal(getattr(a, x), getattr(b, x))
    assert not np.array_equal(a.tank_counts, c.tank_counts)


def test_derail_prob_thins_trials(models):
    res = simulate_component(SimConfig(100_000, seed=1, derail_prob=0.1), PRESETS["U-T"], "ad",
                             models)
    assert res.derailments == pytest.approx(10_000, abs=400)
    assert res.tank.prob(0) == pytest.approx(0.9, abs=0.005)


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(0)
    with pytest.raises(ValueError):
        SimConfig(10, derail_prob=1.5)


@pytest.mark.parametrize("code,component", [("U-T", "line_haul"), ("MBAH", "ad"),
                                            ("MMEF", "switching")])
def test_means_agree(models, code, component):
    from railrisk.severity import context_consist
    ctx, consist = context_consist(PRESETS[code], component, models)
    chain = conditional_chain(ctx, consist, models)
    est = simulate(SimConfig(200_000, seed=5), models, ctx, consist).estimates()
    assert check_mean(chain.tank.mean(), est["tank"]).passed
    assert check_mean(chain.gallons.mean(), est["gallons"]).passed


def test_mean_errors_centred_across_seeds(models):
    # a biased sampler would shift the average z away from zero
    from railrisk.severity import context_consist
    ctx, consist = context_consist(PRESETS["MBAF"], "switching", models)
    chain = conditional_chain(ctx, consist, models)
    zs = [check_mean(chain.release.mean(),
                     simulate(SimConfig(200_000, seed=s), models, ctx, consist)
                     .estimates()["release"]).z for s in range(100, 125)]
    assert abs(np.mean(zs)) <= 3 / np.sqrt(len(zs))
    assert 0.5 < np.std(zs) < 1.6
