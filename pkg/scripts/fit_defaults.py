#!/usr/bin/env python3
"""Refit the bundled default models.

The arrival/departure (manifest) and switching severity models are fitted to
the P(no tank car derailed) anchors.  The remaining free parameters (mainline
POD and severity, speed exponents, unit-train terminal models) are fitted by
least squares on log expected casualties against the reference case-study
figures, with the consequence scale re-solved on every evaluation.  The two
steps alternate until the parameters settle.

Usage:
    python scripts/fit_defaults.py                # print the fitted YAML
    python scripts/fit_defaults.py --write        # overwrite data/models.yaml
"""

from __future__ import annotations

import argparse
import math
from dataclasses import replace
from importlib import resources

import numpy as np
from scipy.optimize import least_squares

from railrisk.calibration import calibrate, load_anchors
from railrisk.consequence import (ConsequenceModel, apply_calibration, evaluate_component,
                                  load_reference_values, required_components)
from railrisk.consist import PRESET_ORDER, PRESETS
from railrisk.rates import RateTables
from railrisk.severity import (ModelSet, OperationalContext, pod_for_consist,
                               position_derail_prob)

DATA = resources.files("railrisk") / "data"


def unpack(x, base: ModelSet) -> ModelSet:
    a_u, b_u, a_m, b_m, mean_u, mean_m, sev_exp, cpr_exp, ad_a_u, ad_mean_u = x
    pod = {
        "line_haul.unit": replace(base.pod["line_haul.unit"], a=1 / (1 + math.exp(-a_u)),
                                  b=1 + math.exp(b_u)),
        "line_haul.manifest": replace(base.pod["line_haul.manifest"], a=1 + math.exp(a_m),
                                      b=math.exp(b_m)),
        "ad.unit": replace(base.pod["ad.unit"], a=1 / (1 + math.exp(-ad_a_u))),
    }
    sev = {
        "line_haul.unit": replace(base.severity["line_haul.unit"], mean=1 + math.exp(mean_u),
                                  speed_exponent=math.exp(sev_exp)),
        "line_haul.manifest": replace(base.severity["line_haul.manifest"],
                                      mean=1 + math.exp(mean_m), speed_exponent=math.exp(sev_exp)),
        "ad.unit": replace(base.severity["ad.unit"], mean=1 + math.exp(ad_mean_u)),
    }
    m = base.with_params(pod, sev)
    return replace(m, release=replace(m.release, speed_exponent=math.exp(cpr_exp)))


def pack(m: ModelSet) -> np.ndarray:
    p, s = m.pod, m.severity
    lu, lm = p["line_haul.unit"], p["line_haul.manifest"]
    return np.array([
        math.log(lu.a / (1 - lu.a)), math.log(lu.b - 1),
        math.log(lm.a - 1), math.log(lm.b),
        math.log(s["line_haul.unit"].mean - 1), math.log(s["line_haul.manifest"].mean - 1),
        math.log(s["line_haul.unit"].speed_exponent), math.log(m.release.speed_exponent),
        math.log(p["ad.unit"].a / (1 - p["ad.unit"].a)), math.log(s["ad.unit"].mean - 1),
    ])


def residuals(models, rates, consequence, ref):
    cons = apply_calibration(consequence, rates, models)
    out = []
    yard = {}
    for code in PRESET_ORDER:
        spec = PRESETS[code]
        yard[code] = sum(evaluate_component(spec, c, rates, models, cons).expected_casualties
                         for c in required_components(spec) if c != "line_haul")
        out.append(math.log(yard[code] / ref["at_25_mph"][code]["yard"]))
        for v, target in ref["line_haul_by_speed"][code].items():
            if code == "U-T" and v == 25:
                continue  # pinned by the scale
            lh = evaluate_component(spec, "line_haul", rates, models, cons, v).expected_casualties
            out.append(math.log(lh / target))
    # the back block must stay the least exposed on the mainline
    spec = PRESETS["MBAF"]
    probe = models.consist(spec, "mainline")
    ctx = OperationalContext("line_haul", "manifest")
    rail = position_derail_prob(probe, pod_for_consist(ctx, probe, models),
                                models.severity_model(ctx))[probe.locomotive_count:]
    blocks = np.convolve(rail, np.ones(spec.tank_block_size), mode="valid")
    out.append(5.0 * math.log(blocks[-1] / blocks.min()))
    return np.array(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--write", action="store_true")
    ap.add_argument("--rounds", type=int, default=3)
    args = ap.parse_args()

    rates = RateTables.load()
    consequence = ConsequenceModel.load()
    ref = load_reference_values()
    anchors = load_anchors(DATA / "anchors.yaml")
    models = ModelSet.load()

    for rnd in range(args.rounds):
        models = calibrate(anchors, models, ridge=1e-8).models
        n_res = residuals(models, rates, consequence, ref).size

        def fun(x, models=models):
            try:
                return residuals(unpack(x, models), rates, consequence, ref)
            except ValueError:
                return np.full(n_res, 10.0)

        lo = np.full(10, -8.0)
        hi = np.full(10, 8.0)
        lo[6:8], hi[6:8] = math.log(0.05), math.log(3.0)
        x0 = np.clip(pack(models), lo + 1e-9, hi - 1e-9)
        sol = least_squares(fun, x0, bounds=(lo, hi), method="trf", diff_step=1e-5,
                            max_nfev=400)
        models = unpack(sol.x, models)
        print(f"round {rnd}: rms log residual {math.sqrt(np.mean(sol.fun ** 2)):.4f}")
    result = calibrate(anchors, models, ridge=1e-8)
    models = result.models
    for row in result.rows():
        print(f"  {row['anchor']}: {row['fitted']:.4f} (target {row['target']})")
    text = models.to_yaml()
    if args.write:
        (DATA / "models.yaml").write_text(
            "# Default models, produced by scripts/fit_defaults.py.\n" + text)
        print("wrote", DATA / "models.yaml")
    else:
        print(text)


if __name__ == "__main__":
    main()
