"""Command-line front end.

    railrisk likelihoods  per-shipment derailment probabilities
    railrisk compare      expected casualties, ranking, exceedance curves
    railrisk sensitivity  totals across mainline speeds
    railrisk validate     Monte Carlo check of the analytic distributions
    railrisk calibrate    fit severity models to anchor probabilities

Exit status: 0 on success, 1 when a validation or calibration check fails,
2 on malformed input.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from functools import wraps
from pathlib import Path

import click
import numpy as np

from . import __version__
from .calibration import calibrate as fit_anchors, load_anchors
from .config import ConfigError, Inputs, RunConfig, file_digest, load_inputs
from .consequence import (ConsequenceDomainError, apply_calibration, evaluate_scenarios,
                          exceedance_curve, speed_sensitivity)
from .consist import ValidationError
from .mc import (SimConfig, check_mean, compare as compare_pmfs, familywise_threshold,
                 simulate)
from .pmf import GridOverflowError
from .rates import RateFileError, summarize_likelihoods
from .severity import ModelConfigError, conditional_chain, context_consist

LOW_POWER_TRIALS = 1000

INPUT_ERRORS = (ConfigError, ValidationError, RateFileError, ModelConfigError,
                ConsequenceDomainError, GridOverflowError, KeyError, ValueError)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(meta: dict, columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def render_json(meta: dict, payload) -> str:
    return json.dumps({"meta": meta, **payload}, indent=2, sort_keys=False) + "\n"


class Output:
    def __init__(self, out: Path, fmt: str, meta: dict):
        self.out = Path(out)
        self.fmt = fmt
        self.meta = meta
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def table(self, name: str, columns: list[str], rows: list[dict], payload=None):
        if self.fmt == "json":
            path = self.out / f"{name}.json"
            path.write_text(render_json(self.meta, payload if payload is not None else {"rows": rows}))
        else:
            path = self.out / f"{name}.csv"
            path.write_text(render_csv(self.meta, columns, rows))
        self.written.append(path)
        return path

    def csv(self, name: str, columns: list[str], rows: list[dict]):
        path = self.out / f"{name}.csv"
        path.write_text(render_csv(self.meta, columns, rows))
        self.written.append(path)
        return path

    def text(self, name: str, body: str):
        path = self.out / name
        header = "".join(f"# {k}: {v}\n" for k, v in self.meta.items())
        path.write_text(header + body)
        self.written.append(path)
        return path


def _meta(command: str, inputs: Inputs, **options) -> dict:
    meta = {"command": command, "railrisk": __version__,
            "config_digest": inputs.config_digest(command=command, **options)}
    meta.update({f"data.{k}": v for k, v in inputs.digests.items()})
    meta.update({f"option.{k}": v for k, v in options.items()})
    return meta


def _codes(raw: str | None) -> list[str] | None:
    if raw is None:
        return None
    return [c.strip() for c in raw.split(",") if c.strip()]


def _speeds(raw: str) -> list[float]:
    try:
        vals = sorted(set(float(s) for s in raw.split(",") if s.strip()))
    except ValueError:
        raise click.BadParameter(f"speeds must be numbers: {raw!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise click.BadParameter("speeds must be positive")
    return vals


def handle_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except INPUT_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        sys.exit(code or 0)
    return wrapper


def common(fn):
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
                      show_default=True, help="Format of the main report.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default="results",
                      show_default=True, help="Output directory.")(fn)
    fn = click.option("--scenarios", default=None,
                      help="Comma-separated scenario codes (default: all configured).")(fn)
    fn = click.option("--no-defaults", is_flag=True,
                      help="Require every input file to be named in --config.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="Run configuration (YAML).")(fn)
    return fn


def _inputs(config_path, no_defaults) -> Inputs:
    return load_inputs(RunConfig.load(config_path, use_defaults=not no_defaults))


@click.group()
@click.version_option(__version__)
def main():
    """Rail hazmat risk: unit trains versus manifest trains."""


@main.command()
@common
@handle_errors
def likelihoods(config_path, no_defaults, scenarios, out, fmt):
    """Per-shipment derailment probabilities by component."""
    inputs = _inputs(config_path, no_defaults)
    specs = inputs.select(_codes(scenarios))
    rows = []
    for s in specs:
        lk = summarize_likelihoods(s, inputs.rates)
        rows.append({"code": s.code, "train_type": s.train_type, "yard_type": s.yard_type,
                     "switching_approach": s.switching_approach,
                     "line_haul_per_mile": lk["line_haul_per_mile"],
                     "ad_per_shipment": lk["ad_per_shipment"],
                     "switching_per_shipment": lk.get("switching_per_shipment")})
    o = Output(out, fmt, _meta("likelihoods", inputs, scenarios=[s.code for s in specs]))
    cols = ["code", "train_type", "yard_type", "switching_approach", "line_haul_per_mile",
            "ad_per_shipment", "switching_per_shipment"]
    o.table("likelihoods", cols, rows)
    for r in rows:
        click.echo(f"{r['code']:6s} line-haul/mile {r['line_haul_per_mile']:.3e}  "
                   f"A/D {r['ad_per_shipment']:.3e}  switching "
                   + (f"{r['switching_per_shipment']:.3e}" if r["switching_per_shipment"]
                      is not None else "-"))
    return 0


def _residual(model: float, reference: float) -> float:
    return (model - reference) / reference


@main.command()
@common
@click.option("--speed", type=float, default=25.0, show_default=True,
              help="Mainline derailment speed (mph).")
@handle_errors
def compare(config_path, no_defaults, scenarios, out, fmt, speed):
    """Expected casualties per traffic demand, ranked ascending."""
    inputs = _inputs(config_path, no_defaults)
    specs = inputs.select(_codes(scenarios))
    cons = apply_calibration(inputs.consequence, inputs.rates, inputs.models, inputs.scenarios)
    reports = evaluate_scenarios(specs, inputs.rates, inputs.models, cons, speed)
    o = Output(out, fmt, _meta("compare", inputs, scenarios=[s.code for s in specs], speed=speed))
    rows = [{"rank": r.rank, "code": r.code, "line_haul": r.casualties("line_haul"),
             "ad": r.casualties("ad"),
             "switching": r.casualties("switching") if "switching" in r.components else None,
             "total": r.total} for r in reports]
    o.table("compare", ["rank", "code", "line_haul", "ad", "switching", "total"], rows,
            {"casualty_scale": cons.scale, "reports": [r.to_dict() for r in reports]})

    ref = inputs.references.get("at_25_mph", {}) if speed == 25.0 else {}
    res_rows = []
    for r in reports:
        pub = ref.get(r.code)
        if not pub:
            continue
        for q, model in (("line_haul", r.casualties("line_haul")), ("yard", r.yard_total),
                         ("total", r.total)):
            res_rows.append({"code": r.code, "quantity": q, "model": model,
                             "reference": pub[q], "relative_residual": _residual(model, pub[q])})
        res_rows.append({"code": r.code, "quantity": "rank", "model": r.rank,
                         "reference": pub["rank"], "relative_residual": None})
    if res_rows:
        o.csv("compare_residuals", ["code", "quantity", "model", "reference",
                                    "relative_residual"], res_rows)

    for r in reports:
        curves = {}
        grid = np.zeros(1)
        for name, c in r.components.items():
            g, p = exceedance_curve(c.conditional_release_dist, c.derailment_weight)
            curves[name] = (g, p)
            if g.size > grid.size:
                grid = g
        erows = []
        for i, q in enumerate(grid):
            row = {"gallons": int(q)}
            for name, (g, p) in curves.items():
                row[name] = float(p[i]) if i < p.size else 0.0
            if "switching" in curves:
                row["yard"] = row["ad"] + row["switching"]
            erows.append(row)
        cols = ["gallons"] + list(curves) + (["yard"] if "switching" in curves else [])
        o.csv(f"exceedance_{r.code}", cols, erows)
        spec = inputs.scenarios[r.code]
        o.text(f"consist_{r.code}.csv", inputs.models.consist(spec, "mainline").to_csv())

    click.echo(f"casualty scale {cons.scale:.6g}")
    for row in rows:
        sw = "-" if row["switching"] is None else f"{row['switching']:.3e}"
        click.echo(f"{row['rank']}  {row['code']:6s} line-haul {row['line_haul']:.3e}  "
                   f"A/D {row['ad']:.3e}  switching {sw}  total {row['total']:.3e}")
    for rr in res_rows:
        if rr["quantity"] == "total":
            click.echo(f"   {rr['code']:6s} total vs reference {rr['reference']:.2e}: "
                       f"{100 * rr['relative_residual']:+.1f}%")
    return 0


@main.command()
@common
@click.option("--speeds", default="25,40,50", show_default=True,
              help="Comma-separated mainline speeds (mph).")
@handle_errors
def sensitivity(config_path, no_defaults, scenarios, out, fmt, speeds):
    """Line-haul and total casualties across mainline speeds."""
    inputs = _inputs(config_path, no_defaults)
    specs = inputs.select(_codes(scenarios))
    vs = _speeds(speeds)
    cons = apply_calibration(inputs.consequence, inputs.rates, inputs.models, inputs.scenarios)
    rows = speed_sensitivity(specs, vs, inputs.rates, inputs.models, cons)
    o = Output(out, fmt, _meta("sensitivity", inputs, scenarios=[s.code for s in specs],
                               speeds=vs))
    long_rows = [{"code": r.code, "speed": r.speed, "line_haul": r.line_haul, "yard": r.yard,
                  "total": r.total, "rank": r.rank} for r in rows]
    o.table("sensitivity", ["code", "speed", "line_haul", "yard", "total", "rank"], long_rows)

    wide_lh, wide_tot = [], []
    for s in specs:
        mine = [r for r in rows if r.code == s.code]
        ranks = {r.rank for r in mine}
        wide_lh.append({"code": s.code, **{f"{r.speed:g}mph": r.line_haul for r in mine}})
        wide_tot.append({"code": s.code, **{f"{r.speed:g}mph": r.total for r in mine},
                         "rank": mine[0].rank if len(ranks) == 1 else "varies"})
    sp_cols = [f"{v:g}mph" for v in vs]
    o.csv("sensitivity_line_haul", ["code"] + sp_cols, wide_lh)
    o.csv("sensitivity_totals", ["code"] + sp_cols + ["rank"], wide_tot)

    res_rows = []
    for key, field_ in (("line_haul_by_speed", "line_haul"), ("total_by_speed", "total")):
        for r in rows:
            pub = inputs.references.get(key, {}).get(r.code, {})
            pv = pub.get(int(r.speed)) if float(r.speed).is_integer() else None
            if pv is not None:
                model = getattr(r, field_)
                res_rows.append({"code": r.code, "quantity": field_, "speed": r.speed,
                                 "model": model, "reference": pv,
                                 "relative_residual": _residual(model, pv)})
    if res_rows:
        o.csv("sensitivity_residuals", ["code", "quantity", "speed", "model", "reference",
                                        "relative_residual"], res_rows)
    for w in wide_tot:
        click.echo(f"{w['code']:6s} " + "  ".join(f"{c} {w[c]:.3e}" for c in sp_cols)
                   + f"  rank {w['rank']}")
    return 0


@main.command()
@common
@click.option("--trials", type=int, default=1_000_000, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--sigma", type=float, default=3.0, show_default=True,
              help="Tolerance in standard errors.")
@handle_errors
def validate(config_path, no_defaults, scenarios, out, fmt, trials, seed, workers, sigma):
    """Monte Carlo check of every analytic component distribution."""
    inputs = _inputs(config_path, no_defaults)
    specs = inputs.select(_codes(scenarios))
    cfg = SimConfig(trials, seed, workers)
    rows, means = [], []
    for s in specs:
        comps = ["line_haul", "ad"] + ([] if s.train_type == "unit" else ["switching"])
        for comp in comps:
            ctx, consist = context_consist(s, comp, inputs.models)
            chain = conditional_chain(ctx, consist, inputs.models)
            sim = simulate(cfg, inputs.models, ctx, consist)
            est = sim.estimates()
            for name, a, e in (("tank_pmf", chain.tank, sim.tank),
                               ("release_pmf", chain.release, sim.release),
                               ("gallons_pmf", chain.gallons, sim.gallons)):
                rep = compare_pmfs(a, e, trials, sigma, familywise=True,
                                   low_power_trials=LOW_POWER_TRIALS)
                rows.append({"code": s.code, "component": comp, "check": name,
                             "status": rep.status, "max_abs_z": float(rep.max_abs_z),
                             "threshold": rep.threshold, "analytic": None, "empirical": None,
                             "stderr": None, "chi2": rep.chi2, "dof": rep.dof})
            for name, a in (("tank", chain.tank.mean()), ("release", chain.release.mean()),
                            ("gallons", chain.gallons.mean())):
                row = {"code": s.code, "component": comp, "check": f"mean_{name}",
                       "point": check_mean(a, est[name], sigma), "chi2": None, "dof": None}
                rows.append(row)
                means.append(row)
    # the mean checks form one family, like the support points of a PMF check
    limit = familywise_threshold(sigma, len(means))
    for row in means:
        pc = row.pop("point")
        z = float(abs(pc.z))
        row.update({"status": ("low-power" if trials < LOW_POWER_TRIALS
                               else "pass" if z <= limit else "fail"),
                    "max_abs_z": z, "threshold": limit, "analytic": pc.analytic,
                    "empirical": pc.empirical, "stderr": pc.stderr})
    o = Output(out, fmt, _meta("validate", inputs, scenarios=[s.code for s in specs],
                               trials=trials, seed=seed, sigma=sigma))
    o.table("validate", ["code", "component", "check", "status", "max_abs_z", "threshold",
                         "analytic", "empirical", "stderr", "chi2", "dof"], rows)
    failed = [r for r in rows if r["status"] == "fail"]
    low = [r for r in rows if r["status"] == "low-power"]
    click.echo(f"{len(rows)} checks, {len(failed)} failed, {len(low)} low-power "
               f"(trials={trials}, seed={seed})")
    for r in failed:
        click.echo(f"  FAIL {r['code']} {r['component']} {r['check']} |z|={r['max_abs_z']:.2f}")
    if low:
        click.echo("  low statistical power: increase --trials for a conclusive check")
    return 1 if failed else 0


@main.command(name="calibrate")
@common
@click.option("--anchors", "anchors_path", type=click.Path(dir_okay=False), default=None,
              help="Anchor file (default: from the config, else bundled).")
@click.option("--tolerance", type=float, default=0.02, show_default=True)
@handle_errors
def calibrate_cmd(config_path, no_defaults, scenarios, out, fmt, anchors_path, tolerance):
    """Fit POD/severity parameters to anchor probabilities."""
    inputs = _inputs(config_path, no_defaults)
    anchors = inputs.anchors
    digests = {}
    if anchors_path is not None:
        if not Path(anchors_path).is_file():
            raise ConfigError(f"anchors file {anchors_path} not found")
        anchors = tuple(load_anchors(anchors_path))
        digests["anchors_override"] = file_digest(anchors_path)
    result = fit_anchors(list(anchors), inputs.models, tolerance)
    o = Output(out, fmt, _meta("calibrate", inputs, tolerance=tolerance, **digests))
    o.table("calibration", ["anchor", "statistic", "target", "fitted", "residual", "status"],
            result.rows())
    o.text("fitted_models.yaml", result.models.to_yaml())
    if not result.anchors:
        click.echo("no anchors: models unchanged")
    for r in result.rows():
        click.echo(f"{r['status']:10s} {r['anchor']}: target {r['target']:.3f} "
                   f"fitted {r['fitted']:.4f}")
    return 0 if result.ok else 1


if __name__ == "__main__":
    main()
