"""Command-line entry point for the weighting / fitting / risk pipeline.

Subcommands form a file-based pipeline: ``weight`` writes a pseudoweight CSV,
``fit`` writes a model JSON, ``risk`` evaluates absolute risk curves from the
fit artifact, ``diagnose`` reports covariate balance, and ``simulate`` runs
the Monte Carlo harness.  Every run writes a ``run_meta.json`` capturing the
resolved configuration.  Config errors exit with status 2; computational
(module) errors exit with status 1 and a structured JSON report on stderr.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from dataclasses import asdict

import click
import numpy as np
import pandas as pd

from . import __version__
from .data_model import (COHORT, SURVEY, CellRule, ColumnMap, ingest_registry,
                         ingest_sample)
from .errors import RiskcalError
from .propensity import fit_propensity, resolve_scale
from .pseudoweight import (KW_ONLY, POST_POP, POST_RG, balance_diagnostics,
                           kw_only_weights, kw_weights, poststratify,
                           silverman_bandwidth)
from .simulation import (ESTIMATORS, PopulationConfig, ScenarioConfig,
                         compute_truth, emit_report, generate_population,
                         run_gamma_sweep, run_scenario)
from .survival import breslow_baseline, par_baseline
from .variance import (Target, evaluate_targets, fd_deviates,
                       influence_deviate_sets, risk_interval, run_pipeline,
                       tl_variance)

log = logging.getLogger(__name__)

_POSTSTRAT = {"rg": POST_RG, "pop": POST_POP, "none": KW_ONLY}


def guarded(fn):
    """Convert computational errors into exit 1 with a structured report."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RiskcalError as exc:
            report = {"error": type(exc).__name__, "message": str(exc)}
            click.echo(json.dumps(report, sort_keys=True), err=True)
            sys.exit(1)

    return wrapper


def _terms(expr: str, what: str) -> list[str]:
    parts = [p.strip() for p in expr.split("+") if p.strip()]
    if not parts:
        raise click.UsageError(f"empty {what} specification: {expr!r}")
    return parts


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("RISKCAL_THREADS", "1"))
    if threads < 1:
        raise click.UsageError("--threads must be a positive integer")
    return threads


def _load_sample(path: str, kind: str, covariates, time_col: str, event_col: str):
    """Ingest a CSV, auto-detecting the optional id/weight/stratum/psu columns."""
    try:
        header = list(pd.read_csv(path, nrows=0).columns)
    except Exception as exc:
        raise click.UsageError(f"cannot read {path}: {exc}")
    schema = ColumnMap(
        time=time_col, event=event_col,
        covariates={c: c for c in covariates},
        weight="weight" if ("weight" in header and kind == SURVEY) else None,
        id="id" if "id" in header else None,
        stratum="stratum" if "stratum" in header else None,
        psu="psu" if "psu" in header else None,
    )
    return ingest_sample(path, schema, kind)


def _cells_from_columns(sample, columns) -> np.ndarray:
    """Cell labels from the cross-classification of the named columns.

    Values are rendered compactly (1.0 -> "1") and joined with "|" so labels
    line up with registry cell keys.
    """
    cols = []
    for c in columns:
        if c not in sample.covariates:
            raise click.UsageError(f"cell column {c!r} not among loaded covariates")
        cols.append([f"{v:g}" for v in sample.covariates[c]])
    return np.array(["|".join(vals) for vals in zip(*cols)], dtype=object)


def _write_meta(out_dir: str, payload: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_meta.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
    return path


def _parse_grid(expr: str) -> np.ndarray:
    try:
        t0, t1, step = (float(x) for x in expr.split(":"))
    except ValueError:
        raise click.UsageError(f"--grid must be t0:t1:step, got {expr!r}")
    if step <= 0 or t1 < t0 or t0 < 0:
        raise click.UsageError(f"invalid grid {expr!r}")
    return np.arange(t0, t1 + 0.5 * step, step)


def _parse_profile(expr: str) -> dict:
    out = {}
    for part in expr.split(","):
        if "=" not in part:
            raise click.UsageError(f"profile entries must be col=value, got {part!r}")
        k, v = part.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise click.UsageError(f"non-numeric profile value in {part!r}")
    if not out:
        raise click.UsageError(f"empty profile {expr!r}")
    return out


@click.group()
@click.version_option(version=__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log one line per replicate.")
def main(verbose):
    """Absolute risk estimation from a cohort, a reference survey, and
    registry summary counts."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# weight


@main.command()
@click.option("--cohort", "cohort_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--survey", "survey_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--propensity", required=True,
              help="Participation model columns, e.g. 'z1+z2'.")
@click.option("--scale", default="auto", show_default=True,
              help="Survey class scale factor, 'auto' or a value in (0,1).")
@click.option("--tol", default=1e-8, show_default=True, type=float)
@click.option("--bandwidth", default="auto", show_default=True,
              help="Kernel bandwidth, 'auto' (rule of thumb) or a value.")
@click.option("--poststrat", type=click.Choice(["rg", "pop", "none"]),
              default="none", show_default=True)
@click.option("--registry", "registry_path",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--cells", help="Comma-separated cell columns, e.g. 'cell' or 'z2s'.")
@click.option("--collapse-cells", is_flag=True,
              help="Merge empty registry cells into the nearest occupied one.")
@click.option("--time-col", default="time", show_default=True)
@click.option("--event-col", default="event", show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--threads", type=int, default=None,
              help="Worker cap (falls back to RISKCAL_THREADS, then 1).")
@guarded
def weight(cohort_path, survey_path, propensity, scale, tol, bandwidth,
           poststrat, registry_path, cells, collapse_cells, time_col,
           event_col, out_dir, threads):
    """Estimate pseudoweights (and optionally poststratify to a registry)."""
    threads = _resolve_threads(threads)
    prop_covs = _terms(propensity, "propensity")
    cell_cols = [c.strip() for c in cells.split(",")] if cells else []
    if poststrat != "none" and (registry_path is None or not cell_cols):
        raise click.UsageError("--poststrat rg|pop requires --registry and --cells")
    if scale != "auto":
        try:
            float(scale)
        except ValueError:
            raise click.UsageError(f"--scale must be 'auto' or a number, got {scale!r}")
    if bandwidth != "auto":
        try:
            float(bandwidth)
        except ValueError:
            raise click.UsageError(
                f"--bandwidth must be 'auto' or a number, got {bandwidth!r}")

    covs = list(dict.fromkeys(prop_covs + cell_cols))
    cohort = _load_sample(cohort_path, COHORT, covs, time_col, event_col)
    survey = _load_sample(survey_path, SURVEY, prop_covs, time_col, event_col)

    a = resolve_scale(cohort, survey, scale)
    pfit = fit_propensity(cohort, survey, prop_covs, a, tol=tol)
    h = silverman_bandwidth(pfit.q_cohort) if bandwidth == "auto" else float(bandwidth)
    kw = kw_weights(pfit.q_cohort, pfit.q_survey, survey.w, h)
    cell_table = []
    if poststrat == "none":
        ws = kw_only_weights(kw, h)
    else:
        registry = ingest_registry(registry_path)
        cell_arr = _cells_from_columns(cohort, cell_cols)
        ws = poststratify(kw, cohort, registry, _POSTSTRAT[poststrat], cell_arr,
                          collapse=collapse_cells, bandwidth=h)
        for g in sorted(registry.event_cells):
            in_cell = cell_arr == g
            cell_table.append({
                "cell": g,
                "registry_events": registry.event_cells[g],
                "weighted_events": float(ws.final[in_cell & (cohort.d == 1)].sum()),
                "weighted_total": float(ws.final[in_cell].sum()),
            })

    os.makedirs(out_dir, exist_ok=True)
    weights_path = os.path.join(out_dir, "weights.csv")
    pd.DataFrame({
        "id": cohort.ids, "kw": ws.kw,
        "post_factor": ws.post_factor, "final": ws.final,
    }).to_csv(weights_path, index=False)

    gamma = {"intercept": float(pfit.gamma[0]),
             **{c: float(g) for c, g in zip(prop_covs, pfit.gamma[1:])}}
    click.echo(f"{'term':<16}{'estimate':>14}")
    for term, val in gamma.items():
        click.echo(f"{term:<16}{val:>14.6f}")
    click.echo(f"scale a = {a:.6g}   bandwidth h = "
               f"{'degenerate' if ws.bandwidth is None else f'{ws.bandwidth:.6g}'}")

    summary = {
        "gamma": gamma, "scale_a": a, "bandwidth": ws.bandwidth,
        "variant": ws.variant,
        "mass": {"survey_weight_total": float(survey.w.sum()),
                 "kw_total": float(ws.kw.sum()),
                 "final_total": float(ws.final.sum())},
        "cells": cell_table,
        "propensity_iterations": pfit.iterations,
    }
    with open(os.path.join(out_dir, "weight_summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_meta(out_dir, {
        "command": "weight", "package_version": __version__,
        "options": {
            "cohort": cohort_path, "survey": survey_path,
            "propensity": prop_covs, "scale": scale, "resolved_scale_a": a,
            "tol": tol, "bandwidth": bandwidth,
            "resolved_bandwidth": ws.bandwidth, "poststrat": poststrat,
            "registry": registry_path, "cells": cell_cols,
            "collapse_cells": collapse_cells, "time_col": time_col,
            "event_col": event_col, "threads": threads,
        },
    })
    click.echo(f"wrote {weights_path}")


# ---------------------------------------------------------------------------
# fit


@main.command()
@click.option("--cohort", "cohort_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path",
              type=click.Path(exists=True, dir_okay=False),
              help="weights.csv from a prior 'weight' run (id, final).")
@click.option("--model", required=True, help="Risk model columns, e.g. 'z1+z2+z3'.")
@click.option("--baseline", type=click.Choice(["breslow", "par", "both"]),
              default="breslow", show_default=True)
@click.option("--registry", "registry_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Registry JSON (required for the par baseline).")
@click.option("--horizon", type=float, default=None,
              help="Upper time for the par baseline table "
                   "(default: last observed time).")
@click.option("--survey", "survey_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Fit the full weighting chain in one pass instead of "
                   "consuming a weights file (enables chain-aware variance).")
@click.option("--propensity", help="Participation model columns (with --survey).")
@click.option("--scale", default="auto", show_default=True)
@click.option("--bandwidth", default="auto", show_default=True)
@click.option("--poststrat", type=click.Choice(["rg", "pop", "none"]),
              default="none", show_default=True)
@click.option("--cells", help="Comma-separated cell columns (with --poststrat).")
@click.option("--collapse-cells", is_flag=True)
@click.option("--tol", default=1e-8, show_default=True, type=float)
@click.option("--time-col", default="time", show_default=True)
@click.option("--event-col", default="event", show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--threads", type=int, default=None)
@guarded
def fit(cohort_path, weights_path, model, baseline, registry_path, horizon,
        survey_path, propensity, scale, bandwidth, poststrat, cells,
        collapse_cells, tol, time_col, event_col, out_dir, threads):
    """Fit the weighted proportional hazards model and store baselines."""
    threads = _resolve_threads(threads)
    model_cols = _terms(model, "model")
    if baseline in ("par", "both") and registry_path is None:
        raise click.UsageError("--baseline par requires --registry")
    if survey_path is not None and propensity is None:
        raise click.UsageError("--survey requires --propensity")
    if survey_path is not None and weights_path is not None:
        raise click.UsageError("--survey and --weights are mutually exclusive")
    prop_covs = _terms(propensity, "propensity") if propensity else []
    cell_cols = [c.strip() for c in cells.split(",")] if cells else []
    if poststrat != "none" and (registry_path is None or not cell_cols):
        raise click.UsageError("--poststrat rg|pop requires --registry and --cells")

    covs = list(dict.fromkeys(model_cols + prop_covs + cell_cols))
    cohort = _load_sample(cohort_path, COHORT, covs, time_col, event_col)
    registry = ingest_registry(registry_path) if registry_path else None

    if survey_path is not None:
        survey = _load_sample(survey_path, SURVEY, prop_covs, time_col, event_col)
        cell_arr = _cells_from_columns(cohort, cell_cols) if cell_cols else None
        state = run_pipeline(
            cohort, survey, prop_covs, model_cols, registry=registry,
            cells=cell_arr, variant=_POSTSTRAT[poststrat], a=scale,
            bandwidth="auto" if bandwidth == "auto" else float(bandwidth),
            collapse=collapse_cells, tol=tol)
    else:
        base = None
        if weights_path is not None:
            wdf = pd.read_csv(weights_path)
            if "final" not in wdf.columns:
                raise click.UsageError(f"{weights_path} has no 'final' column")
            if "id" in wdf.columns:
                lookup = dict(zip(wdf["id"], wdf["final"]))
                try:
                    base = np.array([lookup[i] for i in cohort.ids], dtype=float)
                except KeyError as exc:
                    raise click.UsageError(
                        f"cohort id {exc.args[0]!r} missing from {weights_path}")
            elif len(wdf) == cohort.n:
                base = wdf["final"].to_numpy(dtype=float)
            else:
                raise click.UsageError(
                    f"{weights_path} has {len(wdf)} rows for {cohort.n} cohort units")
        state = run_pipeline(cohort, None, (), model_cols, registry=registry,
                             cohort_base_weights=base, tol=tol)

    if horizon is not None:
        t_hi = float(horizon)
    else:
        t_hi = float(np.max(cohort.x))
        if registry is not None:
            t_hi = min(t_hi, float(registry.horizon))
    baselines = {}
    if baseline in ("breslow", "both"):
        b = breslow_baseline(state.fit)
        baselines["breslow"] = {"knots": b.knots.tolist(),
                                "values": b.values.tolist()}
    if baseline in ("par", "both"):
        b = par_baseline(state.fit, registry, t_max=t_hi)
        baselines["par"] = {"knots": np.asarray(b.knots).tolist(),
                            "values": np.asarray(b.values).tolist(),
                            "t_max": t_hi}

    doc = {
        "model": model_cols,
        "beta": state.fit.beta.tolist(),
        "iterations": state.fit.iterations,
        "baselines": baselines,
        "recipe": {
            "cohort": os.path.abspath(cohort_path),
            "survey": os.path.abspath(survey_path) if survey_path else None,
            "weights": os.path.abspath(weights_path) if weights_path else None,
            "registry": os.path.abspath(registry_path) if registry_path else None,
            "propensity": prop_covs, "scale": scale, "bandwidth": bandwidth,
            "poststrat": poststrat, "cells": cell_cols,
            "collapse_cells": collapse_cells, "tol": tol,
            "time_col": time_col, "event_col": event_col, "horizon": t_hi,
        },
    }
    os.makedirs(out_dir, exist_ok=True)
    fit_path = os.path.join(out_dir, "fit.json")
    with open(fit_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    _write_meta(out_dir, {
        "command": "fit", "package_version": __version__,
        "options": {**doc["recipe"], "model": model_cols,
                    "baseline": baseline, "threads": threads},
        "resolved": {"scale_a": state.a,
                     "bandwidth": state.weights.bandwidth,
                     "variant": state.variant},
    })
    for name, b in zip(model_cols, state.fit.beta):
        click.echo(f"{name:<16}{b:>14.6f}")
    click.echo(f"wrote {fit_path}")


# ---------------------------------------------------------------------------
# risk


def _baseline_value(doc: dict, method: str, t: np.ndarray) -> np.ndarray:
    if method not in doc["baselines"]:
        raise click.UsageError(
            f"fit artifact has no {method!r} baseline; refit with --baseline "
            f"{method} or both")
    tab = doc["baselines"][method]
    knots = np.asarray(tab["knots"], dtype=float)
    values = np.asarray(tab["values"], dtype=float)
    if method == "par":
        if np.any(t > tab["t_max"] + 1e-12):
            raise click.UsageError(
                f"requested time beyond the stored par horizon {tab['t_max']}; "
                f"refit with a larger --horizon")
        return np.interp(t, knots, values)
    idx = np.searchsorted(knots, t, side="right")
    return np.concatenate([[0.0], values])[idx]


def _rebuild_state(recipe: dict, model_cols):
    """Re-run the pipeline described by a fit artifact's recipe."""
    for key in ("cohort", "survey", "weights", "registry"):
        path = recipe.get(key)
        if path is not None and not os.path.exists(path):
            raise click.UsageError(
                f"recipe input {key} = {path} no longer exists; rerun 'fit'")
    covs = list(dict.fromkeys(model_cols + recipe["propensity"] + recipe["cells"]))
    cohort = _load_sample(recipe["cohort"], COHORT, covs,
                          recipe["time_col"], recipe["event_col"])
    registry = ingest_registry(recipe["registry"]) if recipe["registry"] else None
    if recipe["survey"] is not None:
        survey = _load_sample(recipe["survey"], SURVEY, recipe["propensity"],
                              recipe["time_col"], recipe["event_col"])
        cell_arr = (_cells_from_columns(cohort, recipe["cells"])
                    if recipe["cells"] else None)
        bw = recipe["bandwidth"]
        return run_pipeline(
            cohort, survey, recipe["propensity"], model_cols, registry=registry,
            cells=cell_arr, variant=_POSTSTRAT[recipe["poststrat"]],
            a=recipe["scale"], bandwidth="auto" if bw == "auto" else float(bw),
            collapse=recipe["collapse_cells"], tol=recipe["tol"])
    base = None
    if recipe["weights"] is not None:
        wdf = pd.read_csv(recipe["weights"])
        if "id" in wdf.columns:
            lookup = dict(zip(wdf["id"], wdf["final"]))
            base = np.array([lookup[i] for i in cohort.ids], dtype=float)
        else:
            base = wdf["final"].to_numpy(dtype=float)
    return run_pipeline(cohort, None, (), model_cols, registry=registry,
                        cohort_base_weights=base, tol=recipe["tol"])


@main.command()
@click.option("--fit", "fit_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="fit.json from a prior 'fit' run.")
@click.option("--profile", "profiles", multiple=True, required=True,
              help="Covariate profile 'z1=0.5,z2=-1'; repeatable.")
@click.option("--time", "times", multiple=True, type=float,
              help="Evaluation time; repeatable.")
@click.option("--grid", help="Evaluation grid t0:t1:step (merged with --time).")
@click.option("--baseline", type=click.Choice(["breslow", "par"]),
              default="breslow", show_default=True)
@click.option("--variance", type=click.Choice(["tl", "fd", "none"]),
              default="none", show_default=True)
@click.option("--export-deviates", is_flag=True,
              help="Write per-unit influence deviates to deviates.csv.")
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--threads", type=int, default=None)
@guarded
def risk(fit_path, profiles, times, grid, baseline, variance, export_deviates,
         out_dir, threads):
    """Project absolute risk curves from a stored fit."""
    threads = _resolve_threads(threads)
    with open(fit_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"malformed fit artifact {fit_path}: {exc}")
    for key in ("model", "beta", "baselines", "recipe"):
        if key not in doc:
            raise click.UsageError(f"fit artifact {fit_path} lacks {key!r}")
    model_cols = doc["model"]
    beta = np.asarray(doc["beta"], dtype=float)

    t_eval = sorted(set(float(t) for t in times)
                    | (set(_parse_grid(grid).tolist()) if grid else set()))
    if not t_eval:
        raise click.UsageError("give at least one --time or a --grid")
    if any(t < 0 for t in t_eval):
        raise click.UsageError("evaluation times must be nonnegative")

    prof_vecs = []
    for expr in profiles:
        mapping = _parse_profile(expr)
        extra = set(mapping) - set(model_cols)
        missing = set(model_cols) - set(mapping)
        if extra or missing:
            raise click.UsageError(
                f"profile {expr!r} must set exactly the model columns "
                f"{model_cols} (missing {sorted(missing)}, extra {sorted(extra)})")
        prof_vecs.append(np.array([mapping[c] for c in model_cols]))

    if export_deviates and variance == "none":
        raise click.UsageError("--export-deviates requires --variance tl or fd")

    rows = []
    t_arr = np.asarray(t_eval)
    if variance == "none":
        lam = _baseline_value(doc, baseline, t_arr)
        for p_idx, (expr, z) in enumerate(zip(profiles, prof_vecs)):
            rr = float(np.exp(beta @ z))
            for t, lv in zip(t_eval, lam):
                rows.append({"profile": expr, "time": t, "baseline": baseline,
                             "r_hat": float(-np.expm1(-lv * rr)),
                             "se": "", "lo": "", "hi": ""})
        dev_sets = None
    else:
        state = _rebuild_state(doc["recipe"], model_cols)
        targets = [Target("risk", time=t, z=tuple(z), baseline=baseline)
                   for z in prof_vecs for t in t_eval]
        points = evaluate_targets(state, targets)
        dev_fn = influence_deviate_sets if variance == "tl" else fd_deviates
        dev_sets = dev_fn(state, targets)
        k = 0
        for expr in profiles:
            for t in t_eval:
                v = tl_variance(dev_sets[k], cohort=state.cohort,
                                survey=state.survey)
                se = float(np.sqrt(v))
                lo, hi = risk_interval(float(points[k]), se)
                rows.append({"profile": expr, "time": t, "baseline": baseline,
                             "r_hat": float(points[k]), "se": se,
                             "lo": lo, "hi": hi})
                k += 1

    os.makedirs(out_dir, exist_ok=True)
    risk_path = os.path.join(out_dir, "risk.csv")
    frame = pd.DataFrame(rows, columns=["profile", "time", "baseline",
                                        "r_hat", "se", "lo", "hi"])
    frame.to_csv(risk_path, index=False)
    if export_deviates and dev_sets is not None:
        dev_rows = []
        for ds in dev_sets:
            label = (f"risk[t={ds.target.time:g},"
                     f"z={','.join(f'{v:g}' for v in ds.target.z)}]")
            for sample_name, vals in (("cohort", ds.cohort_values),
                                      ("survey", ds.survey_values)):
                if vals is None:
                    continue
                for i, v in enumerate(vals):
                    dev_rows.append({"target": label, "sample": sample_name,
                                     "unit": i, "deviate": float(v)})
        pd.DataFrame(dev_rows).to_csv(os.path.join(out_dir, "deviates.csv"),
                                      index=False)
    _write_meta(out_dir, {
        "command": "risk", "package_version": __version__,
        "options": {"fit": fit_path, "profiles": list(profiles),
                    "times": t_eval, "baseline": baseline,
                    "variance": variance, "threads": threads,
                    "export_deviates": export_deviates},
    })
    click.echo(frame.to_string(index=False))
    click.echo(f"wrote {risk_path}")


# ---------------------------------------------------------------------------
# diagnose


@main.command()
@click.option("--cohort", "cohort_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--survey", "survey_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path",
              type=click.Path(exists=True, dir_okay=False),
              help="weights.csv; omitted means unit cohort weights.")
@click.option("--covariates", required=True, help="Columns to compare, 'z1+z2'.")
@click.option("--threshold", default=0.1, show_default=True, type=float)
@click.option("--time-col", default="time", show_default=True)
@click.option("--event-col", default="event", show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@guarded
def diagnose(cohort_path, survey_path, weights_path, covariates, threshold,
             time_col, event_col, out_dir):
    """Weighted covariate balance between the cohort and the survey."""
    covs = _terms(covariates, "covariates")
    cohort = _load_sample(cohort_path, COHORT, covs, time_col, event_col)
    survey = _load_sample(survey_path, SURVEY, covs, time_col, event_col)
    if weights_path is not None:
        wdf = pd.read_csv(weights_path)
        if "id" in wdf.columns:
            lookup = dict(zip(wdf["id"], wdf["final"]))
            w = np.array([lookup[i] for i in cohort.ids], dtype=float)
        else:
            w = wdf["final"].to_numpy(dtype=float)
    else:
        w = np.ones(cohort.n)
    table = balance_diagnostics(cohort, w, survey, covs,
                                flag_threshold=threshold)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "balance.csv")
    table.to_csv(path, index=False)
    _write_meta(out_dir, {
        "command": "diagnose", "package_version": __version__,
        "options": {"cohort": cohort_path, "survey": survey_path,
                    "weights": weights_path, "covariates": covs,
                    "threshold": threshold, "time_col": time_col,
                    "event_col": event_col},
    })
    click.echo(table.to_string(index=False))
    click.echo(f"wrote {path}")


# ---------------------------------------------------------------------------
# simulate


def _scenario_from_config(scenario_id, reps, risk_time, overrides) -> ScenarioConfig:
    kwargs = {"id": scenario_id, "reps": reps}
    if risk_time is not None:
        kwargs["risk_time"] = risk_time
    for key, val in overrides.items():
        if key == "cell_rules":
            kwargs["cell_rules"] = tuple(
                CellRule(r["column"], cuts=tuple(r["cuts"]),
                         labels=tuple(r["labels"])) for r in val)
        elif key in ("gamma_z", "survey_gamma", "lambda_grid", "prop_covariates"):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    return ScenarioConfig(**kwargs)


@main.command()
@click.option("--scenario", "scenarios", multiple=True, type=int, default=(1,),
              show_default=True, help="Scenario id 1-4; repeatable.")
@click.option("--reps", default=500, show_default=True, type=int)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--pop-size", default=200_000, show_default=True, type=int)
@click.option("--rho", default=0.0, show_default=True, type=float,
              help="Correlation coupling the unobserved covariate to the others.")
@click.option("--risk-time", type=float, default=None,
              help="Absolute risk evaluation time (default from ScenarioConfig).")
@click.option("--n-cohort", type=int, default=None,
              help="Cohort sample size (default from ScenarioConfig).")
@click.option("--n-survey", type=int, default=None,
              help="Survey sample size (default from ScenarioConfig).")
@click.option("--estimators", default=",".join(ESTIMATORS), show_default=True,
              help="Comma-separated subset of survey,naive,kws,post_kws.")
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False),
              help="JSON with 'population' and 'scenario' field overrides "
                   "(takes precedence over flags).")
@click.option("--sweep-gamma-d", "sweep",
              help="Comma-separated gamma_d values: run the event-rate sweep "
                   "instead of the scenario tables.")
@click.option("--regenerate-fp", is_flag=True,
              help="Draw a fresh population per replicate (sensitivity mode).")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--threads", type=int, default=None)
@guarded
def simulate(scenarios, reps, seed, pop_size, rho, risk_time, n_cohort,
             n_survey, estimators, config_path, sweep, regenerate_fp, out_dir,
             threads):
    """Run the Monte Carlo study and write the metric tables."""
    threads = _resolve_threads(threads)
    overrides = {"population": {}, "scenario": {}}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            try:
                overrides.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise click.UsageError(f"malformed config {config_path}: {exc}")

    pop_kwargs = {"size": pop_size, "rho": rho, "seed": seed}
    for key, val in overrides.get("population", {}).items():
        pop_kwargs[key] = tuple(val) if key in ("covariate_sd", "beta") else val
    pop_cfg = PopulationConfig(**pop_kwargs)

    est_list = [e.strip() for e in estimators.split(",") if e.strip()]
    unknown = set(est_list) - set(ESTIMATORS)
    if unknown:
        raise click.UsageError(f"unknown estimator(s): {sorted(unknown)}")

    scen_over = dict(overrides.get("scenario", {}))
    if n_cohort is not None:
        scen_over.setdefault("n_cohort", n_cohort)
    if n_survey is not None:
        scen_over.setdefault("n_survey", n_survey)
    if "id" in scen_over:
        scenarios = (int(scen_over["id"]),)
        scen_over = {k: v for k, v in scen_over.items() if k != "id"}
    if "reps" in scen_over:
        reps = int(scen_over.pop("reps"))

    cli_options = {
        "scenarios": list(scenarios), "reps": reps, "seed": seed,
        "pop_size": pop_size, "rho": rho, "risk_time": risk_time,
        "n_cohort": n_cohort, "n_survey": n_survey,
        "estimators": est_list, "config": config_path,
        "sweep_gamma_d": sweep, "regenerate_fp": regenerate_fp,
        "threads": threads,
    }

    if sweep is not None:
        try:
            gammas = [float(g) for g in sweep.split(",")]
        except ValueError:
            raise click.UsageError(f"--sweep-gamma-d must be numeric: {sweep!r}")
        scen = _scenario_from_config(scenarios[0], reps, risk_time, scen_over)
        frame = run_gamma_sweep(pop_cfg, scen, gammas)
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "gamma_sweep.csv")
        frame.to_csv(path, index=False)
        _write_meta(out_dir, {
            "command": "simulate", "package_version": __version__,
            "options": cli_options, "population": asdict(pop_cfg),
        })
        click.echo(f"wrote {path}")
        return

    tables = []
    fp = registry = None
    for sid in scenarios:
        scen = _scenario_from_config(sid, reps, risk_time, scen_over)
        if fp is None and not regenerate_fp:
            fp, registry = generate_population(pop_cfg)
        table = run_scenario(pop_cfg, scen, estimators=est_list, fp=fp,
                             registry=registry, regenerate_fp=regenerate_fp)
        table.meta["cli"] = cli_options
        tables.append(table)
        click.echo(f"scenario {sid}: {scen.reps} replicates done")
    paths = emit_report(tables, out_dir)
    for p in paths:
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()
