#!/usr/bin/env python3

from dataclasses import fields

from survoptim.analysis.simulate import SimSpec, generate, generate_domains, save_cohort_csv, true_survival
from survoptim.common.nonparam import kaplan_meier, write_curve_csv
from survoptim.common.utils import merge_params, write_json
from survoptim.tasks.inputs import DEFAULT_CURVE_POINTS, mean_curve, output_path, time_grid


def cohort_curves(dataset, truth, prefix, points):
    grid = time_grid(dataset.times, points)
    return {
        f"{prefix}_kaplan_meier": kaplan_meier(dataset.times, dataset.events),
        f"{prefix}_true_mean": mean_curve(true_survival(truth, grid), grid),
    }


def simulate_main(config, params=None):
    """
    Generate a synthetic cohort.

    Writes ``cohort.csv`` (``source.csv`` and ``target.csv`` with ``domains: true``),
    ``truth.json`` and ``curves.csv`` (Kaplan-Meier against the true mean survival).

    Returns:
        dict: Artifact name -> path.
    """
    user_defaults = {f.name: f.default for f in fields(SimSpec) if f.name != "seed"}
    user_defaults.update({"domains": False, "curve_points": DEFAULT_CURVE_POINTS})
    p = merge_params(user_defaults, params, "simulate")

    spec_values = {key: p[key] for key in user_defaults if key not in ("domains", "curve_points")}
    for key in ("beta", "group_shapes", "group_scales"):
        if spec_values[key] is not None:
            spec_values[key] = tuple(spec_values[key])
    spec = SimSpec(seed=config["seed"], **spec_values)
    print(f" Scenario: {spec.scenario} | n: {spec.n} | d: {spec.d} | target censoring: {spec.censoring}")

    if p["domains"]:
        cohorts = dict(zip(("source", "target"), generate_domains(spec)))
    else:
        cohorts = {"cohort": generate(spec)}

    artifacts, curves, truths = {}, {}, {}
    for name, (dataset, truth) in cohorts.items():
        print(f" {name}: {dataset.n} rows, censored fraction {truth.censored_fraction:.4f}")
        artifacts[f"{name}.csv"] = save_cohort_csv(dataset, output_path(config, f"{name}.csv"))
        curves.update(cohort_curves(dataset, truth, name, p["curve_points"]))
        truths[name] = truth.to_dict()

    artifacts["truth.json"] = write_json(output_path(config, "truth.json"), truths)
    artifacts["curves.csv"] = write_curve_csv(curves, output_path(config, "curves.csv"))
    return artifacts
