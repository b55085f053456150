#!/usr/bin/env python3

import numpy as np

from survoptim.analysis.metrics import phenotype_purity
from survoptim.analysis.phenotyping import (clustering_phenotype, intersectional_phenotype,
                                            phenotype_effect_report, supervised_phenotype, virtual_twins,
                                            write_assignment)
from survoptim.common.nonparam import write_curve_csv
from survoptim.common.utils import merge_params, write_json
from survoptim.models import fit_survival_model
from survoptim.models.coxmix import cmhe_fit
from survoptim.tasks.inputs import event_quartiles, group_curves, load_cohort, output_path

PHENOTYPE_METHODS = ("intersectional", "clustering", "supervised", "virtual_twins")
SUPERVISED_MODELS = ("dsm", "dcm", "cmhe")


def build_assignment(method, dataset, table, p, seed):
    if method == "intersectional":
        return intersectional_phenotype(table, p["cat_vars"], p["num_vars"], p["quantiles"])
    if method == "clustering":
        return clustering_phenotype(dataset.features, p["K"], clusterer=p["clusterer"],
                                    n_components=p["n_components"], membership=p["membership"], seed=seed,
                                    n_jobs=p["n_jobs"])
    if method == "supervised":
        model_params = dict(p["params"])
        model_params.setdefault("K", p["K"])
        if p["model"] == "cmhe":
            model = cmhe_fit(dataset, seed=seed, **model_params)
        else:
            model = fit_survival_model(p["model"], dataset, model_params, seed=seed, n_jobs=p["n_jobs"])
        return supervised_phenotype(model, dataset.features, p["latent"])
    return virtual_twins(dataset, p["horizon"], p["cox_options"], p["forest_options"], seed=seed,
                         n_jobs=p["n_jobs"])


def print_groups(assignment):
    labels = assignment.labels
    print(f"\n Found {assignment.K} phenotypes:")
    for k, descriptor in enumerate(assignment.descriptors):
        print(f"  [{k}] {descriptor}: {int(np.sum(labels == k))} rows")


def phenotype_main(config, params=None):
    """
    Assign phenotypes with one of the four phenotypers.

    Writes ``phenotypes.csv`` and ``groups.json`` (the assignment), ``metrics.json``
    (integrated purity and, when requested, the per-group effect report) and
    ``curves.csv`` (per-group Kaplan-Meier curves).

    Returns:
        dict: Artifact name -> path.
    """
    user_defaults = {
        "method": "clustering",
        "K": 3,
        "cat_vars": [],
        "num_vars": [],
        "quantiles": [0, .5, 1.0],
        "clusterer": "kmeans",
        "n_components": None,
        "membership": "inverse_distance",
        "model": "dcm",
        "params": {},
        "latent": "z",
        "horizon": None,
        "cox_options": {},
        "forest_options": {},
        "purity_horizons": None,
        "report": False,
        "effect_metric": "restricted_mean",
        "n_bootstrap": 200,
        "alpha": None,
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "phenotype")
    if p["method"] not in PHENOTYPE_METHODS:
        raise ValueError(f"Unknown phenotyping method '{p['method']}', expected one of {PHENOTYPE_METHODS}")

    dataset, table, _ = load_cohort(config)
    assignment = build_assignment(p["method"], dataset, table, p, config["seed"])
    print_groups(assignment)

    horizons = (np.asarray(p["purity_horizons"], dtype=float) if p["purity_horizons"] is not None
                else event_quartiles(dataset))
    payload = {
        "task": "phenotype",
        "method": p["method"],
        "purity_horizons": horizons,
        "integrated_purity": phenotype_purity(assignment.labels, dataset.outcomes, strategy="integrated",
                                              horizons=horizons),
    }
    print(f" Integrated purity: {payload['integrated_purity']:.6g}")
    if p["report"]:
        payload["effects"] = phenotype_effect_report(assignment, dataset, p["effect_metric"],
                                                     horizon=p["horizon"], n_bootstrap=p["n_bootstrap"],
                                                     seed=config["seed"], alpha=p["alpha"], n_jobs=p["n_jobs"])

    csv_path, json_path = write_assignment(assignment, output_path(config, "phenotypes.csv"),
                                           output_path(config, "groups.json"))
    return {
        "phenotypes.csv": csv_path,
        "groups.json": json_path,
        "metrics.json": write_json(output_path(config, "metrics.json"), payload),
        "curves.csv": write_curve_csv(group_curves(dataset, assignment.labels, "phenotype"),
                                      output_path(config, "curves.csv")),
    }
