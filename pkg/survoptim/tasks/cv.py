#!/usr/bin/env python3

import numpy as np

from survoptim.analysis.shiftcv import counterfactual_cv, survival_regression_cv
from survoptim.common.utils import merge_params, write_json
from survoptim.tasks.inputs import load_cohort, output_path


def report_record(report):
    """CVReport as JSON without the refitted model (written to model.json)."""
    record = report.to_dict()
    record.pop("model")
    return record


def print_report(label, report):
    print(f"\n {label}: selected configuration {report.selected_index} {report.selected}")
    for index, (params, score) in enumerate(zip(report.grid, report.mean_scores)):
        marker = "*" if index == report.selected_index else " "
        print(f" {marker} [{index}] {params}: mean IBS {score:.6g}")


def cv_main(config, params=None):
    """
    Cross-validated model selection by integrated Brier score.

    With ``counterfactual: true`` one model is selected per treatment arm and
    ``model.json`` holds the counterfactual pair.

    Returns:
        dict: Artifact name -> path (``metrics.json``, ``model.json``).
    """
    user_defaults = {
        "model": "cox",
        "grid": [{}],
        "folds": 5,
        "horizons": None,
        "counterfactual": False,
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "cv")

    dataset, _, _ = load_cohort(config)
    horizons = None if p["horizons"] is None else np.asarray(p["horizons"], dtype=float)
    if p["counterfactual"]:
        treated, control, pair = counterfactual_cv(p["model"], p["grid"], p["folds"], dataset, horizons,
                                                   seed=config["seed"], n_jobs=p["n_jobs"])
        print_report("Treated arm", treated)
        print_report("Control arm", control)
        payload = {"task": "cv", "counterfactual": True,
                   "treated": report_record(treated), "control": report_record(control)}
        model = pair
    else:
        report = survival_regression_cv(p["model"], p["grid"], p["folds"], dataset, horizons,
                                        seed=config["seed"], n_jobs=p["n_jobs"])
        print_report("Cross-validation", report)
        payload = {"task": "cv", "counterfactual": False, "report": report_record(report)}
        model = report.model

    return {
        "metrics.json": write_json(output_path(config, "metrics.json"), payload),
        "model.json": write_json(output_path(config, "model.json"), model.to_dict()),
    }
