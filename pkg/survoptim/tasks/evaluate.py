#!/usr/bin/env python3

import numpy as np

from survoptim.analysis.metrics import METRICS, metric_records, survival_regression_metric
from survoptim.common.nonparam import kaplan_meier, write_curve_csv
from survoptim.common.utils import merge_params, write_json
from survoptim.models import fit_survival_model, load_model
from survoptim.tasks.inputs import (DEFAULT_CURVE_POINTS, event_quartiles, load_cohort, mean_curve, output_path,
                                    time_grid)


def print_metric_records(records):
    print(f"\n {'Metric':<8} {'Horizon':>14} {'Value':>14}")
    for record in records:
        print(f" {record['metric']:<8} {record['horizon']:>14.6g} {record['value']:>14.6g}")


def evaluate_main(config, params=None):
    """
    Score a model on the test input (the training input when there is none).

    The model is loaded from ``model_path`` when given, otherwise fitted on the training
    input. The censoring distribution is estimated on the training outcomes.

    Returns:
        dict: Artifact name -> path (``metrics.json``, ``curves.csv``).
    """
    user_defaults = {
        "model": "cox",
        "params": {},
        "model_path": None,
        "metrics": list(METRICS),
        "horizons": None,
        "curve_points": DEFAULT_CURVE_POINTS,
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "evaluate")

    train, _, state = load_cohort(config)
    test = load_cohort(config, "test_input", state)[0] if config.get("test_input") else train
    if p["model_path"]:
        print(f" Loading model from {p['model_path']}")
        model = load_model(p["model_path"])
    else:
        model = fit_survival_model(p["model"], train, p["params"], seed=config["seed"], n_jobs=p["n_jobs"])

    horizons = np.asarray(p["horizons"], dtype=float) if p["horizons"] is not None else event_quartiles(train)
    survival = model.predict_survival(test.features, horizons)
    records = []
    for metric in p["metrics"]:
        values = survival_regression_metric(metric, train.outcomes, test.outcomes, survival, horizons)
        records.extend(metric_records(metric, horizons, values))
    print_metric_records(records)

    grid = time_grid(test.times, p["curve_points"])
    curves = {
        "kaplan_meier": kaplan_meier(test.times, test.events),
        "model_mean": mean_curve(model.predict_survival(test.features, grid), grid),
    }
    payload = {"task": "evaluate", "model": p["model_path"] or p["model"], "n_test": test.n,
               "horizons": horizons, "records": records}
    return {
        "metrics.json": write_json(output_path(config, "metrics.json"), payload),
        "curves.csv": write_curve_csv(curves, output_path(config, "curves.csv")),
    }
