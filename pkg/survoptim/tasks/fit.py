#!/usr/bin/env python3

from survoptim.common.nonparam import kaplan_meier, write_curve_csv
from survoptim.common.utils import merge_params, write_json
from survoptim.models import fit_survival_model
from survoptim.tasks.inputs import DEFAULT_CURVE_POINTS, load_cohort, mean_curve, output_path, time_grid


def model_payload(model, state):
    """Model record with the preprocessing it was trained under."""
    payload = model.to_dict()
    payload["preprocessor"] = state.to_dict()
    return payload


def fit_main(config, params=None):
    """
    Fit a survival model on the training input.

    Writes ``model.json`` and ``curves.csv`` (training Kaplan-Meier and the model's mean
    predicted survival).

    Args:
        config (dict): Pipeline configuration.
        params (dict): Task parameters.

    Returns:
        dict: Artifact name -> path.
    """
    user_defaults = {
        "model": "cox",
        "params": {},
        "curve_points": DEFAULT_CURVE_POINTS,
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "fit")

    dataset, _, state = load_cohort(config)
    print(f" Training rows: {dataset.n} | features: {dataset.features.shape[1]} | events: {int(dataset.events.sum())}")

    model = fit_survival_model(p["model"], dataset, p["params"], seed=config["seed"], n_jobs=p["n_jobs"])
    print(f" Fitted {p['model']} model")

    grid = time_grid(dataset.times, p["curve_points"])
    curves = {
        "kaplan_meier": kaplan_meier(dataset.times, dataset.events),
        f"{p['model']}_mean": mean_curve(model.predict_survival(dataset.features, grid), grid),
    }
    return {
        "model.json": write_json(output_path(config, "model.json"), model_payload(model, state)),
        "curves.csv": write_curve_csv(curves, output_path(config, "curves.csv")),
    }
