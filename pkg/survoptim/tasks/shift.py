#!/usr/bin/env python3

import logging

import numpy as np

from survoptim.analysis.metrics import metric_records, survival_regression_metric
from survoptim.analysis.shiftcv import (CENSORING_GAP_THRESHOLD, censoring_rate_gap, importance_weights,
                                        weighted_resample)
from survoptim.common.utils import merge_params, write_json
from survoptim.models import fit_survival_model
from survoptim.tasks.inputs import event_quartiles, load_cohort, output_path

logger = logging.getLogger(__name__)

WEIGHTING_MODES = ("resample", "sample_weight")


def score(model, source, target, metrics, horizons):
    survival = model.predict_survival(target.features, horizons)
    records = []
    for metric in metrics:
        records.extend(metric_records(metric, horizons, survival_regression_metric(
            metric, source.outcomes, target.outcomes, survival, horizons)))
    return records


def shift_main(config, params=None):
    """
    Importance-weighted training under covariate shift.

    The training input is the source cohort and ``test_input`` the target cohort. A
    domain classifier gives importance weights for the source rows; the model is trained
    once without and once with them (by weighted resampling or as sample weights), and
    both are scored on the target.

    Returns:
        dict: Artifact name -> path (``metrics.json``).
    """
    user_defaults = {
        "model": "cox",
        "params": {},
        "l2": 1e-2,
        "tempering": 1.0,
        "mode": "resample",
        "resample_factor": 1.0,
        "metrics": ["ibs"],
        "horizons": None,
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "shift")
    if p["mode"] not in WEIGHTING_MODES:
        raise ValueError(f"Unknown weighting mode '{p['mode']}', expected one of {WEIGHTING_MODES}")

    source, _, state = load_cohort(config)
    target = load_cohort(config, "test_input", state)[0]
    print(f" Source rows: {source.n} | Target rows: {target.n}")

    gap = censoring_rate_gap(source.events, target.events)
    if gap > CENSORING_GAP_THRESHOLD:
        print(f" Shift Warning: censoring rates differ by {gap:.3f} between domains; "
              "importance weighting assumes P(T | X) is shared")
        logger.warning("Censoring-rate gap %.3f exceeds %.2f", gap, CENSORING_GAP_THRESHOLD)

    seed = config["seed"]
    weights = importance_weights(source.features, target.features, l2=p["l2"], tempering=p["tempering"])
    if p["mode"] == "resample":
        training = weighted_resample(source, weights, p["resample_factor"], seed)
    else:
        training = source.with_weights(weights)

    horizons = np.asarray(p["horizons"], dtype=float) if p["horizons"] is not None else event_quartiles(target)
    unweighted = fit_survival_model(p["model"], source, p["params"], seed=seed, n_jobs=p["n_jobs"])
    weighted = fit_survival_model(p["model"], training, p["params"], seed=seed, n_jobs=p["n_jobs"])
    payload = {
        "task": "shift",
        "censoring_gap": gap,
        "horizons": horizons,
        "weights": {"mean": float(weights.mean()), "min": float(weights.min()), "max": float(weights.max())},
        "unweighted": score(unweighted, source, target, p["metrics"], horizons),
        "weighted": score(weighted, source, target, p["metrics"], horizons),
    }
    for label in ("unweighted", "weighted"):
        for record in payload[label]:
            print(f" {label:<11} {record['metric']} @ {record['horizon']:.6g}: {record['value']:.6g}")
    return {"metrics.json": write_json(output_path(config, "metrics.json"), payload)}
