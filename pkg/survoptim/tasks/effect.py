#!/usr/bin/env python3

from survoptim.analysis.treatment import PROPENSITY_CLIP, iptw_weights, treatment_effect
from survoptim.common.errors import ValidationError
from survoptim.common.nonparam import kaplan_meier, write_curve_csv
from survoptim.common.numerics import logistic_fit, logistic_predict
from survoptim.common.utils import merge_params, write_json
from survoptim.tasks.inputs import load_cohort, output_path

PROPENSITY_MODELS = (None, "logistic")


def arm_curves(dataset, weights=None, suffix=""):
    curves = {}
    for arm, name in ((1, "treated"), (0, "control")):
        rows = dataset.treatment == arm
        curves[name + suffix] = kaplan_meier(dataset.times[rows], dataset.events[rows],
                                             None if weights is None else weights[rows])
    return curves


def print_estimate(label, estimate):
    s = estimate.summary
    print(f" {label:<11} {estimate.metric}: {estimate.point:.6g} "
          f"(bootstrap mean {s['mean']:.6g}, 95% interval [{s['lower']:.6g}, {s['upper']:.6g}])")


def effect_main(config, params=None):
    """
    Treated-vs-control effect with bootstrap intervals.

    The unadjusted estimate is always reported; with ``propensity: "logistic"`` a
    logistic propensity model on the covariates adds the IPTW-adjusted estimate.

    Returns:
        dict: Artifact name -> path (``metrics.json``, ``curves.csv``).
    """
    user_defaults = {
        "metric": "hazard_ratio",
        "horizon": None,
        "level": None,
        "n_bootstrap": 500,
        "propensity": None,
        "propensity_l2": 1e-3,
        "clip": list(PROPENSITY_CLIP),
        "n_jobs": 1,
    }
    p = merge_params(user_defaults, params, "effect")
    if p["propensity"] not in PROPENSITY_MODELS:
        raise ValueError(f"Unknown propensity model '{p['propensity']}', expected one of {PROPENSITY_MODELS}")

    dataset, _, _ = load_cohort(config)
    if dataset.treatment is None:
        raise ValidationError("The effect task needs a treatment column in the input schema")
    print(f" Treated: {int(dataset.treatment.sum())} | Control: {int(dataset.n - dataset.treatment.sum())}")

    options = dict(horizon=p["horizon"], level=p["level"], n_bootstrap=p["n_bootstrap"], seed=config["seed"],
                   clip=tuple(p["clip"]), n_jobs=p["n_jobs"])
    unadjusted = treatment_effect(p["metric"], dataset.outcomes, dataset.treatment, **options)
    print_estimate("Unadjusted", unadjusted)
    payload = {"task": "effect", "unadjusted": unadjusted.to_dict()}
    curves = arm_curves(dataset)

    if p["propensity"] == "logistic":
        model = logistic_fit(dataset.features, dataset.treatment, l2=p["propensity_l2"])
        propensity = logistic_predict(model, dataset.features)
        adjusted = treatment_effect(p["metric"], dataset.outcomes, dataset.treatment, propensity, **options)
        print_estimate("Adjusted", adjusted)
        payload["adjusted"] = adjusted.to_dict()
        payload["propensity_model"] = model.to_dict()
        curves.update(arm_curves(dataset, iptw_weights(dataset.treatment, propensity, tuple(p["clip"])), "_iptw"))

    return {
        "metrics.json": write_json(output_path(config, "metrics.json"), payload),
        "curves.csv": write_curve_csv(curves, output_path(config, "curves.csv")),
    }
