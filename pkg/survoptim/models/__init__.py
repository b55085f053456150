"""
Survival model contract.

Every fitted model exposes ``predict_survival(X, times)`` (n x m), ``predict_risk(X, times)``
(its complement) and ``to_dict()``. :func:`fit_survival_model` is the single fitting entry
used by cross-validation and the command line.
"""
import logging

from ..common.errors import SchemaError
from ..common.numerics import OptimizerConfig
from ..common.utils import SCHEMA_VERSION, merge_params, read_json, write_json
from .coxmix import CMHEModel, DCMModel, dcm_fit
from .coxph import HIDDEN, LINEAR, CounterfactualPair, CoxModel, cox_fit
from .forests import RegressionForest, SurvivalForest, rsf_fit
from .mixtures import DSMModel, dsm_fit

logger = logging.getLogger(__name__)

MODEL_DEFAULTS = {
    "cox": {"l2": 1e-4, "optimizer": None},
    "dcph": {"l2": 1e-3, "hidden": 100, "optimizer": None},
    "dsm": {"K": 3, "family": "weibull", "representation": LINEAR, "hidden": 100, "l2": 1e-3,
            "temperature": 1.0, "optimizer": None},
    "dcm": {"K": 3, "representation": LINEAR, "hidden": 100, "l2": 1e-3, "gating_l2": 1e-2,
            "max_iterations": 50, "tolerance": 1e-5, "optimizer": None},
    "rsf": {"n_trees": 100, "max_depth": None, "min_leaf_events": 3, "max_features": "sqrt", "bootstrap": True},
}

MODEL_CLASSES = {
    "cox": CoxModel,
    "dsm": DSMModel,
    "dcm": DCMModel,
    "cmhe": CMHEModel,
    "rsf": SurvivalForest,
    "regforest": RegressionForest,
}


def _optimizer(settings):
    return OptimizerConfig(**settings) if settings else None


def fit_survival_model(spec, dataset, params=None, seed=0, n_jobs=1):
    """
    Fit one of the supported survival models.

    Args:
        spec (str): ``cox``, ``dcph`` (Cox with a hidden layer), ``dsm``, ``dcm`` or ``rsf``.
        dataset (SurvivalDataset): Training data; its sample weights are used by the
            likelihood-based models.
        params (dict): Hyperparameters merged over ``MODEL_DEFAULTS[spec]``.
        seed (int): Seed of every stochastic step.
        n_jobs (int): joblib workers where the model parallelises.

    Returns:
        Fitted model handle.
    """
    if spec not in MODEL_DEFAULTS:
        raise ValueError(f"Unknown model '{spec}', expected one of {sorted(MODEL_DEFAULTS)}")
    p = merge_params(MODEL_DEFAULTS[spec], params, spec)
    if spec == "cox":
        return cox_fit(dataset, l2=p["l2"], representation=LINEAR, seed=seed, config=_optimizer(p["optimizer"]))
    if spec == "dcph":
        return cox_fit(dataset, l2=p["l2"], representation=HIDDEN, hidden=p["hidden"], seed=seed,
                       config=_optimizer(p["optimizer"]))
    if spec == "dsm":
        return dsm_fit(dataset, K=p["K"], family=p["family"], representation=p["representation"],
                       hidden=p["hidden"], l2=p["l2"], temperature=p["temperature"], seed=seed,
                       config=_optimizer(p["optimizer"]))
    if spec == "dcm":
        return dcm_fit(dataset, K=p["K"], representation=p["representation"], hidden=p["hidden"], l2=p["l2"],
                       gating_l2=p["gating_l2"], max_iterations=p["max_iterations"], tolerance=p["tolerance"],
                       seed=seed, config=_optimizer(p["optimizer"]), n_jobs=n_jobs)
    if dataset.weights is not None:
        logger.warning("rsf ignores sample weights")
    return rsf_fit(dataset, n_trees=p["n_trees"], max_depth=p["max_depth"], min_leaf_events=p["min_leaf_events"],
                   max_features=p["max_features"], seed=seed, bootstrap=p["bootstrap"], n_jobs=n_jobs)


def model_from_dict(payload):
    """Rebuild a fitted model from its ``to_dict`` record."""
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"Unsupported model schema version {version}", expected=SCHEMA_VERSION)
    kind = payload.get("model")
    if kind == "counterfactual_pair":
        return CounterfactualPair(model_from_dict(payload["treated"]), model_from_dict(payload["control"]),
                                  payload["events_treated"], payload["events_control"], payload["min_events"])
    if kind not in MODEL_CLASSES:
        raise SchemaError(f"Unknown model kind '{kind}'")
    return MODEL_CLASSES[kind].from_dict(payload)


def save_model(model, path):
    """Write ``model`` to ``path`` as JSON."""
    return write_json(path, model.to_dict())


def load_model(path):
    return model_from_dict(read_json(path))
