"""
Weighted Cox proportional hazards regression with a Breslow baseline.

The log relative hazard h(x) is either linear (x . beta) or a single tanh hidden
layer (v . tanh(W x + b)). Ties follow Breslow's convention. The objective
minimised is (-partial log-likelihood + l2/2 |theta|^2) / total weight.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from ..common.errors import ConvergenceError, FitError, ValidationError
from ..common.nonparam import CUMULATIVE_HAZARD, StepCurve, curve_eval, hazard_table
from ..common.numerics import OptimizerConfig, ParameterPack, minimize
from ..common.utils import SCHEMA_VERSION, make_rng

logger = logging.getLogger(__name__)

LINEAR = "linear"
HIDDEN = "hidden"
DEFAULT_HIDDEN = 100
MIN_ARM_EVENTS = 10


def representation_pack(representation, n_features, hidden=DEFAULT_HIDDEN):
    if representation == LINEAR:
        return ParameterPack({"beta": (n_features,)})
    if representation == HIDDEN:
        return ParameterPack({"W": (hidden, n_features), "b": (hidden,), "v": (hidden,)})
    raise ValueError(f"Unknown representation '{representation}'")


def risk_scores(representation, params, X):
    """Log relative hazard h(x) for every row of X."""
    if representation == LINEAR:
        return X @ params["beta"]
    return np.tanh(X @ params["W"].T + params["b"]) @ params["v"]


def risk_scores_backward(representation, params, X, grad_eta):
    """Gradient of a scalar with respect to the parameters given its gradient w.r.t. h(x)."""
    if representation == LINEAR:
        return {"beta": X.T @ grad_eta}
    hidden = np.tanh(X @ params["W"].T + params["b"])
    grad_pre = np.outer(grad_eta, params["v"]) * (1.0 - hidden ** 2)
    return {"W": grad_pre.T @ X, "b": grad_pre.sum(axis=0), "v": hidden.T @ grad_eta}


class RiskSetIndex:
    """Sorted order and tie-group boundaries of a set of times, computed once per fit."""

    def __init__(self, times):
        self.order = np.argsort(times, kind="mergesort")
        sorted_times = times[self.order]
        self.first = np.searchsorted(sorted_times, sorted_times, side="left")
        self.last = np.searchsorted(sorted_times, sorted_times, side="right") - 1


def partial_likelihood(eta, events, weights, index):
    """
    Weighted Breslow partial log-likelihood and its gradient with respect to eta.

    Args:
        eta (ndarray): Log relative hazards.
        events (ndarray): Event indicators.
        weights (ndarray): Sample weights.
        index (RiskSetIndex): Sorting of the observed times.

    Returns:
        tuple: (log-likelihood, gradient w.r.t. eta).
    """
    order = index.order
    e = eta[order]
    w = weights[order]
    d = events[order] * w
    shift = e.max() if e.size else 0.0
    risk = w * np.exp(e - shift)
    tail = np.cumsum(risk[::-1])[::-1]
    denominator = tail[index.first]
    log_denominator = np.log(denominator) + shift
    active = d > 0
    value = np.sum(d[active] * (e[active] - log_denominator[active]))
    ratio = np.where(active, d / np.where(denominator > 0, denominator, 1.0), 0.0)
    accumulated = np.cumsum(ratio)[index.last]
    grad_sorted = d - risk * accumulated
    grad = np.empty_like(eta)
    grad[order] = grad_sorted
    return value, grad


def breslow_baseline(times, events, weights, eta):
    """
    Breslow cumulative baseline hazard at fixed log relative hazards.

    With eta identically 0 this is the Nelson-Aalen estimator.

    Returns:
        StepCurve: H0(t).
    """
    weights = np.ones_like(times, dtype=float) if weights is None else weights
    event_times, deaths, at_risk = hazard_table(times, events, weights, weights * np.exp(eta))
    return StepCurve(event_times, np.cumsum(deaths / at_risk), 0.0, CUMULATIVE_HAZARD)


@dataclass
class CoxModel:
    """
    Fitted Cox model.

    Attributes:
        representation (str): ``linear`` or ``hidden``.
        params (dict): Named parameter arrays.
        baseline (StepCurve): Breslow cumulative baseline hazard.
        n_train (int): Rows used for fitting.
        n_features (int): Covariate dimension.
        l2 (float): Penalty strength used.
        converged (bool): Optimizer status.
    """
    representation: str
    params: dict
    baseline: StepCurve
    n_train: int
    n_features: int
    l2: float = 0.0
    hidden: int = 0
    converged: bool = True
    n_events: float = 0.0
    feature_names: Optional[list] = field(default=None)

    def risk_score(self, X):
        return risk_scores(self.representation, self.params, np.asarray(X, dtype=float))

    def predict_survival(self, X, times):
        return cox_predict_survival(self, X, times)

    def predict_risk(self, X, times):
        return cox_predict_risk(self, X, times)

    def to_dict(self):
        return {
            "model": "cox",
            "schema_version": SCHEMA_VERSION,
            "representation": self.representation,
            "hidden": self.hidden,
            "params": self.params,
            "baseline": self.baseline.to_dict(),
            "n_train": self.n_train,
            "n_features": self.n_features,
            "n_events": self.n_events,
            "l2": self.l2,
            "converged": self.converged,
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, payload):
        pack = representation_pack(payload["representation"], payload["n_features"], payload.get("hidden") or 1)
        params = {name: np.asarray(payload["params"][name], dtype=float).reshape(pack.shapes[name])
                  for name in pack.shapes}
        return cls(payload["representation"], params, StepCurve.from_dict(payload["baseline"]),
                   payload["n_train"], payload["n_features"], payload["l2"], payload.get("hidden", 0),
                   payload.get("converged", True), payload.get("n_events", 0.0), payload.get("feature_names"))


def cox_objective(X, times, events, weights, l2, representation=LINEAR, hidden=DEFAULT_HIDDEN, offset=None):
    """
    Build the penalised, weight-normalised negative partial likelihood.

    Args:
        X (ndarray): n x d features.
        times, events, weights (ndarray): Outcomes and sample weights.
        l2 (float): Penalty strength.
        representation (str): ``linear`` or ``hidden``.
        hidden (int): Hidden width.
        offset (ndarray): Fixed additive term in the log relative hazard.

    Returns:
        tuple: (objective(theta) -> (value, grad), ParameterPack).
    """
    pack = representation_pack(representation, X.shape[1], hidden)
    index = RiskSetIndex(times)
    total = weights.sum()
    offset = np.zeros(X.shape[0]) if offset is None else offset

    def objective(theta):
        params = pack.unpack(theta)
        eta = risk_scores(representation, params, X) + offset
        value, grad_eta = partial_likelihood(eta, events, weights, index)
        grads = risk_scores_backward(representation, params, X, -grad_eta)
        grad = pack.pack(grads) + l2 * theta
        return (-value + 0.5 * l2 * theta.dot(theta)) / total, grad / total

    return objective, pack


def initial_parameters(pack, representation, n_features, seed):
    theta = pack.zeros()
    if representation == HIDDEN:
        params = pack.unpack(theta)
        rng = make_rng(seed)
        params["W"][...] = rng.normal(0.0, 1.0 / np.sqrt(max(n_features, 1)), size=pack.shapes["W"])
        theta = pack.pack(params)
    return theta


def cox_fit(dataset, weights=None, l2=0.0, representation=LINEAR, hidden=DEFAULT_HIDDEN, seed=0,
            config=None, init=None):
    """
    Fit a weighted Cox model by maximising the Breslow partial likelihood.

    Args:
        dataset (SurvivalDataset): Training data.
        weights (ndarray): Sample weights; the dataset's weights (or ones) when None.
        l2 (float): Ridge penalty strength on all parameters.
        representation (str): ``linear`` (zero start) or ``hidden`` (seeded start for W).
        hidden (int): Hidden width for the ``hidden`` representation.
        seed (int): Seed of the hidden-layer initialisation.
        config (OptimizerConfig): Optimizer settings.
        init (ndarray): Optional warm-start parameter vector.

    Returns:
        CoxModel: Fitted model with its Breslow baseline.
    """
    weights = dataset.sample_weights() if weights is None else np.asarray(weights, dtype=float)
    if not np.any(dataset.events * weights > 0):
        raise FitError("cox_fit requires at least one event")
    X = dataset.features
    objective, pack = cox_objective(X, dataset.times, dataset.events, weights, float(l2), representation, hidden)
    theta0 = initial_parameters(pack, representation, X.shape[1], seed) if init is None else np.array(init, dtype=float)
    result = minimize(objective, theta0, config or OptimizerConfig())
    if not result.converged:
        if l2 == 0 and result.status == "max_iterations":
            raise ConvergenceError(
                "Cox partial likelihood did not converge (monotone likelihood?); set l2 > 0",
                iterations=result.iterations, grad_norm=result.grad_norm)
        logger.warning("Cox fit stopped with status %s (|g|=%.3g)", result.status, result.grad_norm)
    params = {name: value.copy() for name, value in pack.unpack(result.x).items()}
    eta = risk_scores(representation, params, X)
    baseline = breslow_baseline(dataset.times, dataset.events, weights, eta)
    logger.info("Fitted %s Cox model on %d rows in %d iterations", representation, dataset.n, result.iterations)
    return CoxModel(representation, params, baseline, dataset.n, X.shape[1], float(l2),
                    hidden if representation == HIDDEN else 0, result.converged,
                    float(np.sum(dataset.events * weights)), list(dataset.feature_names))


def cox_predict_survival(model, X, times):
    """
    Predicted survival S(t|x) = exp(-H0(t) exp(h(x))).

    Returns:
        ndarray: n x m matrix for the m requested times.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    H0 = np.atleast_1d(curve_eval(model.baseline, times))
    return np.exp(-np.outer(np.exp(model.risk_score(X)), H0))


def cox_predict_risk(model, X, times):
    return 1.0 - cox_predict_survival(model, X, times)


def cox_rmst(model, X, tau):
    """
    Exact restricted mean survival time on [0, tau] for every row.

    Args:
        model (CoxModel): Fitted model.
        X (ndarray): n x d features.
        tau (float): Horizon.

    Returns:
        ndarray: n RMST values.
    """
    jumps = model.baseline.jump_times
    knots = np.concatenate([[0.0], jumps[jumps < tau], [tau]])
    widths = np.diff(knots)
    survival = cox_predict_survival(model, X, knots[:-1])
    return survival @ widths


# ----------------------------------------------------------- counterfactual

@dataclass
class CounterfactualPair:
    """Outcome models fitted separately on the treated (A=1) and control (A=0) rows."""
    model_treated: object
    model_control: object
    events_treated: float
    events_control: float
    min_events: int = MIN_ARM_EVENTS

    def arm_model(self, arm):
        model, events = ((self.model_treated, self.events_treated) if arm == 1
                         else (self.model_control, self.events_control))
        if events < self.min_events:
            raise ValidationError(
                f"Arm {arm} has {events:g} events, fewer than the required {self.min_events}", arm=int(arm))
        return model

    def to_dict(self):
        return {
            "model": "counterfactual_pair",
            "schema_version": SCHEMA_VERSION,
            "treated": self.model_treated.to_dict(),
            "control": self.model_control.to_dict(),
            "events_treated": self.events_treated,
            "events_control": self.events_control,
            "min_events": self.min_events,
        }


def split_arms(dataset):
    """Return (treated rows, control rows); both arms must be present."""
    if dataset.treatment is None:
        raise ValidationError("Dataset has no treatment column")
    treated = dataset.treatment == 1
    if treated.all() or not treated.any():
        raise ValidationError("Both treatment arms must be present")
    return dataset.subset(treated), dataset.subset(~treated)


def counterfactual_fit(dataset, treated_options=None, control_options=None, min_events=MIN_ARM_EVENTS, n_jobs=1):
    """
    Fit one Cox model per treatment arm.

    Args:
        dataset (SurvivalDataset): Data with a treatment column.
        treated_options (dict): Keyword arguments for :func:`cox_fit` on the treated arm.
        control_options (dict): Keyword arguments for :func:`cox_fit` on the control arm.
        min_events (int): Arms with fewer events refuse to predict.
        n_jobs (int): joblib workers (the two arms fit independently).

    Returns:
        CounterfactualPair: Fitted pair.
    """
    treated, control = split_arms(dataset)
    treated_model, control_model = Parallel(n_jobs=n_jobs)([
        delayed(cox_fit)(treated, **(treated_options or {})),
        delayed(cox_fit)(control, **(control_options or {})),
    ])
    return CounterfactualPair(treated_model, control_model,
                              float(np.sum(treated.events * treated.sample_weights())),
                              float(np.sum(control.events * control.sample_weights())), min_events)


def counterfactual_predict_survival(pair, X, arm, times):
    """Per-row counterfactual survival under do(A=arm), n x m."""
    return pair.arm_model(arm).predict_survival(X, times)


def counterfactual_mean_survival(pair, X, arm, times):
    """
    Population counterfactual survival, the mean over rows of S(t | do(A=arm), x).

    Returns:
        ndarray: m values.
    """
    return counterfactual_predict_survival(pair, X, arm, times).mean(axis=0)
