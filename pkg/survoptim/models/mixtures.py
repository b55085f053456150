"""
Deep Survival Machines style parametric mixtures.

S(t|x) = sum_k pi_k(x) S_k(t|x), where every component is a Weibull or log-normal
distribution whose shape and scale come from softplus heads on a shared
representation (the raw covariates or one tanh hidden layer) and the gating
pi(x) is a softmax head on the same representation.

Log-normal components use shape = sigma and scale = exp(mu), so that scale is the
component median for both families.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import expit, log_ndtr, log_softmax, logsumexp, softmax

from ..common.errors import OptimizerError
from ..common.numerics import OptimizerConfig, ParameterPack, minimize
from ..common.utils import SCHEMA_VERSION, make_rng
from .coxph import DEFAULT_HIDDEN, HIDDEN, LINEAR

logger = logging.getLogger(__name__)

WEIBULL = "weibull"
LOGNORMAL = "lognormal"
FAMILIES = (WEIBULL, LOGNORMAL)
TIME_FLOOR = 1e-10
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
HEADS = ("shape", "scale", "gate")


def softplus(a):
    return np.logaddexp(0.0, a)


def inverse_softplus(y):
    """Solve softplus(a) = y for a, y > 0."""
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def dsm_pack(K, n_features, representation=LINEAR, hidden=DEFAULT_HIDDEN):
    if representation not in (LINEAR, HIDDEN):
        raise ValueError(f"Unknown representation '{representation}'")
    width = n_features if representation == LINEAR else hidden
    shapes = {}
    if representation == HIDDEN:
        shapes["W"] = (hidden, n_features)
        shapes["b"] = (hidden,)
    for head in HEADS:
        shapes[f"{head}_w"] = (K, width)
        shapes[f"{head}_b"] = (K,)
    return ParameterPack(shapes)


def _penalized(pack):
    return [name for name in pack.shapes if name == "W" or name.endswith("_w")]


def _forward(representation, params, X, temperature):
    phi = X if representation == LINEAR else np.tanh(X @ params["W"].T + params["b"])
    pre_shape = phi @ params["shape_w"].T + params["shape_b"]
    pre_scale = phi @ params["scale_w"].T + params["scale_b"]
    logits = (phi @ params["gate_w"].T + params["gate_b"]) / temperature
    return phi, pre_shape, pre_scale, logits


def component_terms(family, shape, scale, log_t):
    """
    Component log density, log survival and their partial derivatives.

    Args:
        family (str): ``weibull`` or ``lognormal``.
        shape, scale (ndarray): n x K positive parameters.
        log_t (ndarray): n x 1 log times.

    Returns:
        tuple: (log_f, log_S, dlogf/dshape, dlogf/dscale, dlogS/dshape, dlogS/dscale).
    """
    if family == WEIBULL:
        u = log_t - np.log(scale)
        z = np.exp(shape * u)
        log_f = np.log(shape) - np.log(scale) + (shape - 1.0) * u - z
        log_S = -z
        return (log_f, log_S,
                1.0 / shape + u - u * z, shape * (z - 1.0) / scale,
                -u * z, shape * z / scale)
    z = (log_t - np.log(scale)) / shape
    log_f = -log_t - np.log(shape) - HALF_LOG_2PI - 0.5 * z ** 2
    log_S = log_ndtr(-z)
    # phi(-z) / Phi(-z)
    mills = np.exp(-0.5 * z ** 2 - HALF_LOG_2PI - log_S)
    return (log_f, log_S,
            (z ** 2 - 1.0) / shape, z / (shape * scale),
            mills * z / shape, mills / (shape * scale))


def _row_log_joint(family, representation, params, X, times, events, temperature):
    _, pre_shape, pre_scale, logits = _forward(representation, params, X, temperature)
    log_t = np.log(np.maximum(times, TIME_FLOOR))[:, None]
    delta = events[:, None]
    terms = component_terms(family, softplus(pre_shape), softplus(pre_scale), log_t)
    return log_softmax(logits, axis=1) + delta * terms[0] + (1.0 - delta) * terms[1]


def dsm_objective(X, times, events, weights, K, family=WEIBULL, representation=LINEAR, hidden=DEFAULT_HIDDEN,
                  l2=0.0, temperature=1.0):
    """
    Penalised negative censored mixture log-likelihood, normalised by total weight.

    Returns:
        tuple: (objective(theta) -> (value, grad), ParameterPack).
    """
    pack = dsm_pack(K, X.shape[1], representation, hidden)
    penalized = _penalized(pack)
    log_t = np.log(np.maximum(times, TIME_FLOOR))[:, None]
    delta = events[:, None]
    total = weights.sum()

    def objective(theta):
        params = pack.unpack(theta)
        phi, pre_shape, pre_scale, logits = _forward(representation, params, X, temperature)
        shape, scale = softplus(pre_shape), softplus(pre_scale)
        log_pi = log_softmax(logits, axis=1)
        log_f, log_S, df_dk, df_dl, dS_dk, dS_dl = component_terms(family, shape, scale, log_t)
        joint = log_pi + delta * log_f + (1.0 - delta) * log_S
        row = logsumexp(joint, axis=1)
        penalty = sum(np.sum(params[name] ** 2) for name in penalized)
        value = (-weights.dot(row) + 0.5 * l2 * penalty) / total

        resp = np.exp(joint - row[:, None])
        scaled = -weights[:, None] * resp
        g_shape = scaled * (delta * df_dk + (1.0 - delta) * dS_dk) * expit(pre_shape)
        g_scale = scaled * (delta * df_dl + (1.0 - delta) * dS_dl) * expit(pre_scale)
        g_gate = -weights[:, None] * (resp - np.exp(log_pi)) / temperature
        grads = {}
        g_phi = np.zeros_like(phi)
        for head, g in (("shape", g_shape), ("scale", g_scale), ("gate", g_gate)):
            grads[f"{head}_w"] = g.T @ phi
            grads[f"{head}_b"] = g.sum(axis=0)
            g_phi += g @ params[f"{head}_w"]
        if representation == HIDDEN:
            g_pre = g_phi * (1.0 - phi ** 2)
            grads["W"] = g_pre.T @ X
            grads["b"] = g_pre.sum(axis=0)
        for name in penalized:
            grads[name] = grads[name] + l2 * params[name]
        return value, pack.pack(grads) / total

    return objective, pack


@dataclass
class DSMModel:
    """
    Fitted survival mixture.

    Attributes:
        K (int): Number of components.
        family (str): ``weibull`` or ``lognormal``.
        representation (str): ``linear`` or ``hidden``.
        params (dict): Named parameter arrays.
        l2 (float): Penalty on head (and hidden) weights.
        temperature (float): Gating softmax temperature.
    """
    K: int
    family: str
    representation: str
    params: dict
    n_features: int
    hidden: int = 0
    l2: float = 0.0
    temperature: float = 1.0
    converged: bool = True
    seed: int = 0
    history: List[float] = field(default_factory=list)

    def heads(self, X):
        """Return (shape, scale, gating) matrices, each n x K."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        _, pre_shape, pre_scale, logits = _forward(self.representation, self.params, X, self.temperature)
        return softplus(pre_shape), softplus(pre_scale), softmax(logits, axis=1)

    def predict_survival(self, X, times):
        return dsm_predict_survival(self, X, times)

    def predict_risk(self, X, times):
        return 1.0 - dsm_predict_survival(self, X, times)

    def predict_latent_z(self, X, mode="gating", times=None, events=None):
        return dsm_predict_latent_z(self, X, mode, times, events)

    def to_dict(self):
        return {
            "model": "dsm",
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "family": self.family,
            "representation": self.representation,
            "hidden": self.hidden,
            "n_features": self.n_features,
            "params": self.params,
            "l2": self.l2,
            "temperature": self.temperature,
            "converged": self.converged,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload):
        pack = dsm_pack(payload["K"], payload["n_features"], payload["representation"], payload.get("hidden") or 1)
        params = {name: np.asarray(payload["params"][name], dtype=float).reshape(pack.shapes[name])
                  for name in pack.shapes}
        return cls(payload["K"], payload["family"], payload["representation"], params, payload["n_features"],
                   payload.get("hidden", 0), payload["l2"], payload.get("temperature", 1.0),
                   payload.get("converged", True), payload.get("seed", 0))


def dsm_initial_parameters(pack, dataset, K, representation, seed):
    """
    Starting point: shape 1, component scales at event-time quantiles (k + 0.5) / K,
    uniform gating, and a seeded N(0, 1/d) draw for the hidden layer.
    """
    params = pack.unpack(pack.zeros())
    observed = dataset.times[dataset.events == 1]
    if observed.size == 0:
        observed = dataset.times
    quantiles = np.quantile(observed, (np.arange(K) + 0.5) / K)
    params["shape_b"][...] = inverse_softplus(1.0)
    params["scale_b"][...] = inverse_softplus(np.maximum(quantiles, TIME_FLOOR))
    if representation == HIDDEN:
        d = max(dataset.features.shape[1], 1)
        params["W"][...] = make_rng(seed).normal(0.0, 1.0 / np.sqrt(d), size=pack.shapes["W"])
    return pack.pack(params)


def dsm_fit(dataset, K=3, family=WEIBULL, representation=LINEAR, hidden=DEFAULT_HIDDEN, l2=1e-3,
            temperature=1.0, seed=0, weights=None, config=None):
    """
    Fit a survival mixture by maximising the censored mixture log-likelihood.

    Args:
        dataset (SurvivalDataset): Training data.
        K (int): Number of components (>= 1).
        family (str): ``weibull`` or ``lognormal``.
        representation (str): ``linear`` heads on x, or ``hidden`` (one tanh layer).
        hidden (int): Hidden width.
        l2 (float): Penalty on non-bias weights.
        temperature (float): Gating softmax temperature.
        seed (int): Seed of the hidden-layer initialisation.
        weights (ndarray): Sample weights; the dataset's weights when None.
        config (OptimizerConfig): Optimizer settings.

    Returns:
        DSMModel: Fitted model.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if family not in FAMILIES:
        raise ValueError(f"Unknown family '{family}', expected one of {FAMILIES}")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    weights = dataset.sample_weights() if weights is None else np.asarray(weights, dtype=float)
    if not np.any(dataset.events * weights > 0):
        logger.warning("dsm_fit: no events in the data, the fit can only push survival up")
    objective, pack = dsm_objective(dataset.features, dataset.times, dataset.events, weights, K, family,
                                    representation, hidden, float(l2), float(temperature))
    theta0 = dsm_initial_parameters(pack, dataset, K, representation, seed)
    try:
        result = minimize(objective, theta0, config or OptimizerConfig())
    except OptimizerError:
        logger.error("dsm_fit: non-finite likelihood (family=%s, K=%d)", family, K)
        raise
    if not result.converged:
        logger.warning("dsm_fit stopped with status %s (|g|=%.3g)", result.status, result.grad_norm)
    params = {name: value.copy() for name, value in pack.unpack(result.x).items()}
    logger.info("Fitted DSM (%s, K=%d) on %d rows in %d iterations", family, K, dataset.n, result.iterations)
    return DSMModel(K, family, representation, params, dataset.features.shape[1],
                    hidden if representation == HIDDEN else 0, float(l2), float(temperature),
                    result.converged, int(seed), [-result.fun])


def dsm_component_survival(model, X, times):
    """Component survival S_k(t|x) as an n x K x m array."""
    shape, scale, _ = model.heads(X)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    with np.errstate(divide="ignore"):
        log_t = np.log(times)[None, None, :]
    log_scale = np.log(scale)[:, :, None]
    if model.family == WEIBULL:
        return np.exp(-np.exp(shape[:, :, None] * (log_t - log_scale)))
    return np.exp(log_ndtr(-(log_t - log_scale) / shape[:, :, None]))


def dsm_predict_survival(model, X, times):
    """Mixture survival, n x m, in [0, 1] and non-increasing in t."""
    _, _, gating = model.heads(X)
    survival = np.einsum("nk,nkm->nm", gating, dsm_component_survival(model, X, times))
    return np.clip(survival, 0.0, 1.0)


def dsm_log_likelihood(model, dataset):
    """Per-row censored mixture log-likelihood."""
    joint = _row_log_joint(model.family, model.representation, model.params, dataset.features,
                           dataset.times, dataset.events, model.temperature)
    return logsumexp(joint, axis=1)


def dsm_predict_latent_z(model, X, mode="gating", times=None, events=None):
    """
    Latent component probabilities.

    ``gating`` returns pi(x), which uses covariates only and applies to new rows.
    ``posterior`` returns P(Z=k | x, t, delta) and needs observed times and events.

    Returns:
        ndarray: n x K row-stochastic matrix.
    """
    if mode == "gating":
        return model.heads(X)[2]
    if mode != "posterior":
        raise ValueError(f"Unknown mode '{mode}', expected 'gating' or 'posterior'")
    if times is None or events is None:
        raise ValueError("posterior mode needs times and events")
    X = np.asarray(X, dtype=float)
    joint = _row_log_joint(model.family, model.representation, model.params, X,
                           np.asarray(times, dtype=float), np.asarray(events, dtype=float), model.temperature)
    return softmax(joint, axis=1)
