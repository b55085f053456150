"""
Cox mixtures fitted by expectation-maximisation.

DCM: K latent groups, each with its own Cox relative hazard and Breslow baseline,
mixed by a softmax gating on the covariates.

CMHE: a K x M latent grid. Z=k picks the baseline and confounder effect, phi=m picks
the treatment log-effect omega_m, so the hazard is
lambda_k(t) exp(h_k(x)) exp(omega_m)^a.

The E-step needs a density, so each Breslow baseline is bridged between its jumps
with a piecewise-constant hazard: H0 is linear between (0, 0) and the jump points,
the hazard on (t_{j-1}, t_j] is the slope of that segment, and after the last jump
H0 is flat. Predictions use the step baselines.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp, softmax

from ..common.errors import ConvergenceError, ValidationError
from ..common.nonparam import curve_eval
from ..common.numerics import (OptimizerConfig, ParameterPack, SoftmaxModel, kmeans, minimize,
                               softmax_log_predict, softmax_predict, softmax_regression_fit)
from ..common.utils import SCHEMA_VERSION, derive_seed
from .coxph import (DEFAULT_HIDDEN, LINEAR, CoxModel, RiskSetIndex, breslow_baseline, cox_fit, initial_parameters,
                    partial_likelihood, representation_pack, risk_scores, risk_scores_backward)

logger = logging.getLogger(__name__)

RESPONSIBILITY_FLOOR = 1e-8
DENSITY_FLOOR = 1e-300
EM_DECREASE_TOLERANCE = 1e-6
INIT_SMOOTHING = 0.1


def bridged_baseline(curve, times):
    """
    Piecewise-linear cumulative baseline hazard and its hazard at ``times``.

    Returns:
        tuple: (H0(t), hazard(t)), the hazard floored at 1e-300.
    """
    knots_t = np.concatenate([[0.0], curve.jump_times])
    knots_h = np.concatenate([[0.0], curve.values])
    times = np.asarray(times, dtype=float)
    cumulative = np.interp(times, knots_t, knots_h)
    slopes = np.concatenate([np.diff(knots_h) / np.diff(knots_t), [0.0]])
    segment = np.searchsorted(knots_t, times, side="left") - 1
    hazard = slopes[np.clip(segment, 0, slopes.size - 1)]
    return cumulative, np.maximum(hazard, DENSITY_FLOOR)


def _log_terms(component, X, times, events, offset=0.0):
    eta = component.risk_score(X) + offset
    cumulative, hazard = bridged_baseline(component.baseline, times)
    return events * (np.log(hazard) + eta) - cumulative * np.exp(eta)


def initial_responsibilities(dataset, K, seed, smoothing=INIT_SMOOTHING):
    """
    Hard k-means labels on [features, standardized log time], smoothed towards uniform.

    Returns:
        ndarray: n x K responsibilities.
    """
    n = dataset.n
    if K == 1:
        return np.ones((n, 1))
    log_t = np.log(dataset.times)
    spread = log_t.std()
    scaled = (log_t - log_t.mean()) / spread if spread > 0 else np.zeros(n)
    labels = kmeans(np.column_stack([dataset.features, scaled]), K, seed=seed).labels
    gamma = np.full((n, K), smoothing / K)
    gamma[np.arange(n), labels] += 1.0 - smoothing
    return gamma


def _warm_start(component, representation, n_features, hidden):
    if component is None:
        return None
    return representation_pack(representation, n_features, hidden).pack(component.params)


# --------------------------------------------------------------------- DCM

@dataclass
class DCMModel:
    """
    Fitted Cox mixture.

    ``responsibilities`` are the outcome-conditional group posteriors of the
    training rows; new rows get the covariate-only gating.
    """
    K: int
    gating: SoftmaxModel
    components: List[CoxModel]
    responsibilities: np.ndarray
    history: List[float] = field(default_factory=list)
    converged: bool = False
    seed: int = 0

    def gating_probabilities(self, X):
        return softmax_predict(self.gating, X)

    def predict_survival(self, X, times):
        return dcm_predict_survival(self, X, times)

    def predict_risk(self, X, times):
        return 1.0 - dcm_predict_survival(self, X, times)

    def predict_latent_z(self, X, times=None, events=None):
        return dcm_predict_latent_z(self, X, times, events)

    def to_dict(self):
        return {
            "model": "dcm",
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "gating": self.gating.to_dict(),
            "components": [component.to_dict() for component in self.components],
            "history": self.history,
            "converged": self.converged,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload):
        components = [CoxModel.from_dict(item) for item in payload["components"]]
        return cls(payload["K"], SoftmaxModel.from_dict(payload["gating"]), components,
                   np.zeros((0, payload["K"])), list(payload.get("history", [])),
                   payload.get("converged", False), payload.get("seed", 0))


def _dcm_log_joint(gating, components, X, times, events):
    terms = np.column_stack([_log_terms(component, X, times, events) for component in components])
    return softmax_log_predict(gating, X) + terms


def dcm_fit(dataset, K=3, representation=LINEAR, hidden=DEFAULT_HIDDEN, l2=1e-3, gating_l2=1e-2,
            max_iterations=50, tolerance=1e-5, seed=0, config=None, n_jobs=1):
    """
    Fit a Cox mixture by EM.

    E-step: responsibilities proportional to pi_k(x) times the bridged Cox likelihood of
    the observed outcome. M-step: one weighted :func:`cox_fit` per group (weights w * gamma_k,
    warm started) and a weighted softmax regression for the gating. An iteration that
    lowers the observed-data log-likelihood by more than 1e-6 is rejected and EM stops.

    Args:
        dataset (SurvivalDataset): Training data.
        K (int): Number of groups.
        representation (str): Cox representation of every group.
        hidden (int): Hidden width.
        l2 (float): Penalty of the group Cox fits.
        gating_l2 (float): Penalty of the gating regression.
        max_iterations (int): EM iteration cap.
        tolerance (float): Stop when responsibilities move less than this (sup norm).
        seed (int): Seed of the k-means initialisation and hidden layers.
        config (OptimizerConfig): Settings of the inner optimizations.
        n_jobs (int): joblib workers for the per-group fits.

    Returns:
        DCMModel: Fitted mixture.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    X, w = dataset.features, dataset.sample_weights()
    d = X.shape[1]
    gamma = initial_responsibilities(dataset, K, seed)
    components, gating = [None] * K, None
    history, converged = [], False
    for iteration in range(max_iterations):
        fitted = Parallel(n_jobs=n_jobs)(
            delayed(cox_fit)(dataset, weights=w * np.maximum(gamma[:, k], RESPONSIBILITY_FLOOR), l2=l2,
                             representation=representation, hidden=hidden, seed=derive_seed(seed, k),
                             config=config, init=_warm_start(components[k], representation, d, hidden))
            for k in range(K))
        new_gating = softmax_regression_fit(X, gamma, sample_weight=w, l2=gating_l2, init=gating, config=config)
        log_joint = _dcm_log_joint(new_gating, fitted, X, dataset.times, dataset.events)
        row = logsumexp(log_joint, axis=1)
        log_likelihood = float(w.dot(row) / w.sum())
        if history and log_likelihood < history[-1] - EM_DECREASE_TOLERANCE:
            logger.warning("DCM iteration %d lowered the log-likelihood (%.12g -> %.12g), keeping previous parameters",
                           iteration, history[-1], log_likelihood)
            break
        components, gating = fitted, new_gating
        history.append(log_likelihood)
        new_gamma = np.exp(log_joint - row[:, None])
        change = float(np.max(np.abs(new_gamma - gamma)))
        gamma = new_gamma
        logger.debug("DCM iteration %d: loglik=%.12g change=%.3g", iteration, log_likelihood, change)
        if change < tolerance:
            converged = True
            break
    logger.info("Fitted DCM (K=%d) in %d EM iterations", K, len(history))
    return DCMModel(K, gating, components, gamma, history, converged, int(seed))


def dcm_predict_survival(model, X, times):
    """Mixture survival sum_k pi_k(x) S_k(t|x) with step baselines, n x m."""
    gating = model.gating_probabilities(X)
    survival = sum(gating[:, [k]] * component.predict_survival(X, times)
                   for k, component in enumerate(model.components))
    return np.clip(survival, 0.0, 1.0)


def dcm_predict_latent_z(model, X, times=None, events=None):
    """
    Group probabilities: the gating pi(x) for new rows, or the outcome-conditional
    posterior when ``times`` and ``events`` are given.
    """
    X = np.asarray(X, dtype=float)
    if times is None:
        return model.gating_probabilities(X)
    log_joint = _dcm_log_joint(model.gating, model.components, X, np.asarray(times, dtype=float),
                               np.asarray(events, dtype=float))
    return softmax(log_joint, axis=1)


# -------------------------------------------------------------------- CMHE

@dataclass
class PseudoRows:
    """Rows (i, m) of the K x M expansion; ``weights[k]`` holds w_i * gamma_ikm."""
    X: np.ndarray
    times: np.ndarray
    events: np.ndarray
    treatment: np.ndarray
    arm_group: np.ndarray
    weights: list
    total: float
    index: RiskSetIndex


def pseudo_rows(X, times, events, treatment, weights, gamma):
    """Expand n rows into n * M pseudo-rows, block m holding effect group m."""
    n, K, M = gamma.shape
    rows_weights = [np.tile(weights, M) * np.maximum(gamma[:, k, :].T.reshape(-1), RESPONSIBILITY_FLOOR)
                    for k in range(K)]
    times_rep = np.tile(times, M)
    return PseudoRows(np.tile(X, (M, 1)), times_rep, np.tile(events, M), np.tile(treatment, M),
                      np.repeat(np.arange(M), n), rows_weights, float(weights.sum()), RiskSetIndex(times_rep))


def cmhe_objective(rows, K, M, representation=LINEAR, hidden=DEFAULT_HIDDEN, l2=0.0, omega=None):
    """
    M-step objective of CMHE: the sum over groups k of the penalised partial likelihoods
    of the pseudo-rows, with offset omega_m * a. ``omega`` fixed when given, optimized
    jointly with the group parameters otherwise.

    Returns:
        tuple: (objective(theta) -> (value, grad), ParameterPack, unit ParameterPack).
    """
    d = rows.X.shape[1]
    unit = representation_pack(representation, d, hidden)
    shapes = {f"theta{k}_{name}": shape for k in range(K) for name, shape in unit.shapes.items()}
    if omega is None:
        shapes["omega"] = (M,)
    pack = ParameterPack(shapes)

    def objective(theta):
        params = pack.unpack(theta)
        current = params["omega"] if omega is None else omega
        offset = current[rows.arm_group] * rows.treatment
        value = 0.0
        grads = {}
        grad_omega = np.zeros(M)
        for k in range(K):
            own = {name: params[f"theta{k}_{name}"] for name in unit.shapes}
            eta = risk_scores(representation, own, rows.X) + offset
            loglik, grad_eta = partial_likelihood(eta, rows.events, rows.weights[k], rows.index)
            value += -loglik + 0.5 * l2 * sum(np.sum(p ** 2) for p in own.values())
            back = risk_scores_backward(representation, own, rows.X, -grad_eta)
            for name in unit.shapes:
                grads[f"theta{k}_{name}"] = back[name] + l2 * own[name]
            grad_omega += np.bincount(rows.arm_group, weights=-grad_eta * rows.treatment, minlength=M)
        if omega is None:
            grads["omega"] = grad_omega
        return value / rows.total, pack.pack(grads) / rows.total

    return objective, pack, unit


def default_omega(M):
    return np.zeros(1) if M == 1 else np.linspace(0.5, -0.5, M)


@dataclass
class CMHEModel:
    """
    Fitted Cox mixture with heterogeneous treatment effects.

    ``responsibilities`` has shape n x K x M for the training rows.
    """
    K: int
    M: int
    gating_z: SoftmaxModel
    gating_phi: SoftmaxModel
    components: List[CoxModel]
    omega: np.ndarray
    responsibilities: np.ndarray
    history: List[float] = field(default_factory=list)
    converged: bool = False
    seed: int = 0

    def predict_survival(self, X, times, treatment=0):
        return cmhe_predict_survival(self, X, times, treatment)

    def predict_risk(self, X, times, treatment=0):
        return 1.0 - cmhe_predict_survival(self, X, times, treatment)

    def predict_latent_z(self, X, mode="gating", times=None, events=None, treatment=None):
        return cmhe_predict_latent_z(self, X, mode, times, events, treatment)

    def predict_latent_phi(self, X, mode="gating", times=None, events=None, treatment=None):
        return cmhe_predict_latent_phi(self, X, mode, times, events, treatment)

    def to_dict(self):
        return {
            "model": "cmhe",
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "M": self.M,
            "gating_z": self.gating_z.to_dict(),
            "gating_phi": self.gating_phi.to_dict(),
            "components": [component.to_dict() for component in self.components],
            "omega": self.omega,
            "history": self.history,
            "converged": self.converged,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload):
        components = [CoxModel.from_dict(item) for item in payload["components"]]
        return cls(payload["K"], payload["M"], SoftmaxModel.from_dict(payload["gating_z"]),
                   SoftmaxModel.from_dict(payload["gating_phi"]), components,
                   np.asarray(payload["omega"], dtype=float), np.zeros((0, payload["K"], payload["M"])),
                   list(payload.get("history", [])), payload.get("converged", False), payload.get("seed", 0))


def _cmhe_log_joint(gating_z, gating_phi, components, omega, X, times, events, treatment):
    n = X.shape[0]
    K, M = len(components), omega.size
    terms = np.empty((n, K, M))
    for k, component in enumerate(components):
        for m in range(M):
            terms[:, k, m] = _log_terms(component, X, times, events, omega[m] * treatment)
    return (softmax_log_predict(gating_z, X)[:, :, None] + softmax_log_predict(gating_phi, X)[:, None, :] + terms)


def cmhe_fit(dataset, K=1, M=2, representation=LINEAR, hidden=DEFAULT_HIDDEN, l2=1e-3, gating_l2=1e-2,
             max_iterations=50, tolerance=1e-5, seed=0, omega_init=None, freeze_omega=False, config=None):
    """
    Fit CMHE by EM over the joint (Z, phi) latent grid.

    The M-step minimises :func:`cmhe_objective` over all group parameters and omega
    together. With M >= 2 omega is held at its spread starting values during the
    first M-step so that the effect groups separate; ``freeze_omega`` holds it fixed
    throughout (at zero unless ``omega_init`` is given).

    Args:
        dataset (SurvivalDataset): Training data with a treatment column.
        K (int): Base-survival groups.
        M (int): Treatment-effect groups.
        representation (str): Cox representation of every base group.
        hidden (int): Hidden width.
        l2 (float): Penalty on the group parameters (omega is not penalised).
        gating_l2 (float): Penalty of both gating regressions.
        max_iterations (int): EM iteration cap.
        tolerance (float): Stop when responsibilities move less than this (sup norm).
        seed (int): Seed of the initialisation.
        omega_init (array): Starting log-effects.
        freeze_omega (bool): Keep omega fixed.
        config (OptimizerConfig): Inner optimizer settings.

    Returns:
        CMHEModel: Fitted model.
    """
    if dataset.treatment is None:
        raise ValidationError("cmhe_fit needs a treatment column")
    if K < 1 or M < 1:
        raise ValueError("K and M must be >= 1")
    treatment = dataset.treatment
    if M >= 2 and np.all(treatment == treatment[0]):
        raise ValidationError("Effect groups are unidentifiable without both treatment arms (M >= 2)")
    if omega_init is not None:
        omega = np.asarray(omega_init, dtype=float).reshape(M)
    else:
        omega = np.zeros(M) if freeze_omega else default_omega(M)

    X, w, times, events = dataset.features, dataset.sample_weights(), dataset.times, dataset.events
    n, d = X.shape
    config = config or OptimizerConfig()
    gamma = initial_responsibilities(dataset, K, seed)[:, :, None] * np.full(M, 1.0 / M)
    thetas, components, gating_z, gating_phi = None, None, None, None
    history, converged = [], False
    for iteration in range(max_iterations):
        rows = pseudo_rows(X, times, events, treatment, w, gamma)
        fixed = freeze_omega or (M >= 2 and iteration == 0)
        objective, pack, unit = cmhe_objective(rows, K, M, representation, hidden, l2, omega if fixed else None)
        if thetas is None:
            thetas = [unit.unpack(initial_parameters(unit, representation, d, derive_seed(seed, k)))
                      for k in range(K)]
        start = {f"theta{k}_{name}": thetas[k][name] for k in range(K) for name in unit.shapes}
        if not fixed:
            start["omega"] = omega
        result = minimize(objective, pack.pack(start), config)
        if not result.converged:
            if l2 == 0 and result.status == "max_iterations":
                raise ConvergenceError("CMHE M-step did not converge; set l2 > 0", iterations=result.iterations)
            logger.warning("CMHE M-step stopped with status %s", result.status)
        params = pack.unpack(result.x)
        new_omega = omega if fixed else params["omega"].copy()
        new_thetas = [{name: params[f"theta{k}_{name}"].copy() for name in unit.shapes} for k in range(K)]
        offset = new_omega[rows.arm_group] * rows.treatment
        fitted = []
        for k in range(K):
            eta = risk_scores(representation, new_thetas[k], rows.X) + offset
            baseline = breslow_baseline(rows.times, rows.events, rows.weights[k], eta)
            fitted.append(CoxModel(representation, new_thetas[k], baseline, n, d, float(l2),
                                   hidden if representation != LINEAR else 0, result.converged,
                                   float(np.sum(rows.events * rows.weights[k])), list(dataset.feature_names)))
        new_gating_z = softmax_regression_fit(X, gamma.sum(axis=2), w, gating_l2, init=gating_z, config=config)
        new_gating_phi = softmax_regression_fit(X, gamma.sum(axis=1), w, gating_l2, init=gating_phi, config=config)

        log_joint = _cmhe_log_joint(new_gating_z, new_gating_phi, fitted, new_omega, X, times, events, treatment)
        row = logsumexp(log_joint.reshape(n, K * M), axis=1)
        log_likelihood = float(w.dot(row) / w.sum())
        if history and log_likelihood < history[-1] - EM_DECREASE_TOLERANCE:
            logger.warning("CMHE iteration %d lowered the log-likelihood (%.12g -> %.12g), keeping previous parameters",
                           iteration, history[-1], log_likelihood)
            break
        thetas, omega, components = new_thetas, new_omega, fitted
        gating_z, gating_phi = new_gating_z, new_gating_phi
        history.append(log_likelihood)
        new_gamma = np.exp(log_joint - row[:, None, None])
        change = float(np.max(np.abs(new_gamma - gamma)))
        gamma = new_gamma
        logger.debug("CMHE iteration %d: loglik=%.12g omega=%s change=%.3g", iteration, log_likelihood, omega, change)
        if change < tolerance:
            converged = True
            break
    logger.info("Fitted CMHE (K=%d, M=%d) in %d EM iterations, omega=%s", K, M, len(history), omega)
    return CMHEModel(K, M, gating_z, gating_phi, components, omega, gamma, history, converged, int(seed))


def cmhe_predict_survival(model, X, times, treatment=0):
    """
    Survival under treatment value(s) ``treatment`` (scalar arm or one value per row):
    sum_k sum_m pi_k(x) rho_m(x) exp(-H0_k(t) exp(h_k(x) + omega_m a)).
    """
    X = np.asarray(X, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    a = np.broadcast_to(np.asarray(treatment, dtype=float), (X.shape[0],))
    pi = softmax_predict(model.gating_z, X)
    rho = softmax_predict(model.gating_phi, X)
    survival = np.zeros((X.shape[0], times.size))
    for k, component in enumerate(model.components):
        H0 = np.atleast_1d(curve_eval(component.baseline, times))
        eta = component.risk_score(X)
        for m in range(model.M):
            relative = np.exp(eta + model.omega[m] * a)
            survival += (pi[:, k] * rho[:, m])[:, None] * np.exp(-np.outer(relative, H0))
    return np.clip(survival, 0.0, 1.0)


def _cmhe_posterior(model, X, times, events, treatment):
    if times is None or events is None or treatment is None:
        raise ValueError("posterior mode needs times, events and treatment")
    log_joint = _cmhe_log_joint(model.gating_z, model.gating_phi, model.components, model.omega, X,
                                np.asarray(times, dtype=float), np.asarray(events, dtype=float),
                                np.broadcast_to(np.asarray(treatment, dtype=float), (X.shape[0],)))
    n = X.shape[0]
    return softmax(log_joint.reshape(n, -1), axis=1).reshape(log_joint.shape)


def cmhe_predict_latent_z(model, X, mode="gating", times=None, events=None, treatment=None):
    """Base-group probabilities: the gating pi(x), or P(Z=k | x, t, delta, a) in ``posterior`` mode."""
    X = np.asarray(X, dtype=float)
    if mode == "gating":
        return softmax_predict(model.gating_z, X)
    if mode != "posterior":
        raise ValueError(f"Unknown mode '{mode}', expected 'gating' or 'posterior'")
    return _cmhe_posterior(model, X, times, events, treatment).sum(axis=2)


def cmhe_predict_latent_phi(model, X, mode="gating", times=None, events=None, treatment=None):
    """
    Effect-group probabilities, n x M.

    ``gating`` returns rho(x) and applies to new rows. ``posterior`` returns
    P(phi=m | x, t, delta, a) for rows with observed outcomes and arms; for control
    rows it equals the gating.
    """
    X = np.asarray(X, dtype=float)
    if mode == "gating":
        return softmax_predict(model.gating_phi, X)
    if mode != "posterior":
        raise ValueError(f"Unknown mode '{mode}', expected 'gating' or 'posterior'")
    return _cmhe_posterior(model, X, times, events, treatment).sum(axis=1)
