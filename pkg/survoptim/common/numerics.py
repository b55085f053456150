"""
Deterministic numerical kernel: smooth minimiser, gradient checker, penalised
logistic and softmax regression, PCA, k-means and diagonal Gaussian mixtures.

Objectives passed to :func:`minimize` return ``(value, gradient)``.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, log_softmax, logsumexp, softmax

from .errors import ConvergenceError, FitError, OptimizerError
from .utils import make_rng

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Settings of :func:`minimize`.

    ``memory`` is the number of curvature pairs kept for the quasi-Newton direction;
    ``memory=0`` gives plain gradient descent with backtracking.
    """
    max_iterations: int = 1000
    tolerance: float = 1e-8
    initial_step: float = 1.0
    backtracking: float = 0.5
    sufficient_decrease: float = 1e-4
    memory: int = 10
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not 0 < self.backtracking < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient decrease constant must lie in (0, 1)")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    status: str


def _finite(value, grad):
    return np.isfinite(value) and np.all(np.isfinite(grad))


def _direction(grad, s_list, y_list):
    # two-loop recursion
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / y.dot(s)
        alpha = rho * s.dot(q)
        alphas.append(alpha)
        q -= alpha * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= s.dot(y) / y.dot(y)
    for (s, y), alpha in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / y.dot(s)
        beta = rho * y.dot(q)
        q += s * (alpha - beta)
    return -q


def minimize(objective, x0, config=None):
    """
    Minimise a smooth function with a backtracking line search.

    Search directions come from a limited-memory quasi-Newton update (steepest
    descent when ``config.memory`` is 0 or the update is not a descent direction).
    Every accepted step satisfies the sufficient-decrease condition, so objective
    values are non-increasing across iterations.

    Args:
        objective (callable): ``objective(x) -> (value, gradient)``.
        x0 (ndarray): Starting point.
        config (OptimizerConfig): Settings, defaults when None.

    Returns:
        OptimizeResult: Final point, value, gradient norm, iteration count and status
        (``converged``, ``max_iterations`` or ``stalled``).
    """
    config = config or OptimizerConfig()
    x = np.array(x0, dtype=float).reshape(-1)
    value, grad = objective(x)
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if not _finite(value, grad):
        raise OptimizerError("Objective or gradient is not finite at the starting point", last_point=x.copy())

    s_list, y_list = [], []
    status = "max_iterations"
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= config.tolerance:
            status = "converged"
            iteration -= 1
            break
        if config.memory > 0 and s_list:
            direction = _direction(grad, s_list, y_list)
            step = 1.0
        else:
            direction = -grad
            step = config.initial_step / max(1.0, grad_norm)
        slope = grad.dot(direction)
        if not slope < 0:
            s_list, y_list = [], []
            direction = -grad
            slope = -grad_norm ** 2
            step = config.initial_step / max(1.0, grad_norm)

        accepted = False
        for _ in range(config.max_backtracks):
            candidate = x + step * direction
            new_value, new_grad = objective(candidate)
            new_grad = np.asarray(new_grad, dtype=float).reshape(-1)
            if np.isfinite(new_value) and new_value <= value + config.sufficient_decrease * step * slope:
                if not np.all(np.isfinite(new_grad)):
                    raise OptimizerError("Gradient became non-finite during the search", last_point=x.copy())
                accepted = True
                break
            step *= config.backtracking
        if not accepted:
            status = "stalled"
            break

        s = candidate - x
        y = new_grad - grad
        if config.memory > 0 and s.dot(y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > config.memory:
                s_list.pop(0)
                y_list.pop(0)
        x, value, grad = candidate, new_value, new_grad
        logger.debug("iteration %d: f=%.12g |g|=%.3g step=%.3g", iteration, value, np.linalg.norm(grad), step)
    else:
        if np.linalg.norm(grad) <= config.tolerance:
            status = "converged"

    grad_norm = float(np.linalg.norm(grad))
    return OptimizeResult(x=x, fun=float(value), grad_norm=grad_norm, iterations=iteration,
                          converged=status == "converged", status=status)


def check_gradient(objective, gradient, point, step=1e-5):
    """
    Compare an analytic gradient with central finite differences.

    Args:
        objective (callable): ``objective(x) -> float``.
        gradient (callable): ``gradient(x) -> ndarray``.
        point (ndarray): Evaluation point.
        step (float): Finite-difference step.

    Returns:
        float: max over coordinates of |a - fd| / max(1, |a|, |fd|).
    """
    point = np.array(point, dtype=float).reshape(-1)
    analytic = np.asarray(gradient(point), dtype=float).reshape(-1)
    worst = 0.0
    for j in range(point.size):
        forward = point.copy()
        backward = point.copy()
        forward[j] += step
        backward[j] -= step
        fd = (objective(forward) - objective(backward)) / (2 * step)
        worst = max(worst, abs(analytic[j] - fd) / max(1.0, abs(analytic[j]), abs(fd)))
    return worst


class ParameterPack:
    """Named layout of a flat parameter vector."""

    def __init__(self, shapes):
        self.shapes = {name: tuple(shape) for name, shape in shapes.items()}
        self.slices = {}
        offset = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset

    def unpack(self, vector):
        return {name: vector[sl].reshape(self.shapes[name]) for name, sl in self.slices.items()}

    def pack(self, arrays):
        vector = np.zeros(self.size)
        for name, sl in self.slices.items():
            vector[sl] = np.asarray(arrays[name], dtype=float).reshape(-1)
        return vector

    def zeros(self):
        return np.zeros(self.size)


# ---------------------------------------------------------------- logistic

@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2: float

    def to_dict(self):
        return {"weights": self.weights, "intercept": self.intercept, "l2": self.l2}


def _logistic_objective(X, y, sample_weight, l2):
    total = sample_weight.sum()

    def objective(params):
        w, b = params[:-1], params[-1]
        z = X @ w + b
        nll = np.sum(sample_weight * (y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)))
        value = (nll + 0.5 * l2 * w.dot(w)) / total
        residual = sample_weight * (expit(z) - y)
        grad = np.empty_like(params)
        grad[:-1] = (X.T @ residual + l2 * w) / total
        grad[-1] = residual.sum() / total
        return value, grad

    return objective


def logistic_fit(X, y, l2=0.0, sample_weight=None, config=None):
    """
    Fit an l2-penalised logistic regression (intercept unpenalised) from zero.

    Args:
        X (ndarray): n x d features.
        y (ndarray): Labels in {0, 1}.
        l2 (float): Penalty strength on the weights.
        sample_weight (ndarray): Optional row weights.
        config (OptimizerConfig): Optimizer settings.

    Returns:
        LogisticModel: Fitted model.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size < 2:
        raise FitError("logistic_fit needs at least two rows")
    if l2 == 0 and (np.all(y == 1) or np.all(y == 0)):
        raise FitError("Only one class present; set l2 > 0")
    sample_weight = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    objective = _logistic_objective(X, y, sample_weight, float(l2))
    result = minimize(objective, np.zeros(X.shape[1] + 1), config)
    if l2 == 0:
        z = X @ result.x[:-1] + result.x[-1]
        if z[y == 1].min() > z[y == 0].max():
            raise ConvergenceError("Classes are perfectly separated; the unpenalised fit diverges, set l2 > 0",
                                   status=result.status, iterations=result.iterations)
    if not result.converged:
        if l2 == 0:
            raise ConvergenceError(
                "Logistic regression did not converge (likely perfect separation); set l2 > 0",
                status=result.status, iterations=result.iterations)
        logger.warning("Logistic regression stopped with status %s (|g|=%.3g)", result.status, result.grad_norm)
    return LogisticModel(weights=result.x[:-1].copy(), intercept=float(result.x[-1]), l2=float(l2))


def logistic_predict(model, X):
    """Return P(y=1 | x) for each row of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return expit(X @ model.weights + model.intercept)


# ----------------------------------------------------------------- softmax

@dataclass(frozen=True)
class SoftmaxModel:
    weights: np.ndarray
    intercepts: np.ndarray
    l2: float

    def to_dict(self):
        return {"weights": self.weights, "intercepts": self.intercepts, "l2": self.l2}

    @classmethod
    def from_dict(cls, payload):
        return cls(np.asarray(payload["weights"], dtype=float).reshape(len(payload["intercepts"]), -1),
                   np.asarray(payload["intercepts"], dtype=float), float(payload["l2"]))


def uniform_softmax(n_features, K):
    return SoftmaxModel(np.zeros((K, n_features)), np.zeros(K), 0.0)


def softmax_objective(X, targets, sample_weight, l2):
    """Weighted soft-target cross-entropy of a softmax regression, normalised by total weight."""
    n, d = X.shape
    K = targets.shape[1]
    pack = ParameterPack({"weights": (K, d), "intercepts": (K,)})
    total = sample_weight.sum()
    mass = targets.sum(axis=1)

    def objective(params):
        p = pack.unpack(params)
        logits = X @ p["weights"].T + p["intercepts"]
        log_prob = log_softmax(logits, axis=1)
        value = (-np.sum(sample_weight[:, None] * targets * log_prob)
                 + 0.5 * l2 * np.sum(p["weights"] ** 2)) / total
        grad_logits = sample_weight[:, None] * (np.exp(log_prob) * mass[:, None] - targets)
        grad = pack.pack({
            "weights": (grad_logits.T @ X + l2 * p["weights"]) / total,
            "intercepts": grad_logits.sum(axis=0) / total,
        })
        return value, grad

    return objective, pack


def softmax_regression_fit(X, targets, sample_weight=None, l2=1e-2, init=None, config=None):
    """
    Fit a multinomial logistic regression to soft targets (rows of responsibilities).

    Args:
        X (ndarray): n x d features.
        targets (ndarray): n x K non-negative targets.
        sample_weight (ndarray): Optional row weights.
        l2 (float): Penalty on the weights.
        init (SoftmaxModel): Warm start.
        config (OptimizerConfig): Optimizer settings.

    Returns:
        SoftmaxModel: Fitted gating model.
    """
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float)
    sample_weight = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    K = targets.shape[1]
    if K == 1:
        return uniform_softmax(X.shape[1], 1)
    objective, pack = softmax_objective(X, targets, sample_weight, float(l2))
    x0 = pack.zeros() if init is None else pack.pack({"weights": init.weights, "intercepts": init.intercepts})
    result = minimize(objective, x0, config)
    if not result.converged:
        logger.debug("Softmax regression stopped with status %s", result.status)
    params = pack.unpack(result.x)
    return SoftmaxModel(params["weights"].copy(), params["intercepts"].copy(), float(l2))


def softmax_predict(model, X):
    """Return the n x K matrix of gating probabilities."""
    X = np.asarray(X, dtype=float)
    return softmax(X @ model.weights.T + model.intercepts, axis=1)


def softmax_log_predict(model, X):
    X = np.asarray(X, dtype=float)
    return log_softmax(X @ model.weights.T + model.intercepts, axis=1)


# --------------------------------------------------------------------- PCA

@dataclass(frozen=True)
class PCAState:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


def pca_fit(X, k):
    """
    Principal components of the covariance (divide-by-n) of centred X.

    Each component's leading non-zero coordinate is made positive.

    Args:
        X (ndarray): n x d data.
        k (int): Number of components, 1 <= k <= d.

    Returns:
        PCAState: Mean, k x d orthonormal components, explained variances.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    mean = X.mean(axis=0)
    centred = X - mean
    covariance = centred.T @ centred / n
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(-eigenvalues, kind="stable")[:k]
    components = eigenvectors[:, order].T.copy()
    for row in components:
        nonzero = np.flatnonzero(np.abs(row) > 1e-12)
        if nonzero.size and row[nonzero[0]] < 0:
            row *= -1
    return PCAState(mean=mean, components=components, explained_variance=np.clip(eigenvalues[order], 0, None))


def pca_transform(state, X):
    return (np.asarray(X, dtype=float) - state.mean) @ state.components.T


def pca_inverse_transform(state, scores):
    return np.asarray(scores, dtype=float) @ state.components + state.mean


# -------------------------------------------------------------- clustering

@dataclass
class ClusteringState:
    """
    Fitted k-means or diagonal GMM.

    ``variances`` and ``weights`` are None for k-means. ``history`` holds the
    inertia per Lloyd iteration (k-means) or log-likelihood per EM iteration (GMM).
    """
    method: str
    means: np.ndarray
    variances: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    pca: Optional[PCAState] = None
    labels: Optional[np.ndarray] = None
    score: float = 0.0
    history: List[float] = field(default_factory=list)


def _squared_distances(X, centres):
    return ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)


def _kmeans_plus_plus(X, K, rng):
    n = X.shape[0]
    centres = [X[rng.integers(n)]]
    closest = ((X - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:
            index = int(rng.integers(n))
        centres.append(X[index])
        closest = np.minimum(closest, ((X - X[index]) ** 2).sum(axis=1))
    return np.array(centres)


def _lloyd(X, centres, max_iterations):
    K = centres.shape[0]
    history = []
    labels = None
    for _ in range(max_iterations):
        distances = _squared_distances(X, centres)
        new_labels = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centres = centres.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                centres[k] = X[members].mean(axis=0)
            else:
                # empty cluster: move it to the point farthest from its centre
                own = distances[np.arange(X.shape[0]), labels]
                far = int(np.argmax(own))
                centres[k] = X[far]
                labels = labels.copy()
                labels[far] = k
    distances = _squared_distances(X, centres)
    labels = np.argmin(distances, axis=1)
    inertia = float(distances[np.arange(X.shape[0]), labels].sum())
    return centres, labels, inertia, history


def _kmeans_restart(X, K, seed, restart, max_iterations):
    rng = make_rng(seed, restart)
    return _lloyd(X, _kmeans_plus_plus(X, K, rng), max_iterations)


def kmeans(X, K, seed=0, restarts=DEFAULT_RESTARTS, max_iterations=300, n_jobs=1):
    """
    k-means with k-means++ seeding and Lloyd iterations, best of ``restarts``.

    Args:
        X (ndarray): n x d data.
        K (int): Number of clusters (<= n).
        seed (int): Seed; restart r draws from substream (seed, r).
        restarts (int): Number of restarts.
        max_iterations (int): Lloyd iteration cap per restart.
        n_jobs (int): joblib workers for restarts.

    Returns:
        ClusteringState: Winner by (inertia, restart index).
    """
    X = np.asarray(X, dtype=float)
    if K < 1 or K > X.shape[0]:
        raise ValueError(f"K must lie in [1, n={X.shape[0]}], got {K}")
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_kmeans_restart)(X, K, seed, r, max_iterations) for r in range(max(1, restarts)))
    best = min(range(len(runs)), key=lambda r: (runs[r][2], r))
    centres, labels, inertia, history = runs[best]
    return ClusteringState(method="kmeans", means=centres, labels=labels, score=inertia, history=history)


def _gmm_log_joint(X, means, variances, weights):
    log_det = np.log(variances).sum(axis=1)
    maha = (((X[:, None, :] - means[None, :, :]) ** 2) / variances[None, :, :]).sum(axis=2)
    d = X.shape[1]
    return np.log(weights)[None, :] - 0.5 * (d * np.log(2 * np.pi) + log_det[None, :] + maha)


def gmm_fit(X, K, seed=0, restarts=DEFAULT_RESTARTS, max_iterations=500, tolerance=1e-10, n_jobs=1):
    """
    Diagonal-covariance Gaussian mixture fitted by EM from a k-means start.

    Variances are floored at 1e-6. The log-likelihood of every EM step is recorded
    in ``history`` and is non-decreasing.

    Args:
        X (ndarray): n x d data.
        K (int): Number of components.
        seed (int): Seed forwarded to the k-means initialisation.
        restarts (int): k-means restarts.
        max_iterations (int): EM iteration cap.
        tolerance (float): Relative log-likelihood improvement below which EM stops.
        n_jobs (int): joblib workers for the k-means restarts.

    Returns:
        ClusteringState: Fitted mixture (``score`` is the final log-likelihood).
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    init = kmeans(X, K, seed=seed, restarts=restarts, n_jobs=n_jobs)
    global_var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    means = init.means.copy()
    variances = np.empty((K, d))
    weights = np.empty(K)
    for k in range(K):
        members = X[init.labels == k]
        weights[k] = max(members.shape[0], 1) / n
        variances[k] = members.var(axis=0) if members.shape[0] > 1 else global_var
    variances = np.maximum(variances, VARIANCE_FLOOR)
    weights /= weights.sum()

    history = []
    log_joint = _gmm_log_joint(X, means, variances, weights)
    log_likelihood = float(logsumexp(log_joint, axis=1).sum())
    history.append(log_likelihood)
    for _ in range(max_iterations):
        resp = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
        mass = np.maximum(resp.sum(axis=0), 1e-300)
        weights = mass / mass.sum()
        means = (resp.T @ X) / mass[:, None]
        variances = np.empty((K, d))
        for k in range(K):
            variances[k] = resp[:, k] @ ((X - means[k]) ** 2) / mass[k]
        variances = np.maximum(variances, VARIANCE_FLOOR)
        log_joint = _gmm_log_joint(X, means, variances, weights)
        new_log_likelihood = float(logsumexp(log_joint, axis=1).sum())
        if new_log_likelihood < log_likelihood - 1e-9 * max(1.0, abs(log_likelihood)):
            logger.warning("GMM log-likelihood decreased from %.12g to %.12g", log_likelihood, new_log_likelihood)
        history.append(new_log_likelihood)
        improvement = new_log_likelihood - log_likelihood
        log_likelihood = new_log_likelihood
        if improvement <= tolerance * max(1.0, abs(log_likelihood)):
            break
    labels = np.argmax(log_joint, axis=1)
    return ClusteringState(method="gmm", means=means, variances=variances, weights=weights,
                           labels=labels, score=log_likelihood, history=history)


def gmm_posterior(state, X):
    """Component posterior P(k | x) of a fitted GMM."""
    log_joint = _gmm_log_joint(np.asarray(X, dtype=float), state.means, state.variances, state.weights)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def cluster_distances(state, X):
    """
    Distance of every row to every cluster centre.

    Euclidean for k-means, diagonal Mahalanobis for a GMM.

    Returns:
        ndarray: n x K distances.
    """
    X = np.asarray(X, dtype=float)
    if state.method == "gmm":
        scaled = ((X[:, None, :] - state.means[None, :, :]) ** 2) / state.variances[None, :, :]
        return np.sqrt(scaled.sum(axis=2))
    return np.sqrt(_squared_distances(X, state.means))
