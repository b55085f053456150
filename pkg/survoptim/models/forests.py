"""
Random survival forests (log-rank splitting, Nelson-Aalen leaves) and regression
forests (squared-error splitting, mean leaves).

Rows are put in a canonical order before bootstrapping, so a fitted forest does not
depend on the order of the training rows. Tree t draws from substream (seed, t).
Split candidates are midpoints between consecutive distinct values; ties between
candidates go to the lowest feature index, then the lowest threshold.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from ..common.errors import FitError
from ..common.nonparam import StepCurve, curve_eval, nelson_aalen
from ..common.utils import SCHEMA_VERSION, make_rng

logger = logging.getLogger(__name__)

MAX_FEATURES = ("sqrt", "log2", "all")
RELATIVE_MIN_GAIN = 1e-12


@dataclass
class Node:
    """Tree node; leaves carry ``curve`` (survival trees) or ``value`` (regression trees)."""
    feature: int = -1
    threshold: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None
    curve: Optional[StepCurve] = None
    value: float = 0.0
    n_samples: int = 0

    @property
    def is_leaf(self):
        return self.left is None

    def to_dict(self):
        if self.is_leaf:
            record = {"n_samples": self.n_samples, "value": self.value}
            if self.curve is not None:
                record["curve"] = self.curve.to_dict()
            return record
        return {"feature": self.feature, "threshold": self.threshold, "n_samples": self.n_samples,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, payload):
        if "left" not in payload:
            curve = StepCurve.from_dict(payload["curve"]) if "curve" in payload else None
            return cls(curve=curve, value=float(payload.get("value", 0.0)), n_samples=payload.get("n_samples", 0))
        return cls(feature=int(payload["feature"]), threshold=float(payload["threshold"]),
                   left=cls.from_dict(payload["left"]), right=cls.from_dict(payload["right"]),
                   n_samples=payload.get("n_samples", 0))


@dataclass
class Tree:
    root: Node
    bootstrap: np.ndarray

    def to_dict(self):
        return {"bootstrap": self.bootstrap, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, payload):
        return cls(Node.from_dict(payload["root"]), np.asarray(payload["bootstrap"], dtype=int))


def n_candidate_features(max_features, d):
    if isinstance(max_features, int) and not isinstance(max_features, bool):
        return min(max(1, max_features), d)
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features == "log2":
        return max(1, int(math.log2(d))) if d > 1 else 1
    if max_features == "all":
        return d
    raise ValueError(f"max_features must be one of {MAX_FEATURES} or an int, got {max_features!r}")


def _candidate_features(rng, d, count):
    if count >= d:
        return np.arange(d)
    return np.sort(rng.choice(d, size=count, replace=False))


def canonical_order(X, *columns):
    """Row order sorting by the features (first column primary) and then by ``columns``."""
    keys = [np.asarray(c) for c in reversed(columns)] + [X[:, j] for j in reversed(range(X.shape[1]))]
    return np.lexsort(keys) if keys else np.arange(X.shape[0])


def _leaves_apply(node, X, rows, visit):
    if node.is_leaf:
        visit(node, rows)
        return
    go_left = X[rows, node.feature] <= node.threshold
    _leaves_apply(node.left, X, rows[go_left], visit)
    _leaves_apply(node.right, X, rows[~go_left], visit)


def tree_depth(node):
    return 0 if node.is_leaf else 1 + max(tree_depth(node.left), tree_depth(node.right))


# ----------------------------------------------------------------- log-rank

def logrank_statistic(times, events, group):
    """
    Two-sample log-rank chi-square statistic (group 1 vs group 0).

    Args:
        times (ndarray): Observed times.
        events (ndarray): Event indicators.
        group (ndarray): Boolean membership of the first sample.

    Returns:
        float: (O - E)^2 / V, 0 when the variance vanishes.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    group = np.asarray(group, dtype=bool)
    observed = expected = variance = 0.0
    for t in np.unique(times[events == 1]):
        at_risk = times >= t
        n = at_risk.sum()
        n1 = (at_risk & group).sum()
        dies = (times == t) & (events == 1)
        d = dies.sum()
        observed += (dies & group).sum()
        expected += d * n1 / n
        if n > 1:
            variance += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    if variance <= 0:
        return 0.0
    return (observed - expected) ** 2 / variance


def _logrank_scan(x, times, events):
    """
    Log-rank statistics of every split x <= c over midpoints c of distinct x values.

    Returns:
        tuple: (thresholds, statistics, left event counts); statistics are 0 where the
        variance vanishes.
    """
    unique_x, rank = np.unique(x, return_inverse=True)
    if unique_x.size < 2:
        return np.empty(0), np.empty(0), np.empty(0)
    event_times = np.unique(times[events == 1])
    U, J = unique_x.size, event_times.size
    exits = np.searchsorted(event_times, times, side="right")
    entering = np.zeros((U, J + 1))
    np.add.at(entering, (rank, exits), 1.0)
    at_risk = np.cumsum(entering[:, ::-1], axis=1)[:, ::-1][:, 1:]
    deaths = np.zeros((U, J))
    dead = events == 1
    np.add.at(deaths, (rank[dead], np.searchsorted(event_times, times[dead])), 1.0)

    n_left = np.cumsum(at_risk, axis=0)[:-1]
    d_left = np.cumsum(deaths, axis=0)[:-1]
    n_all = at_risk.sum(axis=0)
    d_all = deaths.sum(axis=0)
    share = n_left / n_all
    expected = (d_all * share).sum(axis=1)
    correction = np.where(n_all > 1, (n_all - d_all) / np.maximum(n_all - 1, 1), 0.0)
    variance = (d_all * share * (1 - share) * correction).sum(axis=1)
    observed = d_left.sum(axis=1)
    statistic = np.where(variance > 0, (observed - expected) ** 2 / np.where(variance > 0, variance, 1.0), 0.0)
    thresholds = (unique_x[:-1] + unique_x[1:]) / 2
    return thresholds, np.where(variance > 0, statistic, -np.inf), observed


# ---------------------------------------------------------- survival trees

def _grow_survival(X, times, events, rows, depth, rng, params):
    node = Node(n_samples=rows.size)
    total_events = events[rows].sum()
    can_split = ((params["max_depth"] is None or depth < params["max_depth"])
                 and total_events >= 2 * params["min_leaf_events"] and rows.size >= 2)
    best = None
    if can_split:
        count = n_candidate_features(params["max_features"], X.shape[1])
        for j in _candidate_features(rng, X.shape[1], count):
            thresholds, statistics, left_events = _logrank_scan(X[rows, j], times[rows], events[rows])
            admissible = ((left_events >= params["min_leaf_events"])
                          & (total_events - left_events >= params["min_leaf_events"]))
            statistics = np.where(admissible, statistics, -np.inf)
            if statistics.size == 0 or not np.isfinite(statistics.max()):
                continue
            c = int(np.argmax(statistics))
            if best is None or statistics[c] > best[0]:
                best = (statistics[c], int(j), float(thresholds[c]))
    if best is None:
        node.curve = nelson_aalen(times[rows], events[rows])
        return node
    _, node.feature, node.threshold = best
    go_left = X[rows, node.feature] <= node.threshold
    node.left = _grow_survival(X, times, events, rows[go_left], depth + 1, rng, params)
    node.right = _grow_survival(X, times, events, rows[~go_left], depth + 1, rng, params)
    return node


def _fit_survival_tree(X, times, events, order, seed, tree_index, params):
    rng = make_rng(seed, tree_index)
    n = order.size
    bootstrap = order[rng.integers(0, n, size=n)] if params["bootstrap"] else order.copy()
    root = _grow_survival(X, times, events, bootstrap, 0, rng, params)
    return Tree(root, bootstrap)


@dataclass
class SurvivalForest:
    trees: List[Tree]
    n_features: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def predict_cumulative_hazard(self, X, times):
        return rsf_predict_cumulative_hazard(self, X, times)

    def predict_survival(self, X, times):
        return rsf_predict_survival(self, X, times)

    def predict_risk(self, X, times):
        return 1.0 - rsf_predict_survival(self, X, times)

    def to_dict(self):
        return {"model": "rsf", "schema_version": SCHEMA_VERSION, "n_features": self.n_features,
                "params": self.params, "seed": self.seed, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, payload):
        return cls([Tree.from_dict(item) for item in payload["trees"]], payload["n_features"],
                   dict(payload.get("params", {})), payload.get("seed", 0))


def rsf_fit(dataset, n_trees=100, max_depth=None, min_leaf_events=3, max_features="sqrt", seed=0,
            bootstrap=True, n_jobs=1):
    """
    Fit a random survival forest.

    Args:
        dataset (SurvivalDataset): Training data.
        n_trees (int): Number of trees.
        max_depth (int or None): Depth cap, None for unlimited (0 gives single-leaf trees).
        min_leaf_events (int): Minimum events in each child of a split.
        max_features (str or int): ``sqrt``, ``log2``, ``all`` or a count of candidate features per node.
        seed (int): Tree t draws from substream (seed, t).
        bootstrap (bool): Grow every tree on a bootstrap resample.
        n_jobs (int): joblib workers.

    Returns:
        SurvivalForest: Fitted forest.
    """
    if not np.any(dataset.events == 1):
        raise FitError("rsf_fit requires at least one event")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n_candidate_features(max_features, max(dataset.features.shape[1], 1))
    params = {"n_trees": int(n_trees), "max_depth": max_depth, "min_leaf_events": int(min_leaf_events),
              "max_features": max_features, "bootstrap": bool(bootstrap)}
    X, times, events = dataset.features, dataset.times, dataset.events
    order = canonical_order(X, times, events)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_survival_tree)(X, times, events, order, seed, t, params) for t in range(n_trees))
    logger.info("Fitted survival forest with %d trees on %d rows", n_trees, dataset.n)
    return SurvivalForest(trees, X.shape[1], params, int(seed))


def survival_tree_cumulative_hazard(tree, X, times):
    X = np.asarray(X, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.zeros((X.shape[0], times.size))

    def visit(node, rows):
        out[rows] = np.atleast_1d(curve_eval(node.curve, times))

    _leaves_apply(tree.root, X, np.arange(X.shape[0]), visit)
    return out


def rsf_predict_cumulative_hazard(forest, X, times):
    """Mean over trees of the leaf Nelson-Aalen curves, n x m."""
    total = sum(survival_tree_cumulative_hazard(tree, X, times) for tree in forest.trees)
    return total / len(forest.trees)


def rsf_predict_survival(forest, X, times):
    """Forest survival exp(-mean cumulative hazard), n x m."""
    return np.exp(-rsf_predict_cumulative_hazard(forest, X, times))


# -------------------------------------------------------- regression trees

def _sse_scan(x, y):
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    boundaries = np.flatnonzero(xs[1:] > xs[:-1])
    if boundaries.size == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    sums = np.cumsum(ys)
    squares = np.cumsum(ys ** 2)
    n = ys.size
    n_left = boundaries + 1.0
    left = squares[boundaries] - sums[boundaries] ** 2 / n_left
    right_sum = sums[-1] - sums[boundaries]
    right = (squares[-1] - squares[boundaries]) - right_sum ** 2 / (n - n_left)
    thresholds = (xs[boundaries] + xs[boundaries + 1]) / 2
    return thresholds, left + right, n_left


def _grow_regression(X, y, rows, depth, rng, params):
    values = y[rows]
    node = Node(value=float(np.mean(values)), n_samples=rows.size)
    can_split = ((params["max_depth"] is None or depth < params["max_depth"])
                 and rows.size >= 2 * params["min_leaf"])
    if not can_split:
        return node
    parent = float(np.sum((values - node.value) ** 2))
    min_gain = RELATIVE_MIN_GAIN * max(float(np.sum(values ** 2)), 1e-300)
    best = None
    count = n_candidate_features(params["max_features"], X.shape[1])
    for j in _candidate_features(rng, X.shape[1], count):
        thresholds, children, n_left = _sse_scan(X[rows, j], values)
        admissible = (n_left >= params["min_leaf"]) & (rows.size - n_left >= params["min_leaf"])
        gains = np.where(admissible, parent - children, -np.inf)
        if gains.size == 0:
            continue
        c = int(np.argmax(gains))
        if gains[c] > min_gain and (best is None or gains[c] > best[0]):
            best = (gains[c], int(j), float(thresholds[c]))
    if best is None:
        return node
    _, node.feature, node.threshold = best
    go_left = X[rows, node.feature] <= node.threshold
    node.left = _grow_regression(X, y, rows[go_left], depth + 1, rng, params)
    node.right = _grow_regression(X, y, rows[~go_left], depth + 1, rng, params)
    return node


def _fit_regression_tree(X, y, order, seed, tree_index, params):
    rng = make_rng(seed, tree_index)
    n = order.size
    bootstrap = order[rng.integers(0, n, size=n)] if params["bootstrap"] else order.copy()
    return Tree(_grow_regression(X, y, bootstrap, 0, rng, params), bootstrap)


@dataclass
class RegressionForest:
    trees: List[Tree]
    n_features: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def predict(self, X):
        return regforest_predict(self, X)

    def to_dict(self):
        return {"model": "regforest", "schema_version": SCHEMA_VERSION, "n_features": self.n_features,
                "params": self.params, "seed": self.seed, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, payload):
        return cls([Tree.from_dict(item) for item in payload["trees"]], payload["n_features"],
                   dict(payload.get("params", {})), payload.get("seed", 0))


def regforest_fit(X, y, n_trees=100, max_depth=None, min_leaf=5, max_features="sqrt", seed=0, bootstrap=True,
                  n_jobs=1):
    """
    Fit a regression forest with squared-error splits.

    Args:
        X (ndarray): n x d features.
        y (ndarray): Responses.
        n_trees (int): Number of trees.
        max_depth (int or None): Depth cap, None for unlimited.
        min_leaf (int): Minimum rows in each child of a split.
        max_features (str or int): Candidate features per node.
        seed (int): Tree t draws from substream (seed, t).
        bootstrap (bool): Grow trees on bootstrap resamples.
        n_jobs (int): joblib workers.

    Returns:
        RegressionForest: Fitted forest.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size or y.size == 0:
        raise ValueError("X and y must have the same, positive number of rows")
    n_candidate_features(max_features, X.shape[1])
    params = {"n_trees": int(n_trees), "max_depth": max_depth, "min_leaf": int(max(min_leaf, 1)),
              "max_features": max_features, "bootstrap": bool(bootstrap)}
    order = canonical_order(X, y)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_regression_tree)(X, y, order, seed, t, params) for t in range(n_trees))
    return RegressionForest(trees, X.shape[1], params, int(seed))


def regforest_tree_predictions(forest, X):
    """Per-tree predictions, n_trees x n."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    out = np.zeros((len(forest.trees), X.shape[0]))
    for t, tree in enumerate(forest.trees):
        def visit(node, rows, t=t):
            out[t, rows] = node.value
        _leaves_apply(tree.root, X, np.arange(X.shape[0]), visit)
    return out


def regforest_predict(forest, X):
    return regforest_tree_predictions(forest, X).mean(axis=0)
