"""
Censoring-adjusted evaluation metrics.

The censoring distribution G is always estimated on the training outcomes. Event
terms use its left limit G(T-), so a death that coincides with a censoring jump
keeps a finite weight.
"""
import logging

import numpy as np
from scipy.integrate import trapezoid

from ..common.data import Outcomes
from ..common.errors import ValidationError
from ..common.nonparam import censoring_km, curve_eval, curve_eval_left, kaplan_meier

logger = logging.getLogger(__name__)

METRICS = ("brs", "ibs", "auc", "ctd")
PURITY_STRATEGIES = ("instantaneous", "integrated")


def _outcome_arrays(outcomes):
    return np.asarray(outcomes.times, dtype=float).reshape(-1), np.asarray(outcomes.events, dtype=float).reshape(-1)


def _left_censoring_weight(G, times, horizon):
    values = np.asarray(curve_eval_left(G, times), dtype=float)
    if np.any(values <= 0):
        raise ValidationError(f"Censoring survival is zero before horizon {horizon:g}; "
                              "the metric is not estimable beyond follow-up", horizon=float(horizon))
    return values


def _brier_with(G, test_times, test_events, survival, horizon):
    survival = np.asarray(survival, dtype=float).reshape(-1)
    if survival.size != test_times.size:
        raise ValidationError("One prediction per test row is required")
    died = (test_times <= horizon) & (test_events == 1)
    alive = test_times > horizon
    total = 0.0
    if died.any():
        total += np.sum(survival[died] ** 2 / _left_censoring_weight(G, test_times[died], horizon))
    if alive.any():
        G_t = curve_eval(G, horizon)
        if G_t <= 0:
            raise ValidationError(f"Censoring survival is zero at horizon {horizon:g}", horizon=float(horizon))
        total += np.sum((1.0 - survival[alive]) ** 2) / G_t
    return total / test_times.size


def brier_ipcw(train_outcomes, test_outcomes, predictions, t):
    """
    IPCW Brier score at horizon ``t``.

    Args:
        train_outcomes (Outcomes): Outcomes G is estimated on.
        test_outcomes (Outcomes): Outcomes being scored.
        predictions (ndarray): Predicted survival f(x_i, t) per test row.
        t (float): Horizon.

    Returns:
        float: (1/n) sum of f^2 1{T<=t, d=1} / G(T-) + (1-f)^2 1{T>t} / G(t).
    """
    G = censoring_km(*_outcome_arrays(train_outcomes))
    test_times, test_events = _outcome_arrays(test_outcomes)
    return float(_brier_with(G, test_times, test_events, predictions, float(t)))


def brier_scores(train_outcomes, test_outcomes, survival, horizons):
    """IPCW Brier scores for an n x m survival matrix at m horizons."""
    G = censoring_km(*_outcome_arrays(train_outcomes))
    test_times, test_events = _outcome_arrays(test_outcomes)
    survival = np.asarray(survival, dtype=float).reshape(test_times.size, -1)
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    return np.array([_brier_with(G, test_times, test_events, survival[:, j], t) for j, t in enumerate(horizons)])


def integrated_brier(train_outcomes, test_outcomes, survival, horizons):
    """
    Integrated Brier score: trapezoidal integral of the Brier curve over ``horizons``
    divided by (t_max - t_min). A single horizon returns its Brier score.
    """
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    if np.any(np.diff(horizons) <= 0):
        raise ValidationError("Horizons must be strictly increasing")
    scores = brier_scores(train_outcomes, test_outcomes, survival, horizons)
    if horizons.size == 1:
        return float(scores[0])
    return float(trapezoid(scores, horizons) / (horizons[-1] - horizons[0]))


def auc_td(train_outcomes, test_outcomes, risk, t):
    """
    Time-dependent AUC at horizon ``t``.

    Cases are rows with an event at or before t, weighted by 1/G(T-); controls are rows
    still event-free after t, unweighted. Thresholds sweep -inf and every distinct
    predicted risk; the area is the trapezoid over the (FPR, TPR) points.
    """
    G = censoring_km(*_outcome_arrays(train_outcomes))
    times, events = _outcome_arrays(test_outcomes)
    risk = np.asarray(risk, dtype=float).reshape(-1)
    cases = (times <= t) & (events == 1)
    controls = times > t
    if not cases.any() or not controls.any():
        raise ValidationError(f"AUC at horizon {t:g} needs both cases and controls", horizon=float(t))
    case_weights = 1.0 / _left_censoring_weight(G, times[cases], t)
    values = np.unique(risk)
    rank = np.searchsorted(values, risk)
    case_mass = np.bincount(rank[cases], weights=case_weights, minlength=values.size)
    control_mass = np.bincount(rank[controls], minlength=values.size).astype(float)

    def above(mass):
        tail = np.cumsum(mass[::-1])[::-1]
        return np.concatenate([[tail[0]], tail[1:], [0.0]])

    tpr = above(case_mass) / case_mass.sum()
    fpr = above(control_mass) / control_mass.sum()
    return float(trapezoid(tpr[::-1], fpr[::-1]))


def concordance_td(train_outcomes, test_outcomes, risk, t):
    """
    Time-dependent concordance index (Uno).

    Comparable pairs (i, j) have an event for i at T_i <= t and T_i < T_j; each is weighted
    by 1/G(T_i-)^2. Equal predicted risks count one half.
    """
    G = censoring_km(*_outcome_arrays(train_outcomes))
    times, events = _outcome_arrays(test_outcomes)
    risk = np.asarray(risk, dtype=float).reshape(-1)
    anchors = np.flatnonzero((events == 1) & (times <= t))
    numerator = denominator = 0.0
    if anchors.size:
        weights = 1.0 / _left_censoring_weight(G, times[anchors], t) ** 2
        for i, weight in zip(anchors, weights):
            later = times > times[i]
            count = later.sum()
            if count == 0:
                continue
            concordant = np.sum(risk[later] < risk[i]) + 0.5 * np.sum(risk[later] == risk[i])
            numerator += weight * concordant
            denominator += weight * count
    if denominator == 0:
        raise ValidationError(f"No comparable pairs at horizon {t:g}", horizon=float(t))
    return float(numerator / denominator)


def survival_regression_metric(metric, train_outcomes, test_outcomes, survival, horizons):
    """
    Score an n x m survival matrix with ``brs``, ``ibs``, ``auc`` or ``ctd``.

    Risk-based metrics use risk = 1 - survival.

    Returns:
        ndarray or float: Per-horizon values, or one value for ``ibs``.
    """
    if metric not in METRICS:
        raise ValueError(f"Unknown metric '{metric}', expected one of {METRICS}")
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    survival = np.asarray(survival, dtype=float).reshape(-1, horizons.size)
    if metric == "brs":
        return brier_scores(train_outcomes, test_outcomes, survival, horizons)
    if metric == "ibs":
        return integrated_brier(train_outcomes, test_outcomes, survival, horizons)
    scorer = auc_td if metric == "auc" else concordance_td
    return np.array([scorer(train_outcomes, test_outcomes, 1.0 - survival[:, j], t) for j, t in enumerate(horizons)])


def metric_records(metric, horizons, values):
    """JSON-ready records ``{metric, horizon, value}``."""
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    if np.ndim(values) == 0:
        return [{"metric": metric, "horizon": float(horizons[-1]), "value": float(values)}]
    return [{"metric": metric, "horizon": float(h), "value": float(v)} for h, v in zip(horizons, values)]


def _hard_labels(phenotypes):
    phenotypes = np.asarray(phenotypes)
    if phenotypes.ndim == 2:
        return np.argmax(phenotypes, axis=1)
    return phenotypes.reshape(-1)


def phenotype_purity(phenotypes_train, outcomes_train, phenotypes_test=None, outcomes_test=None,
                     strategy="instantaneous", horizons=None):
    """
    Phenotyping purity: Brier score of per-group Kaplan-Meier predictions.

    Each training group gets a Kaplan-Meier curve, used as the prediction for the group's
    test rows; per-group scores are averaged with weights equal to the test group sizes.
    Probabilities (n x K) are hard-assigned by argmax.

    Args:
        phenotypes_train (ndarray): Labels or probabilities of the training rows.
        outcomes_train (Outcomes): Training outcomes (group curves and G).
        phenotypes_test (ndarray): Labels of the scored rows (training rows when None).
        outcomes_test (Outcomes): Outcomes of the scored rows.
        strategy (str): ``instantaneous`` (per-horizon Brier) or ``integrated``.
        horizons (array): Evaluation horizons.

    Returns:
        ndarray or float: Per-horizon purity, or the integrated purity.
    """
    if strategy not in PURITY_STRATEGIES:
        raise ValueError(f"Unknown strategy '{strategy}', expected one of {PURITY_STRATEGIES}")
    if horizons is None:
        raise ValueError("horizons are required")
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    labels_train = _hard_labels(phenotypes_train)
    if phenotypes_test is None:
        labels_test, outcomes_test = labels_train, outcomes_train
    else:
        labels_test = _hard_labels(phenotypes_test)
    train_times, train_events = _outcome_arrays(outcomes_train)
    test_times, test_events = _outcome_arrays(outcomes_test)

    curves = {group: kaplan_meier(train_times[labels_train == group], train_events[labels_train == group])
              for group in np.unique(labels_train)}
    scores, sizes = [], []
    for group in np.unique(labels_test):
        if group not in curves:
            raise ValidationError(f"Phenotype {group} has no training rows")
        rows = labels_test == group
        prediction = np.tile(np.atleast_1d(curve_eval(curves[group], horizons)), (rows.sum(), 1))
        subset = Outcomes(test_times[rows], test_events[rows])
        if strategy == "instantaneous":
            scores.append(brier_scores(outcomes_train, subset, prediction, horizons))
        else:
            scores.append(integrated_brier(outcomes_train, subset, prediction, horizons))
        sizes.append(rows.sum())
    sizes = np.asarray(sizes, dtype=float)
    pooled = np.tensordot(sizes, np.asarray(scores), axes=1) / sizes.sum()
    logger.debug("Phenotype purity over %d groups: %s", len(sizes), pooled)
    return float(pooled) if strategy == "integrated" else pooled
