"""
Covariate-shift importance weighting and cross-validated model selection.
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from joblib import Parallel, delayed

from ..common.errors import SurvoptimError, ValidationError
from ..common.numerics import logistic_fit, logistic_predict
from ..common.utils import SCHEMA_VERSION, derive_seed, make_rng
from ..models import fit_survival_model
from ..models.coxph import MIN_ARM_EVENTS, CounterfactualPair, split_arms
from .metrics import integrated_brier

logger = logging.getLogger(__name__)

PROBABILITY_CLIP = (0.01, 0.99)
CENSORING_GAP_THRESHOLD = 0.10
FOLD_RETRIES = 10
CV_MODELS = ("cox", "dcph", "dsm", "dcm", "rsf")


def weights_from_probabilities(probabilities, tempering=1.0, clip=PROBABILITY_CLIP):
    """
    Importance weights (p / (1 - p)) ** tempering from domain probabilities.

    Args:
        probabilities (ndarray): P(target | x) of the source rows.
        tempering (float): Exponent in (0, 1]; smaller values shrink extreme weights.
        clip (tuple): Probability clipping bounds.

    Returns:
        ndarray: Unnormalised weights.
    """
    if not 0 < tempering <= 1:
        raise ValueError("tempering must be in (0, 1]")
    p = np.clip(np.asarray(probabilities, dtype=float).reshape(-1), clip[0], clip[1])
    return (p / (1.0 - p)) ** tempering


def importance_weights(features_source, features_target, l2=1e-2, tempering=1.0, clip=PROBABILITY_CLIP,
                       config=None):
    """
    Density-ratio weights of the source rows from a domain classifier.

    A logistic regression separates source (label 0) from target (label 1) rows; each
    source row gets (p / (1 - p)) ** tempering with p its clipped target probability.

    Args:
        features_source (ndarray): Training covariates.
        features_target (ndarray): Deployment covariates.
        l2 (float): Penalty of the domain classifier.
        tempering (float): Weight exponent in (0, 1].
        clip (tuple): Probability clipping bounds.
        config (OptimizerConfig): Optimizer settings.

    Returns:
        ndarray: Unnormalised weights, one per source row.
    """
    source = np.asarray(features_source, dtype=float)
    target = np.asarray(features_target, dtype=float)
    if source.ndim == 1:
        source, target = source.reshape(-1, 1), target.reshape(-1, 1)
    if source.shape[1] != target.shape[1]:
        raise ValidationError("Source and target covariates must have the same columns")
    stacked = np.vstack([source, target])
    labels = np.concatenate([np.zeros(source.shape[0]), np.ones(target.shape[0])])
    classifier = logistic_fit(stacked, labels, l2=l2, config=config)
    weights = weights_from_probabilities(logistic_predict(classifier, source), tempering, clip)
    logger.info("Importance weights: mean %.4g, max/min ratio %.4g", weights.mean(), weights.max() / weights.min())
    return weights


def weighted_resample(dataset, weights, resample_factor=1.0, seed=0):
    """
    Draw ceil(resample_factor * n) rows with replacement, probability proportional to ``weights``.

    Constant weights take the uniform path, so any constant gives the same rows as
    no weights at the same seed. The resampled dataset carries no sample weights.
    """
    if resample_factor <= 0:
        raise ValueError("resample_factor must be > 0")
    n = dataset.n
    size = int(math.ceil(resample_factor * n))
    rng = make_rng(seed)
    probabilities = None
    if weights is not None:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.size != n or np.any(weights < 0) or not np.any(weights > 0):
            raise ValidationError("weights must be non-negative, one per row, with a positive entry")
        if not np.all(weights == weights[0]):
            probabilities = weights / weights.sum()
    index = rng.choice(n, size=size, replace=True, p=probabilities)
    return dataset.subset(index).with_weights(None)


def censoring_rate_gap(events_source, events_target):
    """Absolute difference of the censored fractions of two cohorts."""
    return float(abs(np.mean(1.0 - np.asarray(events_source, dtype=float))
                     - np.mean(1.0 - np.asarray(events_target, dtype=float))))


def stratified_folds(events, folds, seed=0, retries=FOLD_RETRIES):
    """
    Fold index per row, stratified by event indicator.

    Rows of each stratum are shuffled and dealt round-robin. A split with an event-free
    fold is redrawn from a derived seed, at most ``retries`` times.
    """
    events = np.asarray(events, dtype=float).reshape(-1)
    if folds < 2 or folds > events.size:
        raise ValidationError(f"Need 2 <= folds <= n, got folds={folds} for n={events.size}")
    for attempt in range(retries + 1):
        rng = make_rng(seed if attempt == 0 else derive_seed(seed, attempt))
        assignment = np.empty(events.size, dtype=int)
        offset = 0
        for stratum in (1.0, 0.0):
            rows = np.flatnonzero(events == stratum)
            shuffled = rows[rng.permutation(rows.size)]
            assignment[shuffled] = (np.arange(rows.size) + offset) % folds
            offset = (offset + rows.size) % folds
        fold_events = np.bincount(assignment, weights=events, minlength=folds)
        if np.all(fold_events > 0):
            return assignment
        logger.debug("Fold split %d has an event-free fold, redrawing", attempt)
    raise ValidationError(f"Could not build {folds} folds with events in each after {retries} retries")


@dataclass
class CVReport:
    """
    Cross-validation outcome.

    ``scores[c, f]`` is the integrated Brier score of grid configuration c on fold f.
    """
    spec: str
    grid: List[dict]
    scores: np.ndarray
    selected_index: int
    model: object
    folds: np.ndarray
    horizons: np.ndarray
    seed: int

    @property
    def mean_scores(self):
        return self.scores.mean(axis=1)

    @property
    def selected(self):
        return self.grid[self.selected_index]

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "spec": self.spec,
            "grid": self.grid,
            "scores": self.scores,
            "mean_scores": self.mean_scores,
            "selected_index": self.selected_index,
            "selected": self.selected,
            "folds": self.folds,
            "horizons": self.horizons,
            "seed": self.seed,
            "model": self.model.to_dict(),
        }


def _score_cell(spec, params, dataset, folds, fold, horizons, seed):
    train = dataset.subset(folds != fold)
    valid = dataset.subset(folds == fold)
    try:
        model = fit_survival_model(spec, train, params, seed=seed)
        survival = model.predict_survival(valid.features, horizons)
        return integrated_brier(train.outcomes, valid.outcomes, survival, horizons)
    except SurvoptimError as exc:
        logger.warning("%s %s fold %d not scored: %s", spec, params, fold, exc)
        return math.inf


def default_horizons(times, events):
    """Event-time quartiles, the horizon grid used when none is configured."""
    return np.quantile(np.asarray(times)[np.asarray(events) == 1], [0.25, 0.5, 0.75])


def survival_regression_cv(spec, grid, folds, dataset, horizons=None, seed=0, n_jobs=1):
    """
    K-fold model selection by integrated Brier score.

    Each (configuration, fold) cell fits on the other folds and scores the held-out fold
    with G estimated on the training split; a cell that cannot be fitted or scored counts
    as +inf. The configuration with the lowest mean score (first in grid order on ties)
    is refitted on all rows.

    Args:
        spec (str): ``cox``, ``dcph``, ``dsm``, ``dcm`` or ``rsf``.
        grid (list): Hyperparameter dicts.
        folds (int): Number of folds.
        dataset (SurvivalDataset): Training data.
        horizons (array): Brier horizons, event-time quartiles when None.
        seed (int): Seed of the split and of every fit.
        n_jobs (int): joblib workers over cells.

    Returns:
        CVReport: Scores, selection and refitted model.
    """
    if spec not in CV_MODELS:
        raise ValueError(f"Unknown model '{spec}', expected one of {CV_MODELS}")
    grid = [dict(params or {}) for params in (grid or [{}])]
    if horizons is None:
        horizons = default_horizons(dataset.times, dataset.events)
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    assignment = stratified_folds(dataset.events, folds, seed)
    cells = [(c, f) for c in range(len(grid)) for f in range(folds)]
    values = Parallel(n_jobs=n_jobs)(
        delayed(_score_cell)(spec, grid[c], dataset, assignment, f, horizons, seed) for c, f in cells)
    scores = np.array(values, dtype=float).reshape(len(grid), folds)
    selected_index = int(np.argmin(scores.mean(axis=1)))
    if not np.isfinite(scores[selected_index]).all():
        raise ValidationError(f"No {spec} configuration could be scored on every fold")
    logger.info("%s CV selected configuration %d %s (mean IBS %.6g)", spec, selected_index, grid[selected_index],
                scores[selected_index].mean())
    model = fit_survival_model(spec, dataset, grid[selected_index], seed=seed, n_jobs=n_jobs)
    return CVReport(spec, grid, scores, selected_index, model, assignment, horizons, int(seed))


def counterfactual_cv(spec, grid, folds, dataset, horizons=None, seed=0, min_events=MIN_ARM_EVENTS, n_jobs=1):
    """
    Cross-validate one model per treatment arm at the same seed.

    Returns:
        tuple: (treated CVReport, control CVReport, CounterfactualPair of the refitted winners).
    """
    treated, control = split_arms(dataset)
    report_treated = survival_regression_cv(spec, grid, folds, treated, horizons, seed, n_jobs)
    report_control = survival_regression_cv(spec, grid, folds, control, horizons, seed, n_jobs)
    pair = CounterfactualPair(report_treated.model, report_control.model,
                              float(np.sum(treated.events * treated.sample_weights())),
                              float(np.sum(control.events * control.sample_weights())), min_events)
    return report_treated, report_control, pair
