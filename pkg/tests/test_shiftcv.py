import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from survoptim.analysis.metrics import integrated_brier
from survoptim.analysis.shiftcv import (censoring_rate_gap, counterfactual_cv, default_horizons,
                                        importance_weights, stratified_folds, survival_regression_cv,
                                        weighted_resample, weights_from_probabilities)
from survoptim.analysis.simulate import SimSpec, generate_domains
from survoptim.common.data import SurvivalDataset
from survoptim.common.errors import ValidationError
from survoptim.common.utils import make_rng
from survoptim.models.coxph import cox_fit


def test_weights_from_probabilities():
    assert_allclose(weights_from_probabilities([0.5, 0.0, 1.0]), [1.0, 0.01 / 0.99, 99.0])
    assert_allclose(weights_from_probabilities([0.8], tempering=0.5), [2.0])
    with pytest.raises(ValueError):
        weights_from_probabilities([0.5], tempering=0.0)


def test_importance_weights_follow_the_shift():
    source, target = generate_domains(SimSpec(n=800, d=2, scenario="covariate_shift", mean_shift=1.0, seed=3))
    weights = importance_weights(source[0].features, target[0].features)
    assert weights.shape == (800,)
    score = source[0].features.sum(axis=1)
    high = score > np.median(score)
    assert weights[high].mean() > 2 * weights[~high].mean()


def test_importance_weights_without_shift_are_flat():
    rng = make_rng(4)
    weights = importance_weights(rng.standard_normal((1000, 2)), rng.standard_normal((1000, 2)))
    assert abs(weights.mean() - 1.0) < 0.1
    assert weights.max() < 1.5
    with pytest.raises(ValidationError):
        importance_weights(np.zeros((3, 2)), np.zeros((3, 3)))


def small_dataset(n=200, seed=0):
    rng = make_rng(seed)
    return SurvivalDataset(rng.standard_normal((n, 2)), rng.exponential(size=n) + 0.01,
                           (rng.random(n) < 0.7).astype(float))


def test_resample_size_and_constant_weights():
    dataset = small_dataset()
    plain = weighted_resample(dataset, None, resample_factor=1.5, seed=2)
    constant = weighted_resample(dataset, np.full(dataset.n, 7.0), resample_factor=1.5, seed=2)
    assert plain.n == 300
    assert plain.weights is None
    assert_array_equal(plain.times, constant.times)


def test_resample_follows_weights():
    dataset = small_dataset(n=1000)
    weights = np.where(np.arange(1000) < 500, 3.0, 1.0)
    first_half = set(dataset.times[:500])
    drawn = weighted_resample(dataset, weights, resample_factor=4.0, seed=5)
    share = np.mean([t in first_half for t in drawn.times])
    se = math.sqrt(0.75 * 0.25 / drawn.n)
    assert abs(share - 0.75) < 4 * se
    single = weighted_resample(dataset, np.eye(1000)[7], seed=1)
    assert np.all(single.times == dataset.times[7])


def test_resample_argument_checks():
    dataset = small_dataset(n=10)
    with pytest.raises(ValidationError):
        weighted_resample(dataset, np.zeros(10))
    with pytest.raises(ValidationError):
        weighted_resample(dataset, np.ones(9))
    with pytest.raises(ValueError):
        weighted_resample(dataset, None, resample_factor=0.0)


def test_censoring_rate_gap():
    assert_allclose(censoring_rate_gap([1, 1, 0, 0], [1, 1, 1, 0]), 0.25)


def test_stratified_folds_balance_events():
    events = (make_rng(6).random(103) < 0.3).astype(float)
    folds = stratified_folds(events, 5, seed=1)
    sizes = np.bincount(folds, minlength=5)
    per_fold_events = np.bincount(folds, weights=events, minlength=5)
    assert sizes.max() - sizes.min() <= 1
    assert per_fold_events.max() - per_fold_events.min() <= 1
    assert np.all(per_fold_events > 0)
    assert_array_equal(folds, stratified_folds(events, 5, seed=1))


def test_stratified_folds_impossible_split():
    with pytest.raises(ValidationError):
        stratified_folds([1, 0, 0, 0], 2)
    with pytest.raises(ValidationError):
        stratified_folds([1, 1], 3)


def test_cross_validation_prefers_the_fitted_model(cox_cohort):
    dataset, _ = cox_cohort
    grid = [{"l2": 1e-4}, {"l2": 1e4}]
    report = survival_regression_cv("cox", grid, 4, dataset, seed=3)
    assert report.scores.shape == (2, 4)
    assert np.isfinite(report.scores).all()
    assert report.selected_index == 0
    assert report.selected == {"l2": 1e-4}
    assert_allclose(report.horizons, default_horizons(dataset.times, dataset.events))
    record = report.to_dict()
    assert record["model"]["model"] == "cox"
    assert record["selected_index"] == 0


def test_cross_validation_ties_pick_the_first(cox_cohort):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 200)
    report = survival_regression_cv("cox", [{}, {}], 3, subset, seed=1)
    assert_array_equal(report.scores[0], report.scores[1])
    assert report.selected_index == 0
    with pytest.raises(ValueError):
        survival_regression_cv("svm", [{}], 3, subset)


def test_cross_validation_parallel_matches_serial(cox_cohort):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 200)
    serial = survival_regression_cv("rsf", [{"n_trees": 5}], 3, subset, seed=2, n_jobs=1)
    parallel = survival_regression_cv("rsf", [{"n_trees": 5}], 3, subset, seed=2, n_jobs=2)
    assert_array_equal(serial.scores, parallel.scores)


def test_counterfactual_cross_validation(treated_cohort):
    dataset, _ = treated_cohort
    treated_report, control_report, pair = counterfactual_cv("cox", [{}], 3, dataset, seed=1)
    assert treated_report.scores.shape == (1, 3)
    assert control_report.scores.shape == (1, 3)
    assert pair.arm_model(1) is treated_report.model
    assert pair.arm_model(0) is control_report.model


@pytest.mark.slow
def test_importance_weighting_helps_a_misspecified_model():
    wins = 0
    for seed in range(10):
        (source, _), (target, _) = generate_domains(SimSpec(n=1000, d=2, scenario="covariate_shift", beta=(0.5, -0.5),
                                                            quadratic=0.5, mean_shift=1.5, censoring=0.3, seed=seed))
        weights = importance_weights(source.features, target.features, tempering=0.2)
        horizons = np.quantile(target.times[target.events == 1], [0.25, 0.5, 0.75])
        scores = []
        for model in (cox_fit(source, l2=1e-3), cox_fit(source.with_weights(weights), l2=1e-3)):
            survival = model.predict_survival(target.features, horizons)
            scores.append(integrated_brier(target.outcomes, target.outcomes, survival, horizons))
        wins += scores[1] <= scores[0]
    assert wins >= 7
