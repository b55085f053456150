import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from survoptim.common.data import SurvivalDataset
from survoptim.common.errors import FitError
from survoptim.common.nonparam import curve_eval, nelson_aalen
from survoptim.common.utils import make_rng
from survoptim.models.forests import (RegressionForest, SurvivalForest, _logrank_scan, logrank_statistic,
                                      n_candidate_features, regforest_fit, regforest_predict,
                                      regforest_tree_predictions, rsf_fit, tree_depth)


def test_logrank_statistic_hand_computed():
    statistic = logrank_statistic([1, 2, 3, 4], [1, 1, 1, 1], [True, True, False, False])
    assert_allclose(statistic, 49 / 17)
    assert logrank_statistic([1, 2], [0, 0], [True, False]) == 0.0


def test_logrank_scan_matches_direct_statistic():
    rng = make_rng(3)
    x = rng.integers(0, 8, 80).astype(float)
    times = rng.exponential(size=80) + 0.01
    events = (rng.random(80) < 0.7).astype(float)
    thresholds, statistics, left_events = _logrank_scan(x, times, events)
    assert np.isfinite(statistics).any()
    for c, statistic, count in zip(thresholds, statistics, left_events):
        if np.isfinite(statistic):
            assert_allclose(statistic, logrank_statistic(times, events, x <= c), rtol=1e-10)
        assert count == events[x <= c].sum()


def test_candidate_feature_counts():
    assert n_candidate_features("sqrt", 10) == 3
    assert n_candidate_features("log2", 10) == 3
    assert n_candidate_features("all", 10) == 10
    assert n_candidate_features(50, 10) == 10
    with pytest.raises(ValueError):
        n_candidate_features("half", 10)


def test_depth_zero_forest_is_nelson_aalen(cox_cohort):
    dataset, _ = cox_cohort
    forest = rsf_fit(dataset, n_trees=3, max_depth=0, bootstrap=False)
    grid = np.array([0.2, 0.7, 1.5])
    expected = np.exp(-curve_eval(nelson_aalen(dataset.times, dataset.events), grid))
    assert_allclose(forest.predict_survival(dataset.features[:4], grid), np.tile(expected, (4, 1)))


def test_forest_ignores_row_order(cox_cohort):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 200)
    shuffled = subset.subset(make_rng(1).permutation(subset.n))
    grid = [0.5, 1.0]
    first = rsf_fit(subset, n_trees=5, seed=4)
    second = rsf_fit(shuffled, n_trees=5, seed=4)
    assert_array_equal(first.predict_survival(subset.features, grid), second.predict_survival(subset.features, grid))
    other = rsf_fit(subset, n_trees=5, seed=5)
    assert not np.array_equal(other.predict_survival(subset.features, grid),
                              first.predict_survival(subset.features, grid))


def test_forest_respects_leaf_and_depth_limits(cox_cohort):
    dataset, _ = cox_cohort
    forest = rsf_fit(dataset, n_trees=2, max_depth=2, min_leaf_events=20, max_features="all", seed=0)
    assert all(tree_depth(tree.root) <= 2 for tree in forest.trees)
    survival = forest.predict_survival(dataset.features, np.linspace(0, 3, 20))
    assert np.all(np.diff(survival, axis=1) <= 1e-12)
    restored = SurvivalForest.from_dict(forest.to_dict())
    assert_array_equal(restored.predict_survival(dataset.features, [1.0]),
                       forest.predict_survival(dataset.features, [1.0]))


def test_forest_parallel_matches_serial(cox_cohort):
    dataset, _ = cox_cohort
    serial = rsf_fit(dataset, n_trees=4, seed=2, n_jobs=1)
    parallel = rsf_fit(dataset, n_trees=4, seed=2, n_jobs=2)
    assert_array_equal(serial.predict_survival(dataset.features, [1.0]),
                       parallel.predict_survival(dataset.features, [1.0]))


def test_forest_requires_an_event():
    dataset = SurvivalDataset(np.zeros((3, 1)), [1.0, 2.0, 3.0], [0, 0, 0])
    with pytest.raises(FitError):
        rsf_fit(dataset)


def test_regression_forest_fits_a_step():
    x = np.linspace(0, 1, 101).reshape(-1, 1)
    y = (x[:, 0] > 0.5).astype(float)
    forest = regforest_fit(x, y, n_trees=3, min_leaf=1, max_features="all", bootstrap=False)
    assert_allclose(regforest_predict(forest, x), y)
    assert regforest_tree_predictions(forest, x).shape == (3, 101)
    restored = RegressionForest.from_dict(forest.to_dict())
    assert_allclose(restored.predict(x), y)


def test_regression_forest_variance_shrinks_with_trees():
    rng = make_rng(6)
    X = rng.standard_normal((300, 3))
    y = X[:, 0] + rng.standard_normal(300)
    points = rng.standard_normal((50, 3))
    few = [regforest_fit(X, y, n_trees=10, seed=s).predict(points) for s in range(8)]
    many = [regforest_fit(X, y, n_trees=100, seed=s).predict(points) for s in range(8)]
    assert np.var(many, axis=0).mean() < np.var(few, axis=0).mean()


def test_regression_forest_shape_checks():
    with pytest.raises(ValueError):
        regforest_fit(np.zeros((3, 1)), np.zeros(2))
