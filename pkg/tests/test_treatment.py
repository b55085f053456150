import math
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from survoptim.analysis.simulate import SimSpec, generate
from survoptim.analysis.treatment import (BEYOND_FOLLOW_UP, hazard_ratio, iptw_weights, risk_at_time, rmst,
                                          summarize, tar, treatment_effect)
from survoptim.common.data import Outcomes, SurvivalDataset
from survoptim.common.errors import ConvergenceError, FitError, ValidationError
from survoptim.common.nonparam import kaplan_meier
from survoptim.common.numerics import OptimizerConfig
from survoptim.common.utils import make_rng
from survoptim.models.coxph import cox_fit

CURVE = kaplan_meier([1, 2, 3], [1, 0, 1])


def test_restricted_mean_is_exact():
    assert_allclose(rmst(CURVE, 2.5), 1.0 + 1.5 * 2 / 3)
    assert_allclose(rmst(CURVE, 5.0), 1.0 + 2.0 * 2 / 3)
    assert rmst(CURVE, 0.0) == 0.0


def test_risk_and_time_at_risk():
    assert_allclose(risk_at_time(CURVE, 2.0), 1 / 3)
    assert tar(CURVE, 0.7) == 1.0
    assert tar(CURVE, 0.5) == 3.0
    assert tar(CURVE, 1.0) == 0.0
    assert tar(kaplan_meier([1, 2], [0, 0]), 0.5) == BEYOND_FOLLOW_UP


def test_identical_arms_have_unit_hazard_ratio():
    times = np.tile([1.0, 2.0, 3.0, 4.0, 5.0], 2)
    events = np.tile([1.0, 1.0, 0.0, 1.0, 1.0], 2)
    treatment = np.repeat([0.0, 1.0], 5)
    assert_allclose(hazard_ratio(Outcomes(times, events), treatment), 1.0, atol=1e-8)


def test_hazard_ratio_recovers_randomised_effect():
    dataset, _ = generate(SimSpec(n=3000, d=1, scenario="confounded_treatment", beta=(0.0,), shape=1.0,
                                  confounding=0.0, treatment_effect=math.log(0.5), censoring=0.2, seed=2))
    assert abs(hazard_ratio(dataset.outcomes, dataset.treatment) - 0.5) < 0.06


def test_iptw_weights_clip_propensity():
    weights = iptw_weights([1, 1, 0], [0.0, 0.5, 1.0])
    assert_allclose(weights, [100.0, 2.0, 100.0])


def test_summarize_ignores_nan():
    summary = summarize([1.0, 2.0, 3.0, math.nan])
    assert summary["n_valid"] == 3
    assert_allclose([summary["mean"], summary["sd"]], [2.0, 1.0])
    assert_allclose([summary["lower"], summary["upper"]], [1.05, 2.95])
    assert summarize([math.nan])["n_valid"] == 0


def test_bootstrap_is_reproducible(treated_cohort):
    dataset, _ = treated_cohort
    horizon = float(np.median(dataset.times))
    first = treatment_effect("restricted_mean", dataset.outcomes, dataset.treatment, horizon=horizon,
                             n_bootstrap=20, seed=3)
    second = treatment_effect("restricted_mean", dataset.outcomes, dataset.treatment, horizon=horizon,
                              n_bootstrap=20, seed=3, n_jobs=2)
    assert_array_equal(first.replicates, second.replicates)
    assert first.summary["n_valid"] == 20
    # protective effect in half of the cohort
    assert first.point > 0
    record = first.to_dict()
    assert record["n_bootstrap"] == 20 and not record["adjusted"]


def test_propensity_gives_weighted_point_estimate(treated_cohort):
    dataset, truth = treated_cohort
    propensity = truth.propensity
    estimate = treatment_effect("hazard_ratio", dataset.outcomes, dataset.treatment, propensity=propensity,
                                n_bootstrap=5, seed=1)
    weights = iptw_weights(dataset.treatment, propensity)
    assert estimate.adjusted
    assert_allclose(estimate.point, hazard_ratio(dataset.outcomes, dataset.treatment, weights))


def test_effect_argument_checks(treated_cohort):
    dataset, _ = treated_cohort
    with pytest.raises(ValueError):
        treatment_effect("median", dataset.outcomes, dataset.treatment)
    with pytest.raises(ValueError):
        treatment_effect("risk_at_time", dataset.outcomes, dataset.treatment)
    with pytest.raises(ValueError):
        treatment_effect("time_at_risk", dataset.outcomes, dataset.treatment)
    with pytest.raises(ValidationError):
        treatment_effect("hazard_ratio", dataset.outcomes, np.ones(dataset.n))


def test_hazard_ratio_matches_the_general_cox_fit(treated_cohort):
    dataset, _ = treated_cohort
    weights = make_rng(8).uniform(0.5, 2.0, dataset.n)
    arm = SurvivalDataset(dataset.treatment.reshape(-1, 1), dataset.times, dataset.events, weights=weights)
    cox = cox_fit(arm, l2=0.0, config=OptimizerConfig(tolerance=1e-10, max_iterations=500))
    assert_allclose(hazard_ratio(dataset.outcomes, dataset.treatment, weights),
                    math.exp(cox.params["beta"][0]), rtol=1e-6)


def test_hazard_ratio_errors():
    with pytest.raises(ConvergenceError):
        hazard_ratio(Outcomes([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 0]), [1, 1, 0, 0])
    with pytest.raises(FitError):
        hazard_ratio(Outcomes([1.0, 2.0], [0, 0]), [1, 0])


def test_restricted_mean_and_time_at_risk_are_monotone():
    curve = kaplan_meier(*generate(SimSpec(n=200, d=1, seed=3))[0].outcomes)
    taus = np.linspace(0.0, 3.0, 31)
    areas = np.array([rmst(curve, tau) for tau in taus])
    assert np.all(np.diff(areas) >= 0)
    assert np.all(areas <= taus + 1e-12)
    levels = np.linspace(0.05, 0.95, 19)
    crossings = np.array([tar(curve, level) for level in levels])
    assert list(crossings) == sorted(crossings, reverse=True)


def test_half_propensity_matches_the_unweighted_bootstrap(treated_cohort):
    dataset, _ = treated_cohort
    horizon = float(np.median(dataset.times))
    plain = treatment_effect("restricted_mean", dataset.outcomes, dataset.treatment, horizon=horizon,
                             n_bootstrap=15, seed=6)
    halves = treatment_effect("restricted_mean", dataset.outcomes, dataset.treatment, horizon=horizon,
                              propensity=np.full(dataset.n, 0.5), n_bootstrap=15, seed=6)
    assert_array_equal(plain.replicates, halves.replicates)


@pytest.mark.slow
def test_propensity_weighting_removes_confounding():
    closer = excludes = covers = 0
    for seed in range(10):
        dataset, truth = generate(SimSpec(n=3000, d=3, scenario="confounded_treatment", confounding=1.0,
                                          treatment_effect=0.0, censoring=0.3, seed=seed))
        started = time.perf_counter()
        crude = treatment_effect("hazard_ratio", dataset.outcomes, dataset.treatment, n_bootstrap=500, seed=seed)
        adjusted = treatment_effect("hazard_ratio", dataset.outcomes, dataset.treatment,
                                    propensity=truth.propensity, n_bootstrap=500, seed=seed)
        assert time.perf_counter() - started < 120
        closer += abs(math.log(adjusted.point)) < abs(math.log(crude.point))
        excludes += not crude.summary["lower"] <= 1.0 <= crude.summary["upper"]
        covers += adjusted.summary["lower"] <= 1.0 <= adjusted.summary["upper"]
    assert closer >= 9
    assert excludes >= 9
    assert covers >= 8
