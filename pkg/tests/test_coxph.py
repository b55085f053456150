import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import trapezoid

from survoptim.analysis.simulate import SimSpec, generate
from survoptim.common.data import SurvivalDataset
from survoptim.common.errors import FitError, ValidationError
from survoptim.common.nonparam import curve_eval, nelson_aalen
from survoptim.common.numerics import OptimizerConfig, check_gradient
from survoptim.common.utils import make_rng
from survoptim.models.coxph import (HIDDEN, LINEAR, CoxModel, breslow_baseline, counterfactual_fit,
                                    counterfactual_mean_survival, cox_fit, cox_objective, cox_rmst,
                                    split_arms)

TIGHT = OptimizerConfig(tolerance=1e-12, max_iterations=2000)


def small_cohort(seed=0, n=60, d=3):
    rng = make_rng(seed)
    times = rng.exponential(size=n) + 0.01
    # a few exact ties
    times[:6] = np.round(times[:6], 1) + 0.1
    events = (rng.random(n) < 0.7).astype(float)
    return rng.standard_normal((n, d)), times, events, rng.uniform(0.5, 2.0, n)


@pytest.mark.parametrize("representation", [LINEAR, HIDDEN])
def test_partial_likelihood_gradient(representation):
    X, times, events, weights = small_cohort()
    objective, pack = cox_objective(X, times, events, weights, 0.1, representation, hidden=4)
    for point in range(10):
        theta = 0.5 * make_rng(21, point).standard_normal(pack.size)
        assert check_gradient(lambda v: objective(v)[0], lambda v: objective(v)[1], theta) < 1e-5


def test_breslow_at_zero_is_nelson_aalen():
    X, times, events, weights = small_cohort(1)
    breslow = breslow_baseline(times, events, weights, np.zeros(len(times)))
    na = nelson_aalen(times, events, weights)
    assert_allclose(breslow.jump_times, na.jump_times)
    assert_allclose(breslow.values, na.values, atol=1e-10)


def test_linear_cox_recovers_coefficients():
    hits = 0
    for seed in range(10):
        dataset, _ = generate(SimSpec(n=2000, d=3, scenario="cox_ph", censoring=0.3, seed=seed))
        model = cox_fit(dataset)
        assert model.converged
        hits += np.all(np.abs(model.params["beta"] - [0.5, -0.5, 0.0]) <= 0.1)
    assert hits >= 9


def test_fit_depends_only_on_time_order():
    X, times, events, weights = small_cohort(2)
    first = cox_fit(SurvivalDataset(X, times, events, weights=weights), l2=0.1, config=TIGHT)
    second = cox_fit(SurvivalDataset(X, times ** 2, events, weights=weights), l2=0.1, config=TIGHT)
    assert_allclose(first.params["beta"], second.params["beta"], atol=1e-6)


def test_integer_weights_match_repeated_rows():
    X, times, events, _ = small_cohort(3)
    counts = make_rng(9).integers(1, 4, len(times))
    weighted = cox_fit(SurvivalDataset(X, times, events, weights=counts.astype(float)), l2=0.1, config=TIGHT)
    rows = np.repeat(np.arange(len(times)), counts)
    repeated = cox_fit(SurvivalDataset(X[rows], times[rows], events[rows]), l2=0.1, config=TIGHT)
    assert_allclose(weighted.params["beta"], repeated.params["beta"], atol=1e-8)


def test_cox_survival_is_monotone(cox_cohort):
    dataset, _ = cox_cohort
    model = cox_fit(dataset, l2=1e-3)
    grid = np.linspace(0.0, dataset.times.max(), 50)
    survival = model.predict_survival(dataset.features[:20], grid)
    assert survival.shape == (20, 50)
    assert np.all(np.diff(survival, axis=1) <= 1e-12)
    assert_allclose(model.predict_risk(dataset.features[:20], grid), 1.0 - survival)


def test_hidden_representation_is_seeded(cox_cohort):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 200)
    first = cox_fit(subset, l2=1e-2, representation=HIDDEN, hidden=8, seed=4)
    second = cox_fit(subset, l2=1e-2, representation=HIDDEN, hidden=8, seed=4)
    assert_allclose(first.risk_score(subset.features), second.risk_score(subset.features))


def test_cox_rmst_matches_numeric_integral(cox_cohort):
    dataset, _ = cox_cohort
    model = cox_fit(dataset, l2=1e-3)
    tau = float(np.median(dataset.times))
    X = dataset.features[:5]
    grid = np.union1d(np.linspace(0.0, tau, 20001), model.baseline.jump_times[model.baseline.jump_times < tau])
    numeric = trapezoid(model.predict_survival(X, grid), grid, axis=1)
    assert_allclose(cox_rmst(model, X, tau), numeric, rtol=2e-3)


def test_cox_requires_an_event():
    dataset = SurvivalDataset(np.zeros((3, 1)), [1.0, 2.0, 3.0], [0, 0, 0])
    with pytest.raises(FitError):
        cox_fit(dataset)


def test_cox_model_round_trip(cox_cohort):
    dataset, _ = cox_cohort
    model = cox_fit(dataset, l2=1e-3)
    restored = CoxModel.from_dict(model.to_dict())
    assert_allclose(restored.predict_survival(dataset.features[:3], [0.5, 1.0]),
                    model.predict_survival(dataset.features[:3], [0.5, 1.0]))
    assert curve_eval(restored.baseline, 1.0) == curve_eval(model.baseline, 1.0)


def test_split_arms_requires_both(treated_cohort):
    dataset, _ = treated_cohort
    treated, control = split_arms(dataset)
    assert treated.n + control.n == dataset.n
    with pytest.raises(ValidationError):
        split_arms(treated)
    with pytest.raises(ValidationError):
        split_arms(SurvivalDataset(np.zeros((2, 1)), [1.0, 2.0], [1, 1]))


def test_counterfactual_pair_refuses_thin_arm(treated_cohort):
    dataset, _ = treated_cohort
    pair = counterfactual_fit(dataset, {"l2": 1e-3}, {"l2": 1e-3}, min_events=10 ** 6)
    with pytest.raises(ValidationError):
        pair.arm_model(1)


def test_counterfactual_mean_survival_orders_arms(treated_cohort):
    # the planted effect is protective for the treated (omega < 0)
    dataset, _ = treated_cohort
    pair = counterfactual_fit(dataset, {"l2": 1e-3}, {"l2": 1e-3})
    times = [float(np.median(dataset.times))]
    treated = counterfactual_mean_survival(pair, dataset.features, 1, times)
    control = counterfactual_mean_survival(pair, dataset.features, 0, times)
    assert treated[0] > control[0]
    assert pair.to_dict()["model"] == "counterfactual_pair"
