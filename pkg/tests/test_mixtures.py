import numpy as np
import pytest
from numpy.testing import assert_allclose

from survoptim.common.data import SurvivalDataset
from survoptim.common.numerics import check_gradient
from survoptim.common.utils import make_rng
from survoptim.models.mixtures import (FAMILIES, LOGNORMAL, WEIBULL, DSMModel, dsm_fit, dsm_log_likelihood,
                                       dsm_objective, inverse_softplus, softplus)


def weibull_sample(n, shape, scale, seed=0):
    rng = make_rng(seed)
    return scale * (-np.log(1.0 - rng.random(n))) ** (1.0 / shape)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("representation", ["linear", "hidden"])
def test_mixture_likelihood_gradient(family, representation):
    rng = make_rng(5)
    X = rng.standard_normal((40, 2))
    times = rng.exponential(size=40) + 0.05
    events = (rng.random(40) < 0.6).astype(float)
    objective, pack = dsm_objective(X, times, events, rng.uniform(0.5, 1.5, 40), 2, family,
                                    representation, hidden=3, l2=0.1, temperature=0.7)
    for point in range(10):
        theta = 0.3 * make_rng(5, point).standard_normal(pack.size)
        assert check_gradient(lambda v: objective(v)[0], lambda v: objective(v)[1], theta) < 1e-5


def test_softplus_inverse():
    y = np.array([1e-3, 0.5, 1.0, 20.0])
    assert_allclose(softplus(inverse_softplus(y)), y, rtol=1e-10)


def test_single_weibull_recovers_shape_and_scale():
    times = weibull_sample(4000, 1.5, 2.0, seed=1)
    dataset = SurvivalDataset(np.zeros((4000, 1)), times, np.ones(4000))
    model = dsm_fit(dataset, K=1, family=WEIBULL, l2=0.0)
    shape, scale, gating = model.heads(np.zeros((1, 1)))
    assert_allclose(gating, 1.0)
    assert abs(shape[0, 0] - 1.5) / 1.5 < 0.06
    assert abs(scale[0, 0] - 2.0) / 2.0 < 0.06


def test_single_lognormal_recovers_median():
    rng = make_rng(2)
    times = np.exp(rng.normal(np.log(3.0), 0.5, 3000))
    dataset = SurvivalDataset(np.zeros((3000, 1)), times, np.ones(3000))
    model = dsm_fit(dataset, K=1, family=LOGNORMAL, l2=0.0)
    shape, scale, _ = model.heads(np.zeros((1, 1)))
    assert abs(shape[0, 0] - 0.5) < 0.05
    assert abs(scale[0, 0] - 3.0) / 3.0 < 0.05
    assert_allclose(model.predict_survival(np.zeros((1, 1)), scale[0]), [[0.5]], atol=1e-10)


def test_mixture_predictions_are_survival_curves(cox_cohort):
    dataset, _ = cox_cohort
    model = dsm_fit(dataset, K=2, seed=3)
    grid = np.linspace(0.0, dataset.times.max() * 2, 40)
    survival = model.predict_survival(dataset.features, grid)
    assert np.all((survival >= 0) & (survival <= 1))
    assert_allclose(survival[:, 0], 1.0)
    assert np.all(np.diff(survival, axis=1) <= 1e-12)
    gating = model.predict_latent_z(dataset.features)
    assert_allclose(gating.sum(axis=1), 1.0)
    posterior = model.predict_latent_z(dataset.features, "posterior", dataset.times, dataset.events)
    assert_allclose(posterior.sum(axis=1), 1.0)
    assert np.isfinite(dsm_log_likelihood(model, dataset)).all()


def test_posterior_mode_needs_outcomes(cox_cohort):
    dataset, _ = cox_cohort
    model = dsm_fit(dataset.subset(np.arange(dataset.n) < 100), K=2)
    with pytest.raises(ValueError):
        model.predict_latent_z(dataset.features, "posterior")
    with pytest.raises(ValueError):
        model.predict_latent_z(dataset.features, "other")


def test_mixture_argument_checks(cox_cohort):
    dataset, _ = cox_cohort
    with pytest.raises(ValueError):
        dsm_fit(dataset, K=0)
    with pytest.raises(ValueError):
        dsm_fit(dataset, family="gamma")
    with pytest.raises(ValueError):
        dsm_fit(dataset, temperature=0.0)


def test_mixture_round_trip_and_seed(cox_cohort):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 150)
    model = dsm_fit(subset, K=2, representation="hidden", hidden=4, seed=9)
    again = dsm_fit(subset, K=2, representation="hidden", hidden=4, seed=9)
    restored = DSMModel.from_dict(model.to_dict())
    grid = [0.5, 1.0, 2.0]
    assert_allclose(again.predict_survival(subset.features, grid), model.predict_survival(subset.features, grid))
    assert_allclose(restored.predict_survival(subset.features, grid), model.predict_survival(subset.features, grid))
