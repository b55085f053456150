import numpy as np
import pytest
from numpy.testing import assert_allclose

from survoptim.common.errors import SchemaError
from survoptim.models import MODEL_DEFAULTS, fit_survival_model, load_model, model_from_dict, save_model
from survoptim.models.coxph import counterfactual_fit

FAST_PARAMS = {
    "cox": {},
    "dcph": {"hidden": 4, "l2": 1e-2},
    "dsm": {"K": 2},
    "dcm": {"K": 2, "max_iterations": 3},
    "rsf": {"n_trees": 5},
}


@pytest.mark.parametrize("spec", sorted(MODEL_DEFAULTS))
def test_every_model_saves_and_loads(spec, cox_cohort, tmp_path):
    dataset, _ = cox_cohort
    subset = dataset.subset(np.arange(dataset.n) < 200)
    model = fit_survival_model(spec, subset, FAST_PARAMS[spec], seed=1)
    grid = [0.3, 1.0, 2.0]
    survival = model.predict_survival(subset.features, grid)
    assert survival.shape == (subset.n, 3)
    assert_allclose(model.predict_risk(subset.features, grid), 1.0 - survival)
    path = save_model(model, str(tmp_path / f"{spec}.json"))
    assert_allclose(load_model(path).predict_survival(subset.features, grid), survival)


def test_unknown_model_name(cox_cohort):
    with pytest.raises(ValueError):
        fit_survival_model("weibull_aft", cox_cohort[0])


def test_counterfactual_pair_record(treated_cohort):
    dataset, _ = treated_cohort
    pair = counterfactual_fit(dataset, {"l2": 1e-3}, {"l2": 1e-3})
    restored = model_from_dict(pair.to_dict())
    assert_allclose(restored.arm_model(1).predict_survival(dataset.features, [1.0]),
                    pair.arm_model(1).predict_survival(dataset.features, [1.0]))


def test_schema_version_is_checked(cox_cohort):
    payload = fit_survival_model("cox", cox_cohort[0]).to_dict()
    payload["schema_version"] = 99
    with pytest.raises(SchemaError):
        model_from_dict(payload)
    payload["schema_version"] = 1
    payload["model"] = "nope"
    with pytest.raises(SchemaError):
        model_from_dict(payload)
