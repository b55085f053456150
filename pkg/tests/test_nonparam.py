import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from survoptim.common.errors import ValidationError
from survoptim.common.nonparam import (CUMULATIVE_HAZARD, StepCurve, censoring_km, curve_eval, curve_eval_left,
                                       hazard_table, kaplan_meier, nelson_aalen, write_curve_csv)
from survoptim.common.utils import make_rng


def test_kaplan_meier_product_limit():
    curve = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert curve_eval(curve, 0.5) == 1.0
    assert_allclose(curve_eval(curve, [1.0, 2.5]), [2 / 3, 2 / 3])
    assert curve_eval(curve, 3.0) == 0.0
    assert curve_eval_left(curve, 1.0) == 1.0
    assert curve_eval(curve, 10.0) == 0.0


def test_kaplan_meier_without_censoring_is_empirical():
    curve = kaplan_meier([1, 2], [1, 1])
    assert curve_eval(curve, 1.5) == 0.5


def test_kaplan_meier_all_censored():
    curve = kaplan_meier([1, 2, 3], [0, 0, 0])
    assert curve.jump_times.size == 0
    assert_array_equal(curve_eval(curve, [0.5, 5.0]), [1.0, 1.0])


def test_kaplan_meier_zero_weights():
    with pytest.raises(ValidationError):
        kaplan_meier([1, 2], [1, 1], weights=[0, 0])


def test_kaplan_meier_weight_scale_invariance():
    rng = make_rng(1)
    times = rng.integers(1, 20, 100).astype(float)
    events = (rng.random(100) < 0.7).astype(float)
    plain = kaplan_meier(times, events)
    scaled = kaplan_meier(times, events, np.full(100, 4.0))
    assert_array_equal(plain.values, scaled.values)


def test_nelson_aalen_sums():
    curve = nelson_aalen([1, 2], [1, 1])
    assert curve.kind == CUMULATIVE_HAZARD
    assert_allclose(curve_eval(curve, [1.0, 2.0]), [0.5, 1.5])
    assert curve_eval(nelson_aalen([1.0], [1]), 1.0) == 1.0
    assert curve_eval(nelson_aalen([1, 2], [0, 0]), 5.0) == 0.0


def test_product_limit_is_below_exp_minus_hazard():
    # 1 - x <= exp(-x) term by term
    rng = make_rng(2)
    times = rng.exponential(size=200) + 1e-3
    events = (rng.random(200) < 0.6).astype(float)
    km = kaplan_meier(times, events)
    na = nelson_aalen(times, events)
    assert_array_equal(km.jump_times, na.jump_times)
    assert np.all(km.values <= np.exp(-na.values) + 1e-12)


def test_censoring_km_cases():
    no_censoring = censoring_km([1, 2, 3], [1, 1, 1])
    assert_array_equal(curve_eval(no_censoring, [0.5, 2.0, 4.0]), [1.0, 1.0, 1.0])
    curve = censoring_km([1, 2], [1, 0])
    assert curve_eval(curve, 1.5) == 1.0
    assert curve_eval(curve, 2.0) == 0.0
    assert curve_eval(censoring_km([5, 5], [0, 0]), 5.0) == 0.0


def test_censoring_tie_rule_keeps_deaths_first():
    # the death at 2 leaves the risk set before the censoring at 2 is counted
    curve = censoring_km([1, 2, 2, 3], [1, 1, 0, 1])
    assert_allclose(curve_eval(curve, 2.0), 0.5)


def test_hazard_table_risk_sets():
    event_times, deaths, at_risk = hazard_table([1, 2, 2, 3], [1, 1, 0, 1])
    assert_array_equal(event_times, [1, 2, 3])
    assert_array_equal(deaths, [1, 1, 1])
    assert_array_equal(at_risk, [4, 3, 1])


def test_step_curve_contract():
    with pytest.raises(ValueError):
        StepCurve([2.0, 1.0], [0.5, 0.2], 1.0)
    curve = StepCurve.from_dict(kaplan_meier([1, 2, 3], [1, 0, 1]).to_dict())
    assert curve_eval(curve, 1.0) == pytest.approx(2 / 3)


def test_write_curve_csv(tmp_path):
    path = str(tmp_path / "curves.csv")
    write_curve_csv({"km": kaplan_meier([1, 2], [1, 1])}, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["curve", "time", "value"]
    assert_allclose(frame["time"], [0.0, 1.0, 2.0])
    assert_allclose(frame["value"], [1.0, 0.5, 0.0])
