import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from survoptim.common.data import (SurvivalDataset, dataset_frame, fit_preprocessor, load_csv, transform)
from survoptim.common.errors import FitError, SchemaError, ValidationError

SCHEMA = {"time": "time", "event": "event"}


def test_load_csv_parses_rows_and_columns(write_csv):
    table = load_csv(write_csv("time,event,x1\n1.5,1,0.2\n2,0,0.4\n3,1,-1\n"), SCHEMA)
    assert table.n_rows == 3
    assert table.column_names == ["time", "event", "x1"]
    assert_allclose(table.column("x1").values, [0.2, 0.4, -1.0])
    assert table.roles == {"time": "time", "event": "event"}


def test_load_csv_rejects_bad_event_with_row(write_csv):
    path = write_csv("time,event,x1\n1,1,0\n2,2,0\n")
    with pytest.raises(ValidationError) as info:
        load_csv(path, SCHEMA)
    assert info.value.row == 1


def test_load_csv_rejects_nonpositive_time(write_csv):
    path = write_csv("time,event\n1,1\n0,0\n")
    with pytest.raises(ValidationError) as info:
        load_csv(path, SCHEMA)
    assert info.value.row == 1


def test_load_csv_blank_cell_is_missing(write_csv):
    table = load_csv(write_csv("time,event,x1\n1,1,0.5\n2,0,\n3,1,1.5\n"), SCHEMA)
    assert_array_equal(table.column("x1").missing, [False, True, False])


def test_load_csv_missing_required_column(write_csv):
    with pytest.raises(SchemaError):
        load_csv(write_csv("time,x1\n1,0\n"), SCHEMA)


def test_mean_impute_then_standardize(write_csv):
    table = load_csv(write_csv("time,event,x1\n1,1,1\n2,0,\n3,1,3\n"), SCHEMA)
    state = fit_preprocessor(table, ["x1"], [])
    dataset = transform(state, table)
    assert_allclose(dataset.features[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_one_hot_and_constant_column(write_csv):
    table = load_csv(write_csv("time,event,c,k\n1,1,a,5\n2,0,b,5\n3,1,a,5\n"),
                     {**SCHEMA, "categorical": ["c"]})
    state = fit_preprocessor(table, ["k"], ["c"])
    dataset = transform(state, table)
    assert dataset.feature_names == ["k", "c=a", "c=b"]
    assert_array_equal(dataset.features[:, 0], [0, 0, 0])
    assert_array_equal(dataset.features[:, 1], [1, 0, 1])
    assert_array_equal(dataset.features[:, 2], [0, 1, 0])


def test_constant_float_column_is_zero(write_csv):
    table = load_csv(write_csv("time,event,k\n1,1,0.1\n2,0,0.1\n3,1,0.1\n"), SCHEMA)
    state = fit_preprocessor(table, ["k"], [])
    assert state.stds["k"] == 0.0
    assert_array_equal(transform(state, table).features[:, 0], [0, 0, 0])


def test_unseen_level_maps_to_zero_block(write_csv):
    train = load_csv(write_csv("time,event,c\n1,1,a\n2,0,b\n", "train.csv"), {**SCHEMA, "categorical": ["c"]})
    test = load_csv(write_csv("time,event,c\n1,1,z\n", "test.csv"), {**SCHEMA, "categorical": ["c"]})
    dataset = transform(fit_preprocessor(train, [], ["c"]), test)
    assert_array_equal(dataset.features, [[0.0, 0.0]])


def test_mode_ties_break_lexicographically(write_csv):
    table = load_csv(write_csv("time,event,c\n1,1,b\n2,0,a\n3,1,\n"), {**SCHEMA, "categorical": ["c"]})
    state = fit_preprocessor(table, [], ["c"])
    assert state.impute_values["c"] == "a"


def test_all_missing_column_is_a_fit_error(write_csv):
    table = load_csv(write_csv("time,event,x1\n1,1,\n2,0,\n"), {**SCHEMA, "numeric": ["x1"]})
    with pytest.raises(FitError):
        fit_preprocessor(table, ["x1"], [])


def test_transform_standardizes_and_is_deterministic(rng, tmp_path):
    n = 50
    frame = dataset_frame(SurvivalDataset(rng.normal(3, 2, size=(n, 2)), rng.uniform(1, 5, n),
                                          rng.integers(0, 2, n)))
    path = str(tmp_path / "cohort.csv")
    frame.to_csv(path, index=False)
    table = load_csv(path, SCHEMA)
    state = fit_preprocessor(table, ["x1", "x2"], [])
    first = transform(state, table)
    second = transform(state, table)
    assert_array_equal(first.features, second.features)
    assert_allclose(first.features.mean(axis=0), 0.0, atol=1e-9)
    assert_allclose(first.features.var(axis=0), 1.0, atol=1e-9)


def test_dataset_contract():
    with pytest.raises(ValidationError):
        SurvivalDataset(np.zeros((2, 1)), [1.0, -1.0], [1, 0])
    with pytest.raises(ValidationError):
        SurvivalDataset(np.zeros((2, 1)), [1.0, 2.0], [1, 0], weights=[0.0, 0.0])
    dataset = SurvivalDataset(np.arange(6.0).reshape(3, 2), [1, 2, 3], [1, 0, 1], treatment=[1, 0, 1])
    subset = dataset.subset([2, 0])
    assert_array_equal(subset.times, [3, 1])
    assert_array_equal(subset.treatment, [1, 1])
    assert_array_equal(dataset.sample_weights(), [1, 1, 1])
