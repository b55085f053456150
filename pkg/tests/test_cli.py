import json
import os

import pandas as pd
import pytest

from survoptim.main import main, validate_config
from survoptim.common.errors import ConfigError

SCHEMA = {"time": "time", "event": "event", "treatment": "treatment"}


def write_config(directory, name, config):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config, handle)
    return path


def read_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    """A simulated cohort written by the simulate task."""
    directory = str(tmp_path_factory.mktemp("cohort"))
    config = write_config(directory, "simulate.json", {
        "seed": 3,
        "output_dir": directory,
        "simulate": {"n": 300, "d": 2, "scenario": "hte_subgroup", "censoring": 0.2},
    })
    assert main(["simulate", "--config", config]) == 0
    return directory


def pipeline_config(cohort_dir, out, **sections):
    config = {"seed": 1, "output_dir": str(out),
              "input": {"path": os.path.join(cohort_dir, "cohort.csv"), "schema": SCHEMA}}
    config.update(sections)
    return config


def test_simulate_artifacts(cohort_dir):
    for name in ("cohort.csv", "truth.json", "curves.csv", "run.json"):
        assert os.path.isfile(os.path.join(cohort_dir, name))
    frame = pd.read_csv(os.path.join(cohort_dir, "cohort.csv"))
    assert list(frame.columns) == ["time", "event", "treatment", "x1", "x2"]
    record = read_json(os.path.join(cohort_dir, "run.json"))
    assert record["task"] == "simulate" and record["seed"] == 3
    assert set(record["artifacts"]) == {"cohort.csv", "truth.json", "curves.csv"}


def test_fit_then_evaluate(cohort_dir, tmp_path):
    fit_dir = tmp_path / "fit"
    config = write_config(str(tmp_path), "fit.json", pipeline_config(cohort_dir, fit_dir, fit={"model": "cox"}))
    assert main(["fit", "-c", config]) == 0
    model = read_json(str(fit_dir / "model.json"))
    assert model["model"] == "cox"
    assert model["preprocessor"]

    eval_dir = tmp_path / "evaluate"
    config = write_config(str(tmp_path), "evaluate.json", pipeline_config(
        cohort_dir, eval_dir, evaluate={"model_path": str(fit_dir / "model.json"), "metrics": ["ibs", "ctd"],
                                        "horizons": [0.5, 1.0]}))
    assert main(["evaluate", "-c", config]) == 0
    metrics = read_json(str(eval_dir / "metrics.json"))
    assert [r["metric"] for r in metrics["records"]] == ["ibs", "ctd", "ctd"]
    assert metrics["n_test"] == 300


def test_rerun_from_run_record_is_identical(cohort_dir, tmp_path):
    first = tmp_path / "first"
    config = write_config(str(tmp_path), "fit.json", pipeline_config(cohort_dir, first, fit={"model": "rsf",
                                                                                          "params": {"n_trees": 5}}))
    assert main(["fit", "-c", config]) == 0
    second = tmp_path / "second"
    assert main(["fit", "-c", str(first / "run.json"), "--out", str(second)]) == 0
    a = read_json(str(first / "run.json"))["artifacts"]
    b = read_json(str(second / "run.json"))["artifacts"]
    assert a == b
    assert main(["evaluate", "-c", str(first / "run.json"), "--out", str(tmp_path / "third")]) == 2


def test_effect_task(cohort_dir, tmp_path):
    out = tmp_path / "effect"
    config = write_config(str(tmp_path), "effect.json", pipeline_config(
        cohort_dir, out, effect={"metric": "restricted_mean", "horizon": 1.0, "n_bootstrap": 10,
                                 "propensity": "logistic"}))
    assert main(["effect", "-c", config]) == 0
    metrics = read_json(str(out / "metrics.json"))
    assert not metrics["unadjusted"]["adjusted"]
    assert metrics["adjusted"]["adjusted"]
    curves = pd.read_csv(str(out / "curves.csv"))
    assert curves["curve"].nunique() == 4


@pytest.mark.parametrize("section", [
    {"method": "clustering", "K": 2},
    {"method": "intersectional", "num_vars": ["x1"], "quantiles": [0, 0.5, 1.0]},
])
def test_phenotype_task(cohort_dir, tmp_path, section):
    out = tmp_path / "phenotype"
    config = write_config(str(tmp_path), "phenotype.json", pipeline_config(cohort_dir, out, phenotype=section))
    assert main(["phenotype", "-c", config]) == 0
    frame = pd.read_csv(str(out / "phenotypes.csv"))
    assert list(frame.columns) == ["row", "label", "prob_0", "prob_1"]
    assert len(read_json(str(out / "groups.json"))["groups"]) == 2
    assert "integrated_purity" in read_json(str(out / "metrics.json"))


def test_cv_task(cohort_dir, tmp_path):
    out = tmp_path / "cv"
    config = write_config(str(tmp_path), "cv.json", pipeline_config(
        cohort_dir, out, cv={"model": "cox", "grid": [{"l2": 1e-4}, {"l2": 1e-1}], "folds": 3}))
    assert main(["cv", "-c", config]) == 0
    assert read_json(str(out / "model.json"))["model"] == "cox"
    assert os.path.isfile(str(out / "metrics.json"))


def test_shift_task(tmp_path):
    directory = str(tmp_path)
    config = write_config(directory, "simulate.json", {
        "seed": 2, "output_dir": directory,
        "simulate": {"n": 300, "d": 2, "scenario": "covariate_shift", "mean_shift": 0.5, "domains": True},
    })
    assert main(["simulate", "-c", config]) == 0
    out = tmp_path / "shift"
    schema = {"time": "time", "event": "event"}
    config = write_config(directory, "shift.json", {
        "seed": 2, "output_dir": str(out),
        "input": {"path": os.path.join(directory, "source.csv"), "schema": schema},
        "test_input": {"path": os.path.join(directory, "target.csv")},
        "shift": {"model": "cox", "mode": "sample_weight"},
    })
    assert main(["shift", "-c", config]) == 0
    assert os.path.isfile(str(out / "metrics.json"))


def test_check_config_reports_every_problem(tmp_path, capsys):
    config = write_config(str(tmp_path), "bad.json", {
        "output_dir": str(tmp_path),
        "input": {"path": str(tmp_path / "missing.csv"), "schema": SCHEMA},
        "fit": {"model": "xgboost"},
    })
    assert main(["fit", "-c", config, "--check-config"]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert os.path.isfile(str(tmp_path / "error.json"))
    with pytest.raises(ConfigError) as info:
        validate_config("fit", read_json(config))
    assert len(info.value.problems) == 3


def test_check_config_accepts_a_valid_config(cohort_dir, tmp_path):
    config = write_config(str(tmp_path), "ok.json", pipeline_config(cohort_dir, tmp_path / "out", fit={}))
    assert main(["fit", "-c", config, "--check-config"]) == 0
    assert not os.path.exists(str(tmp_path / "out" / "model.json"))


def test_seed_override(cohort_dir, tmp_path):
    config = write_config(str(tmp_path), "fit.json", pipeline_config(cohort_dir, tmp_path / "out", fit={}))
    assert main(["fit", "-c", config, "--seed", "9"]) == 0
    assert read_json(str(tmp_path / "out" / "run.json"))["seed"] == 9


def test_unknown_task_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "-c", str(tmp_path / "x.json")])
    assert info.value.code == 2
