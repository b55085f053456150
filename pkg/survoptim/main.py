#!/usr/bin/env python3

import argparse
import json
import logging
import os
import sys

import pandas as pd

from survoptim.analysis.shiftcv import CV_MODELS
from survoptim.common.errors import ConfigError, SurvoptimError
from survoptim.common.utils import file_digest, read_json, to_builtin, write_json
from survoptim.tasks.cv import cv_main
from survoptim.tasks.effect import effect_main
from survoptim.tasks.evaluate import evaluate_main
from survoptim.tasks.fit import fit_main
from survoptim.tasks.phenotype import PHENOTYPE_METHODS, phenotype_main
from survoptim.tasks.shift import shift_main
from survoptim.tasks.simulate import simulate_main

TASKS = ("fit", "evaluate", "phenotype", "effect", "cv", "shift", "simulate")
NEEDS_INPUT = {"fit", "evaluate", "phenotype", "effect", "cv", "shift"}
NEEDS_TEST_INPUT = {"shift"}
NEEDS_TREATMENT = {"effect"}
MODEL_TASKS = {"fit", "evaluate", "cv", "shift"}
RUN_RECORD = "run.json"
ERROR_RECORD = "error.json"


def load_config(path):
    """
    Read a JSON config; a ``run.json`` from a previous run yields its recorded config.

    Args:
        path (str): Config or run record path.

    Returns:
        tuple: (config dict, task recorded in a run record or None).
    """
    try:
        payload = read_json(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError([f"cannot read config {path}: {e}"])
    if not isinstance(payload, dict):
        raise ConfigError([f"config {path} must be a JSON object"])
    if "config" in payload and "artifacts" in payload:
        return payload["config"], payload.get("task")
    return payload, None


def _csv_columns(path):
    return [str(c) for c in pd.read_csv(path, nrows=0, dtype=str, encoding="utf-8").columns]


def _check_input(config, key, problems, needs_treatment=False):
    section = config.get(key)
    if not isinstance(section, dict):
        problems.append(f"'{key}' section with a 'path' is required")
        return
    path = section.get("path")
    if not isinstance(path, str) or not os.path.isfile(path):
        problems.append(f"{key}.path: file not found ({path})")
        return
    schema = section.get("schema") or (config.get("input") or {}).get("schema")
    if not isinstance(schema, dict):
        problems.append(f"{key}.schema must be an object")
        return
    for role in ("time", "event") + (("treatment",) if needs_treatment else ()):
        if not schema.get(role):
            problems.append(f"{key}.schema.{role} is required")
    columns = set(_csv_columns(path))
    referenced = [schema.get(role) for role in ("time", "event", "treatment", "weights") if schema.get(role)]
    preprocess = config.get("preprocess") or {}
    referenced += list(preprocess.get("numeric", [])) + list(preprocess.get("categorical", []))
    for name in referenced:
        if name not in columns:
            problems.append(f"{key}: column '{name}' not found in {path}")


def validate_config(task, config):
    """
    Check a config for ``task`` and raise one ConfigError listing every problem.

    Args:
        task (str): Subcommand.
        config (dict): Pipeline configuration.
    """
    problems = []
    seed = config.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append("seed: a non-negative integer is required")
    if not isinstance(config.get("output_dir", "."), str):
        problems.append("output_dir must be a string")
    params = config.get(task, {})
    if not isinstance(params, dict):
        problems.append(f"'{task}' section must be an object")
        params = {}
    if task in NEEDS_INPUT:
        _check_input(config, "input", problems, task in NEEDS_TREATMENT)
    if task in NEEDS_TEST_INPUT or (config.get("test_input") is not None and task in NEEDS_INPUT):
        _check_input(config, "test_input", problems)
    if task in MODEL_TASKS and params.get("model", "cox") not in CV_MODELS:
        problems.append(f"{task}.model must be one of {CV_MODELS}")
    if task == "phenotype":
        method = params.get("method", "clustering")
        if method not in PHENOTYPE_METHODS:
            problems.append(f"phenotype.method must be one of {PHENOTYPE_METHODS}")
        if method == "virtual_twins":
            _check_input(config, "input", problems, needs_treatment=True)
            if params.get("horizon") is None:
                problems.append("phenotype.horizon is required for virtual_twins")
    if problems:
        raise ConfigError(sorted(set(problems)))


def process_task(task, config):
    """
    Run one task handler.

    Args:
        task (str): Subcommand.
        config (dict): Validated configuration.

    Returns:
        dict: Artifact name -> path.
    """
    params = config.get(task)
    if task == "fit":
        print(f" Running model fit with parameters: {params}")
        return fit_main(config, params)
    elif task == "evaluate":
        print(f" Running evaluation with parameters: {params}")
        return evaluate_main(config, params)
    elif task == "phenotype":
        print(f" Running phenotyping with parameters: {params}")
        return phenotype_main(config, params)
    elif task == "effect":
        print(f" Running treatment effect estimation with parameters: {params}")
        return effect_main(config, params)
    elif task == "cv":
        print(f" Running cross-validation with parameters: {params}")
        return cv_main(config, params)
    elif task == "shift":
        print(f" Running covariate shift adjustment with parameters: {params}")
        return shift_main(config, params)
    elif task == "simulate":
        print(f" Running simulation with parameters: {params}")
        return simulate_main(config, params)
    raise ConfigError([f"unsupported task: {task}"])


def write_run_record(task, config, artifacts):
    """Write ``run.json``: the effective config, seed and sha256 of every artifact."""
    record = {
        "task": task,
        "seed": config["seed"],
        "config": config,
        "artifacts": {name: {"path": os.path.basename(path), "sha256": file_digest(path)}
                      for name, path in sorted(artifacts.items())},
    }
    return write_json(os.path.join(config.get("output_dir", "."), RUN_RECORD), record)


def report_error(error, output_dir):
    record = error.to_record() if isinstance(error, SurvoptimError) else {
        "error": type(error).__name__, "message": str(error)}
    print(json.dumps(to_builtin(record)), file=sys.stderr)
    if output_dir:
        try:
            write_json(os.path.join(output_dir, ERROR_RECORD), record)
        except OSError:
            pass


def build_parser():
    parser = argparse.ArgumentParser(prog="survoptim", description="Censored time-to-event analysis pipelines")
    parser.add_argument("task", choices=TASKS, help="Task to run")
    parser.add_argument("--config", "-c", required=True, help="JSON config (or a run.json to re-run)")
    parser.add_argument("--out", help="Output directory, overrides output_dir")
    parser.add_argument("--seed", type=int, help="Seed override")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument("--check-config", action="store_true", help="Validate the config and exit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    output_dir = args.out
    try:
        config, recorded_task = load_config(args.config)
        if recorded_task is not None and recorded_task != args.task:
            raise ConfigError([f"run record is for task '{recorded_task}', not '{args.task}'"])
        config = dict(config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["output_dir"] = args.out
        output_dir = config.get("output_dir", ".")
        validate_config(args.task, config)
        if args.check_config:
            print(f" Configuration OK for task '{args.task}'")
            return 0

        artifacts = process_task(args.task, config)
        artifacts[RUN_RECORD] = write_run_record(args.task, config, artifacts)
        print("\n Artifacts:")
        for name, path in artifacts.items():
            print(f"  {name}: {path}")
        print("-" * 60)
        return 0
    except ConfigError as e:
        report_error(e, output_dir)
        return 2
    except Exception as e:
        report_error(e, output_dir)
        return 1


if __name__ == "__main__":
    sys.exit(main())
