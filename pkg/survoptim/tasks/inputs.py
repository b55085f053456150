"""
Helpers shared by the task handlers: cohort loading, output paths and curve tables.
"""
import os

import numpy as np

from ..common.data import CATEGORICAL, fit_preprocessor, load_csv, transform
from ..common.nonparam import StepCurve, kaplan_meier

DEFAULT_CURVE_POINTS = 100


def default_preprocess(table):
    """Every non-role column, numeric or categorical by its parsed kind."""
    role_columns = set(table.roles.values())
    numeric, categorical = [], []
    for name in table.column_names:
        if name in role_columns:
            continue
        (categorical if table.columns[name].kind == CATEGORICAL else numeric).append(name)
    return numeric, categorical


def load_cohort(config, key="input", state=None):
    """
    Load ``config[key]`` and preprocess it.

    Args:
        config (dict): Pipeline configuration.
        key (str): ``input`` or ``test_input``; the test input reuses the training schema
            when it has none.
        state (PreprocessorState): Fitted preprocessing; fitted on this table when None.

    Returns:
        tuple: (SurvivalDataset, RawTable, PreprocessorState).
    """
    section = config[key]
    schema = section.get("schema") or config["input"]["schema"]
    table = load_csv(section["path"], schema)
    if state is None:
        preprocess = config.get("preprocess")
        if preprocess:
            numeric, categorical = preprocess.get("numeric", []), preprocess.get("categorical", [])
        else:
            numeric, categorical = default_preprocess(table)
        state = fit_preprocessor(table, numeric, categorical)
    return transform(state, table), table, state


def output_path(config, name):
    directory = config.get("output_dir", ".")
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)


def event_quartiles(dataset):
    return np.quantile(dataset.times[dataset.events == 1], [0.25, 0.5, 0.75])


def time_grid(times, points=DEFAULT_CURVE_POINTS):
    """``points`` equally spaced positive times up to the largest observed time."""
    return np.linspace(0.0, float(np.max(times)), points + 1)[1:]


def mean_curve(survival, grid):
    """Step curve of the row-mean of an n x m survival matrix on ``grid``."""
    return StepCurve(grid, np.asarray(survival).mean(axis=0), 1.0)


def group_curves(dataset, labels, prefix="group"):
    """Kaplan-Meier curve of every group present in ``labels``."""
    return {f"{prefix}_{g}": kaplan_meier(dataset.times[labels == g], dataset.events[labels == g])
            for g in np.unique(labels)}
