"""
Dataset model, CSV ingestion and preprocessing (impute, scale, one-hot).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd

from .errors import FitError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ROLE_KEYS = ("time", "event", "treatment", "weights")


class Outcomes(NamedTuple):
    """Observed times and event indicators of a cohort."""
    times: np.ndarray
    events: np.ndarray


@dataclass(frozen=True)
class Column:
    """One typed column; ``missing`` flags absent cells explicitly."""
    kind: str
    values: np.ndarray
    missing: np.ndarray


@dataclass(frozen=True)
class RawTable:
    """Parsed CSV table plus the role mapping of its outcome columns."""
    column_names: List[str]
    columns: Dict[str, Column]
    n_rows: int
    roles: Dict[str, str] = field(default_factory=dict)

    def column(self, name):
        if name not in self.columns:
            raise SchemaError(f"Column '{name}' not found", column=name)
        return self.columns[name]

    def role_values(self, role):
        """Return the numeric values of a role column (time/event/treatment/weights) or None."""
        name = self.roles.get(role)
        if name is None:
            return None
        return self.columns[name].values.astype(float)


@dataclass(frozen=True)
class SurvivalDataset:
    """
    Covariates, outcomes and optional treatment/sample weights.

    Attributes:
        features (ndarray): n x d numeric matrix without missing values.
        times (ndarray): Event or censoring times, all > 0.
        events (ndarray): Event indicators in {0, 1}.
        treatment (ndarray or None): Treatment indicators in {0, 1}.
        weights (ndarray or None): Non-negative sample weights, at least one positive.
        feature_names (list): Column names of ``features``.
    """
    features: np.ndarray
    times: np.ndarray
    events: np.ndarray
    treatment: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    feature_names: Optional[List[str]] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        events = np.asarray(self.events, dtype=float).reshape(-1)
        n = times.shape[0]
        if features.shape[0] != n or events.shape[0] != n:
            raise ValidationError("features, times and events must have the same number of rows")
        if np.isnan(features).any():
            raise ValidationError("features contain missing values", row=int(np.argwhere(np.isnan(features))[0, 0]))
        bad = np.flatnonzero(~(times > 0))
        if bad.size:
            raise ValidationError(f"time must be > 0, got {times[bad[0]]}", row=bad[0])
        bad = np.flatnonzero((events != 0) & (events != 1))
        if bad.size:
            raise ValidationError(f"event must be 0 or 1, got {events[bad[0]]}", row=bad[0])
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)
        if self.treatment is not None:
            treatment = np.asarray(self.treatment, dtype=float).reshape(-1)
            bad = np.flatnonzero((treatment != 0) & (treatment != 1))
            if treatment.shape[0] != n or bad.size:
                raise ValidationError("treatment must be a 0/1 vector with one entry per row",
                                      row=bad[0] if bad.size else None)
            object.__setattr__(self, "treatment", treatment)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if weights.shape[0] != n or np.any(weights < 0) or not np.any(weights > 0):
                raise ValidationError("weights must be non-negative with at least one positive entry")
            object.__setattr__(self, "weights", weights)
        if self.feature_names is None:
            object.__setattr__(self, "feature_names", [f"x{j + 1}" for j in range(features.shape[1])])

    @property
    def n(self):
        return self.times.shape[0]

    @property
    def outcomes(self):
        return Outcomes(self.times, self.events)

    def sample_weights(self):
        """Return the sample weights, ones when none were given."""
        return np.ones(self.n) if self.weights is None else self.weights

    def subset(self, index):
        """Return the rows selected by an integer index or boolean mask."""
        index = np.asarray(index)
        return SurvivalDataset(
            features=self.features[index],
            times=self.times[index],
            events=self.events[index],
            treatment=None if self.treatment is None else self.treatment[index],
            weights=None if self.weights is None else self.weights[index],
            feature_names=list(self.feature_names),
        )

    def with_weights(self, weights):
        return replace(self, weights=weights)

    def with_features(self, features, feature_names=None):
        return replace(self, features=features, feature_names=feature_names)


@dataclass(frozen=True)
class PreprocessorState:
    """Fitted imputation, scaling and one-hot statistics."""
    numeric_cols: List[str]
    categorical_cols: List[str]
    impute_values: Dict[str, object]
    means: Dict[str, float]
    stds: Dict[str, float]
    levels: Dict[str, List[str]]

    def feature_names(self):
        names = list(self.numeric_cols)
        for col in self.categorical_cols:
            names.extend(f"{col}={level}" for level in self.levels[col])
        return names

    def to_dict(self):
        return {
            "numeric_cols": self.numeric_cols,
            "categorical_cols": self.categorical_cols,
            "impute_values": self.impute_values,
            "means": self.means,
            "stds": self.stds,
            "levels": self.levels,
        }


def _parse_numeric(raw):
    stripped = raw.str.strip()
    missing = stripped.eq("").to_numpy()
    values = pd.to_numeric(stripped.where(~stripped.eq("")), errors="coerce").to_numpy(dtype=float)
    missing = missing | np.isnan(values)
    return Column(NUMERIC, values, missing)


def _parse_categorical(raw):
    stripped = raw.str.strip()
    missing = stripped.eq("").to_numpy()
    values = stripped.to_numpy(dtype=object)
    return Column(CATEGORICAL, values, missing)


def _looks_numeric(raw):
    stripped = raw.str.strip()
    present = stripped[~stripped.eq("")]
    if present.empty:
        return True
    return not pd.to_numeric(present, errors="coerce").isna().any()


def load_csv(path, schema):
    """
    Read a UTF-8 CSV file into a RawTable.

    Args:
        path (str): CSV file with a header row.
        schema (dict): Column roles. ``time`` and ``event`` are required; ``treatment``
            and ``weights`` are optional; ``numeric`` / ``categorical`` list column types
            (other columns are typed by inspection).

    Returns:
        RawTable: Parsed table. Empty cells and unparsable numbers become missing.
    """
    for role in ("time", "event"):
        if not schema.get(role):
            raise SchemaError(f"Schema must name a '{role}' column", role=role)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    names = [str(c) for c in frame.columns]
    if len(set(names)) != len(names):
        raise SchemaError("Column names must be unique")

    roles = {role: schema[role] for role in ROLE_KEYS if schema.get(role)}
    declared_numeric = set(schema.get("numeric", [])) | set(roles.values())
    declared_categorical = set(schema.get("categorical", []))
    for name in list(roles.values()) + sorted(declared_numeric | declared_categorical):
        if name not in names:
            raise SchemaError(f"Required column '{name}' is missing from {path}", column=name)

    columns = {}
    for name in names:
        raw = frame[name]
        if name in declared_categorical:
            columns[name] = _parse_categorical(raw)
        elif name in declared_numeric or _looks_numeric(raw):
            columns[name] = _parse_numeric(raw)
        else:
            columns[name] = _parse_categorical(raw)

    _validate_outcome_columns(columns, roles)
    logger.info("Loaded %d rows x %d columns from %s", len(frame), len(names), path)
    return RawTable(column_names=names, columns=columns, n_rows=len(frame), roles=roles)


def _validate_outcome_columns(columns, roles):
    time = columns[roles["time"]]
    bad = np.flatnonzero(time.missing | ~(np.nan_to_num(time.values, nan=0.0) > 0))
    if bad.size:
        raise ValidationError(f"Nonpositive or missing time in row {bad[0]}", row=bad[0], column=roles["time"])
    for role in ("event", "treatment"):
        if role not in roles:
            continue
        col = columns[roles[role]]
        values = np.where(col.missing, -1.0, col.values)
        bad = np.flatnonzero((values != 0) & (values != 1))
        if bad.size:
            raise ValidationError(f"{role} value must be 0 or 1 in row {bad[0]}", row=bad[0], column=roles[role])
    if "weights" in roles:
        col = columns[roles["weights"]]
        bad = np.flatnonzero(col.missing | (np.nan_to_num(col.values, nan=-1.0) < 0))
        if bad.size:
            raise ValidationError(f"Weight must be non-negative in row {bad[0]}", row=bad[0], column=roles["weights"])


def fit_preprocessor(table, numeric_cols, categorical_cols):
    """
    Fit mean/mode imputation, z-scoring and one-hot dictionaries.

    Args:
        table (RawTable): Training table.
        numeric_cols (list): Columns to impute with their mean and standardize.
        categorical_cols (list): Columns to impute with their mode and one-hot encode.

    Returns:
        PreprocessorState: Fitted statistics.
    """
    impute_values, means, stds, levels = {}, {}, {}, {}
    for name in numeric_cols:
        col = table.column(name)
        observed = col.values[~col.missing].astype(float)
        if observed.size == 0:
            raise FitError(f"Numeric column '{name}' has no observed values", column=name)
        fill = float(observed.mean())
        imputed = np.where(col.missing, fill, col.values).astype(float)
        impute_values[name] = fill
        means[name] = float(imputed.mean())
        stds[name] = 0.0 if np.ptp(imputed) == 0 else float(imputed.std())
    for name in categorical_cols:
        col = table.column(name)
        observed = [str(v) for v in col.values[~col.missing]]
        if not observed:
            raise FitError(f"Categorical column '{name}' has no observed values", column=name)
        counts = pd.Series(observed).value_counts()
        top = counts.max()
        impute_values[name] = sorted(counts[counts == top].index)[0]
        levels[name] = sorted(set(observed))
    return PreprocessorState(list(numeric_cols), list(categorical_cols), impute_values, means, stds, levels)


def transform(state, table):
    """
    Apply a fitted PreprocessorState to a table.

    Zero-variance numeric columns become all zeros; categorical levels unseen at fit
    time map to an all-zeros one-hot block.

    Args:
        state (PreprocessorState): Fitted statistics.
        table (RawTable): Table with the fitted columns and outcome roles.

    Returns:
        SurvivalDataset: Preprocessed dataset.
    """
    blocks = []
    for name in state.numeric_cols:
        col = table.column(name)
        imputed = np.where(col.missing, state.impute_values[name], col.values).astype(float)
        std = state.stds[name]
        if std > 0:
            blocks.append(((imputed - state.means[name]) / std).reshape(-1, 1))
        else:
            blocks.append(np.zeros((table.n_rows, 1)))
    for name in state.categorical_cols:
        col = table.column(name)
        values = np.array([state.impute_values[name] if m else str(v) for v, m in zip(col.values, col.missing)],
                          dtype=object)
        block = np.zeros((table.n_rows, len(state.levels[name])))
        for j, level in enumerate(state.levels[name]):
            block[:, j] = (values == level).astype(float)
        blocks.append(block)
    features = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
    if "time" not in table.roles or "event" not in table.roles:
        raise SchemaError("Table has no time/event roles; load it with a schema")
    return SurvivalDataset(
        features=features,
        times=table.role_values("time"),
        events=table.role_values("event"),
        treatment=table.role_values("treatment"),
        weights=table.role_values("weights"),
        feature_names=state.feature_names(),
    )


def dataset_frame(dataset):
    """
    Lay a SurvivalDataset out as a DataFrame in the CSV schema used by ``load_csv``.

    Args:
        dataset (SurvivalDataset): Dataset to export.

    Returns:
        pandas.DataFrame: Columns ``time``, ``event``, optional ``treatment``, then features.
    """
    frame = pd.DataFrame({"time": dataset.times, "event": dataset.events.astype(int)})
    if dataset.treatment is not None:
        frame["treatment"] = dataset.treatment.astype(int)
    for j, name in enumerate(dataset.feature_names):
        frame[name] = dataset.features[:, j]
    return frame
