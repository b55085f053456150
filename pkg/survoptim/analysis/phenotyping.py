"""
Phenotypers: intersectional groups, covariate clustering, mixture latent groups and
Virtual Twins, plus the per-group treatment-effect report.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd

from ..common.data import Outcomes, RawTable
from ..common.errors import SurvoptimError, ValidationError
from ..common.numerics import DEFAULT_RESTARTS, cluster_distances, gmm_fit, kmeans, pca_fit, pca_transform
from ..common.utils import derive_seed, write_frame_csv, write_json
from ..models.coxph import cox_rmst, counterfactual_fit, MIN_ARM_EVENTS
from ..models.forests import regforest_fit, regforest_tree_predictions
from .treatment import treatment_effect

logger = logging.getLogger(__name__)

MEMBERSHIP_MODES = ("inverse_distance", "literal")
CLUSTERERS = ("kmeans", "gmm")
DISTANCE_FLOOR = 1e-12
STOCHASTIC_TOLERANCE = 1e-9


@dataclass
class PhenotypeAssignment:
    """
    Row-stochastic group probabilities with argmax labels (ties to the lowest index).

    ``scores`` carries a per-row quantity behind the assignment when there is one
    (the estimated RMST difference for Virtual Twins).
    """
    probabilities: np.ndarray
    descriptors: List[str]
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.probabilities.ndim != 2 or self.probabilities.shape[1] != len(self.descriptors):
            raise ValidationError("Need one probability column per group descriptor")
        if np.any(self.probabilities < 0) or np.any(
                np.abs(self.probabilities.sum(axis=1) - 1.0) > STOCHASTIC_TOLERANCE):
            raise ValidationError("Phenotype probabilities must be non-negative rows summing to 1")

    @property
    def labels(self):
        return np.argmax(self.probabilities, axis=1)

    @property
    def K(self):
        return self.probabilities.shape[1]


def _one_hot(codes, K):
    probabilities = np.zeros((codes.size, K))
    probabilities[np.arange(codes.size), codes] = 1.0
    return probabilities


def _table_column(table, name):
    """Return (values, missing) of a column of a RawTable or DataFrame."""
    if isinstance(table, RawTable):
        column = table.column(name)
        return column.values, column.missing
    if name not in table.columns:
        raise ValidationError(f"Column '{name}' not found", column=name)
    values = table[name].to_numpy()
    return values, pd.isna(table[name]).to_numpy()


def _quantile_label(q):
    return f"q{100 * q:g}"


def intersectional_phenotype(table, cat_vars=(), num_vars=(), quantiles=(0, .5, 1.0)):
    """
    Groups from every combination of categorical levels and numeric quantile bins.

    Numeric bins are [q_i, q_{i+1}) with the last bin closed at the maximum. Combinations
    that no row falls in are not reported.

    Args:
        table (RawTable or pandas.DataFrame): Raw covariates.
        cat_vars (list): Categorical columns.
        num_vars (list): Numeric columns to bin.
        quantiles (tuple): Increasing quantile levels, starting at 0 and ending at 1.

    Returns:
        PhenotypeAssignment: One-hot assignment.
    """
    quantiles = np.asarray(quantiles, dtype=float)
    if quantiles.size < 2 or np.any(np.diff(quantiles) <= 0) or quantiles[0] < 0 or quantiles[-1] > 1:
        raise ValueError("quantiles must increase within [0, 1]")
    if not cat_vars and not num_vars:
        raise ValueError("At least one variable is required")
    keys, parts = [], []
    for name in cat_vars:
        values, missing = _table_column(table, name)
        levels = np.array(["missing" if m else str(v) for v, m in zip(values, missing)], dtype=object)
        keys.append(levels)
        parts.append(lambda level, name=name: f"{name}={level}")
    for name in num_vars:
        values, missing = _table_column(table, name)
        values = np.asarray(values, dtype=float)
        if np.any(missing):
            raise ValidationError(f"Numeric column '{name}' has missing values", column=name)
        edges = np.quantile(values, quantiles)
        bins = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, quantiles.size - 2)
        keys.append(bins)
        labels = [f"{name}∈[{_quantile_label(quantiles[j])},{_quantile_label(quantiles[j + 1])}"
                  + ("]" if j == quantiles.size - 2 else ")") for j in range(quantiles.size - 1)]
        parts.append(lambda b, labels=labels: labels[int(b)])

    rows = list(zip(*keys))
    groups = sorted(set(rows), key=lambda key: tuple((str(k) if isinstance(k, str) else int(k)) for k in key))
    lookup = {key: g for g, key in enumerate(groups)}
    codes = np.array([lookup[key] for key in rows])
    descriptors = [" & ".join(part(k) for part, k in zip(parts, key)) for key in groups]
    logger.info("Intersectional phenotyping: %d non-empty groups", len(groups))
    return PhenotypeAssignment(_one_hot(codes, len(groups)), descriptors)


def fit_clustering_phenotyper(X, K, clusterer="kmeans", n_components=None, seed=0, restarts=DEFAULT_RESTARTS,
                              n_jobs=1):
    """
    Fit the clustering behind an unsupervised phenotyper.

    Args:
        X (ndarray): n x d covariates.
        K (int): Number of clusters.
        clusterer (str): ``kmeans`` or ``gmm``.
        n_components (int): PCA dimension, None to cluster the raw covariates.
        seed (int): Seed of the k-means restarts.
        restarts (int): k-means restarts.
        n_jobs (int): joblib workers.

    Returns:
        ClusteringState: Fitted clustering (``pca`` set when reduced).
    """
    if clusterer not in CLUSTERERS:
        raise ValueError(f"Unknown clusterer '{clusterer}', expected one of {CLUSTERERS}")
    X = np.asarray(X, dtype=float)
    pca = pca_fit(X, n_components) if n_components else None
    Z = pca_transform(pca, X) if pca is not None else X
    if clusterer == "kmeans":
        state = kmeans(Z, K, seed=seed, restarts=restarts, n_jobs=n_jobs)
    else:
        state = gmm_fit(Z, K, seed=seed, restarts=restarts, n_jobs=n_jobs)
    state.pca = pca
    return state


def clustering_membership(state, X, membership="inverse_distance"):
    """
    Cluster membership probabilities from centre distances.

    ``inverse_distance``: (1/d_k) / sum_j (1/d_j) with d floored at 1e-12.
    ``literal``: d_k / sum_j d_j, which puts more mass on farther clusters.

    Returns:
        PhenotypeAssignment: Soft assignment with ``cluster k`` descriptors.
    """
    if membership not in MEMBERSHIP_MODES:
        raise ValueError(f"Unknown membership '{membership}', expected one of {MEMBERSHIP_MODES}")
    X = np.asarray(X, dtype=float)
    Z = pca_transform(state.pca, X) if state.pca is not None else X
    distances = cluster_distances(state, Z)
    K = distances.shape[1]
    if membership == "inverse_distance":
        inverse = 1.0 / np.maximum(distances, DISTANCE_FLOOR)
        probabilities = inverse / inverse.sum(axis=1, keepdims=True)
    else:
        totals = distances.sum(axis=1, keepdims=True)
        probabilities = np.where(totals > 0, distances / np.where(totals > 0, totals, 1.0), 1.0 / K)
    return PhenotypeAssignment(probabilities, [f"cluster {k}" for k in range(K)])


def clustering_phenotype(X, K, clusterer="kmeans", n_components=None, membership="inverse_distance", seed=0,
                         restarts=DEFAULT_RESTARTS, n_jobs=1):
    """Unsupervised phenotypes: optional PCA, then k-means or GMM, then distance membership."""
    state = fit_clustering_phenotyper(X, K, clusterer, n_components, seed, restarts, n_jobs)
    return clustering_membership(state, X, membership)


def supervised_phenotype(model, X, latent="z"):
    """
    Phenotypes from a fitted mixture's covariate-only latent distribution.

    Args:
        model: DSMModel, DCMModel or CMHEModel.
        X (ndarray): Covariates.
        latent (str): ``z`` for base groups, ``phi`` for CMHE effect groups.

    Returns:
        PhenotypeAssignment: The model's latent probabilities.
    """
    if latent == "phi":
        probabilities = model.predict_latent_phi(X)
    else:
        probabilities = model.predict_latent_z(X)
    return PhenotypeAssignment(probabilities, [f"phenotype {k}" for k in range(probabilities.shape[1])])


def virtual_twins(dataset, horizon, cox_options=None, forest_options=None, seed=0, min_events=MIN_ARM_EVENTS,
                  n_jobs=1):
    """
    Virtual Twins benefit phenotypes.

    Fits one Cox model per arm, computes every row's RMST difference
    Delta_i = RMST_tau(treated | x_i) - RMST_tau(control | x_i), regresses Delta on x with a
    regression forest and scores each row by the fraction of trees predicting Delta > 0
    (a tree predicting exactly 0 counts one half). Label 1 (benefit) iff that fraction > 0.5.

    Args:
        dataset (SurvivalDataset): Data with a treatment column.
        horizon (float): RMST horizon tau.
        cox_options (dict): Keyword arguments of the per-arm Cox fits.
        forest_options (dict): Keyword arguments of :func:`regforest_fit`.
        seed (int): Seed of the forest.
        min_events (int): Minimum events per arm.
        n_jobs (int): joblib workers.

    Returns:
        PhenotypeAssignment: Columns [no benefit, benefit]; ``scores`` holds Delta.
    """
    cox_options = dict(cox_options or {})
    cox_options.setdefault("seed", seed)
    pair = counterfactual_fit(dataset, cox_options, cox_options, min_events=min_events, n_jobs=n_jobs)
    X = dataset.features
    delta = cox_rmst(pair.arm_model(1), X, horizon) - cox_rmst(pair.arm_model(0), X, horizon)
    forest = regforest_fit(X, delta, seed=seed, n_jobs=n_jobs, **(forest_options or {}))
    per_tree = regforest_tree_predictions(forest, X)
    votes = (per_tree > 0) + 0.5 * (per_tree == 0)
    benefit = votes.mean(axis=0)
    logger.info("Virtual twins: mean RMST difference %.6g, %d of %d rows labelled benefit",
                delta.mean(), int(np.sum(benefit > 0.5)), X.shape[0])
    return PhenotypeAssignment(np.column_stack([1.0 - benefit, benefit]), ["no benefit", "benefit"], delta)


def phenotype_effect_report(assignment, dataset, metric="restricted_mean", horizon=None, level=None,
                            n_bootstrap=200, seed=0, alpha=None, propensity=None, n_jobs=1):
    """
    Per-group mass and within-group treatment effect of a phenotype assignment.

    Args:
        assignment (PhenotypeAssignment): Groups to report on.
        dataset (SurvivalDataset): Data with a treatment column.
        metric (str): Effect metric of :func:`treatment_effect`.
        horizon, level (float): Metric settings.
        n_bootstrap (int): Replicates per group.
        seed (int): Group g bootstraps with seed derived from (seed, g).
        alpha (float): Minimum group mass to flag, None for no flag.
        propensity (ndarray): Optional propensity scores.
        n_jobs (int): joblib workers.

    Returns:
        list: One record per group.
    """
    if dataset.treatment is None:
        raise ValidationError("The effect report needs a treatment column")
    labels = assignment.labels
    records = []
    for g, descriptor in enumerate(assignment.descriptors):
        rows = labels == g
        record = {"group": g, "descriptor": descriptor, "size": int(rows.sum()), "mass": float(rows.mean())}
        if alpha is not None:
            record["meets_size"] = bool(record["mass"] >= alpha)
        if rows.any():
            try:
                estimate = treatment_effect(metric, Outcomes(dataset.times[rows], dataset.events[rows]),
                                            dataset.treatment[rows],
                                            None if propensity is None else np.asarray(propensity)[rows],
                                            horizon, level, n_bootstrap, derive_seed(seed, g), n_jobs=n_jobs)
                record["effect"] = {"point": estimate.point, **estimate.summary}
            except SurvoptimError as exc:
                logger.warning("No effect for group %d (%s): %s", g, descriptor, exc)
                record["effect"] = None
        records.append(record)
    return records


def assignment_frame(assignment):
    frame = pd.DataFrame({"row": np.arange(assignment.probabilities.shape[0]), "label": assignment.labels})
    for k in range(assignment.K):
        frame[f"prob_{k}"] = assignment.probabilities[:, k]
    return frame


def write_assignment(assignment, csv_path, json_path):
    """Write ``row,label,prob_0..`` rows to ``csv_path`` and the group descriptors to ``json_path``."""
    write_frame_csv(csv_path, assignment_frame(assignment))
    labels = assignment.labels
    groups = [{"group": k, "descriptor": d, "size": int(np.sum(labels == k))}
              for k, d in enumerate(assignment.descriptors)]
    write_json(json_path, {"groups": groups})
    return csv_path, json_path
