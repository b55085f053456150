"""
Treatment-arm comparisons and the IPTW-weighted bootstrap.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq
from scipy.special import expit

from ..common.data import Outcomes
from ..common.errors import ConvergenceError, FitError, ValidationError
from ..common.nonparam import curve_eval, kaplan_meier
from ..common.utils import make_rng

logger = logging.getLogger(__name__)

BEYOND_FOLLOW_UP = math.inf
TREATMENT_METRICS = ("hazard_ratio", "restricted_mean", "risk_at_time", "time_at_risk")
PROPENSITY_CLIP = (0.01, 0.99)
MAX_REDRAWS = 100
HAZARD_RATIO_TOLERANCE = 1e-12
HAZARD_RATIO_BRACKETS = 64


def rmst(curve, tau):
    """Exact area under a survival step curve on [0, tau]."""
    tau = float(tau)
    if tau <= 0:
        return 0.0
    jumps = curve.jump_times[curve.jump_times < tau]
    knots = np.concatenate([[0.0], jumps, [tau]])
    values = np.atleast_1d(curve_eval(curve, knots[:-1]))
    return float(np.dot(np.diff(knots), values))


def risk_at_time(curve, t):
    return 1.0 - curve_eval(curve, t)


def tar(curve, alpha):
    """
    Time at risk: the first time the survival curve is <= alpha.

    Returns ``BEYOND_FOLLOW_UP`` (infinity) when the curve never gets there.
    """
    if curve.initial_value <= alpha:
        return 0.0
    reached = np.flatnonzero(curve.values <= alpha)
    if reached.size == 0:
        return BEYOND_FOLLOW_UP
    return float(curve.jump_times[reached[0]])


def _arm_risk_table(times, events, treatment, weights):
    """Per distinct event time: weighted deaths, treated deaths and arm risk-set masses."""
    unique, inverse = np.unique(times, return_inverse=True)
    deaths = np.bincount(inverse, weights=events * weights, minlength=unique.size)
    treated_deaths = np.bincount(inverse, weights=events * weights * treatment, minlength=unique.size)
    at_time_1 = np.bincount(inverse, weights=weights * treatment, minlength=unique.size)
    at_time_0 = np.bincount(inverse, weights=weights * (1.0 - treatment), minlength=unique.size)
    risk_1 = np.cumsum(at_time_1[::-1])[::-1]
    risk_0 = np.cumsum(at_time_0[::-1])[::-1]
    keep = deaths > 0
    return deaths[keep], treated_deaths[keep], risk_0[keep], risk_1[keep]


def hazard_ratio(outcomes, treatment, weights=None):
    """
    exp(beta) of a univariate Cox model on the treatment indicator.

    The weighted Breslow score of a 0/1 covariate depends on the data only through
    per-time death and risk-set masses of each arm, so beta is the root of a monotone
    one-dimensional function.

    Args:
        outcomes (Outcomes): Times and events.
        treatment (ndarray): 0/1 arm indicator.
        weights (ndarray): Optional sample weights (IPTW).

    Returns:
        float: Hazard ratio of treated vs control.

    Raises:
        FitError: No events.
        ConvergenceError: The arms are separated and the estimate is infinite.
    """
    times = np.asarray(outcomes.times, dtype=float)
    events = np.asarray(outcomes.events, dtype=float)
    treatment = np.asarray(treatment, dtype=float).reshape(-1)
    weights = np.ones(times.size) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    deaths, treated_deaths, risk_0, risk_1 = _arm_risk_table(times, events, treatment, weights)
    if deaths.size == 0:
        raise FitError("No events with positive weight")
    observed = treated_deaths.sum()
    if not deaths[risk_0 == 0].sum() < observed < deaths[risk_1 > 0].sum():
        raise ConvergenceError("Treatment separates the outcomes; the hazard ratio is not finite")
    with np.errstate(divide="ignore"):
        log_odds = np.log(risk_1) - np.log(risk_0)

    def score(beta):
        return observed - np.dot(deaths, expit(beta + log_odds))

    lo, hi = -1.0, 1.0
    for _ in range(HAZARD_RATIO_BRACKETS):
        if score(lo) > 0 and score(hi) < 0:
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    beta = brentq(score, lo, hi, xtol=HAZARD_RATIO_TOLERANCE)
    return float(np.exp(beta))


def _arm_effect(metric, times, events, treatment, weights, horizon, level):
    if metric == "hazard_ratio":
        return hazard_ratio(Outcomes(times, events), treatment, weights)
    values = []
    for arm in (1, 0):
        rows = treatment == arm
        curve = kaplan_meier(times[rows], events[rows], None if weights is None else weights[rows])
        if metric == "restricted_mean":
            values.append(rmst(curve, horizon))
        elif metric == "risk_at_time":
            values.append(risk_at_time(curve, horizon))
        else:
            values.append(tar(curve, level))
    if math.isinf(values[0]) or math.isinf(values[1]):
        return math.nan
    return values[0] - values[1]


def summarize(replicates):
    """
    Summary of a replicate vector: mean, sample SD (ddof=1), 2.5% and 97.5% percentiles
    (linear interpolation), all ignoring NaN replicates.
    """
    replicates = np.asarray(replicates, dtype=float)
    valid = replicates[~np.isnan(replicates)]
    if valid.size == 0:
        return {"mean": math.nan, "sd": math.nan, "lower": math.nan, "upper": math.nan, "n_valid": 0}
    return {
        "mean": float(np.mean(valid)),
        "sd": float(np.std(valid, ddof=1)) if valid.size > 1 else math.nan,
        "lower": float(np.percentile(valid, 2.5)),
        "upper": float(np.percentile(valid, 97.5)),
        "n_valid": int(valid.size),
    }


@dataclass
class EffectEstimate:
    metric: str
    point: float
    replicates: np.ndarray
    summary: dict
    seed: int
    adjusted: bool = False
    horizon: Optional[float] = None
    level: Optional[float] = None

    def to_dict(self):
        return {
            "metric": self.metric,
            "adjusted": self.adjusted,
            "point": self.point,
            "summary": self.summary,
            "seed": self.seed,
            "horizon": self.horizon,
            "level": self.level,
            "n_bootstrap": int(self.replicates.size),
            "replicates": self.replicates,
        }


def iptw_weights(treatment, propensity, clip=PROPENSITY_CLIP):
    """1/e(x) for treated rows and 1/(1 - e(x)) for control rows, e clipped to ``clip``."""
    e = np.clip(np.asarray(propensity, dtype=float).reshape(-1), clip[0], clip[1])
    treatment = np.asarray(treatment, dtype=float).reshape(-1)
    return treatment / e + (1.0 - treatment) / (1.0 - e)


def _draw(n, probabilities, treatment, seed, replicate, max_redraws):
    rng = make_rng(seed, replicate)
    for attempt in range(max_redraws + 1):
        if attempt:
            rng = make_rng(seed, replicate, attempt)
        index = rng.choice(n, size=n, replace=True, p=probabilities)
        arms = treatment[index]
        if arms.any() and not arms.all():
            return index
    raise ValidationError(f"Bootstrap replicate {replicate} kept drawing a single arm", replicate=replicate)


def _replicate(metric, times, events, treatment, probabilities, horizon, level, seed, replicate, max_redraws):
    index = _draw(times.size, probabilities, treatment, seed, replicate, max_redraws)
    try:
        return _arm_effect(metric, times[index], events[index], treatment[index], None, horizon, level)
    except (ConvergenceError, FitError) as exc:
        logger.debug("Replicate %d has no finite effect: %s", replicate, exc)
        return math.nan


def treatment_effect(metric, outcomes, treatment, propensity=None, horizon=None, level=None, n_bootstrap=500,
                     seed=0, clip=PROPENSITY_CLIP, max_redraws=MAX_REDRAWS, n_jobs=1):
    """
    Bootstrap estimate of a treated-vs-control effect.

    Each replicate resamples n rows with replacement with probability proportional to
    1/e(x) for treated rows and 1/(1 - e(x)) for control rows (uniform without a
    propensity) and computes the metric from arm-wise Kaplan-Meier curves (a univariate
    Cox model for the hazard ratio). Replicate r draws from substream (seed, r); a draw
    with an empty arm is redrawn from (seed, r, attempt).

    Args:
        metric (str): ``hazard_ratio``, ``restricted_mean``, ``risk_at_time`` or ``time_at_risk``.
        outcomes (Outcomes): Times and events.
        treatment (ndarray): 0/1 arm indicator.
        propensity (ndarray): P(A=1 | x) per row, or None.
        horizon (float): Horizon for ``restricted_mean`` and ``risk_at_time``.
        level (float): Survival level for ``time_at_risk``.
        n_bootstrap (int): Number of replicates.
        seed (int): Seed.
        clip (tuple): Propensity clipping bounds.
        max_redraws (int): Redraws allowed per replicate.
        n_jobs (int): joblib workers.

    Returns:
        EffectEstimate: Point estimate (IPTW-weighted when a propensity is given), replicates
        and their summary. Effects are treated - control, or the ratio for the hazard ratio.
    """
    if metric not in TREATMENT_METRICS:
        raise ValueError(f"Unknown metric '{metric}', expected one of {TREATMENT_METRICS}")
    if metric in ("restricted_mean", "risk_at_time") and horizon is None:
        raise ValueError(f"{metric} needs a horizon")
    if metric == "time_at_risk" and level is None:
        raise ValueError("time_at_risk needs a level")
    times = np.asarray(outcomes.times, dtype=float).reshape(-1)
    events = np.asarray(outcomes.events, dtype=float).reshape(-1)
    treatment = np.asarray(treatment, dtype=float).reshape(-1)
    if treatment.all() or not treatment.any():
        raise ValidationError("Both treatment arms must be present")
    weights = None if propensity is None else iptw_weights(treatment, propensity, clip)
    sampling = np.ones_like(times) if weights is None else weights
    probabilities = sampling / sampling.sum()

    point = _arm_effect(metric, times, events, treatment, weights, horizon, level)
    replicates = np.array(Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(metric, times, events, treatment, probabilities, horizon, level, seed, r, max_redraws)
        for r in range(n_bootstrap)))
    summary = summarize(replicates)
    logger.info("%s effect (%s): point=%.6g mean=%.6g [%.6g, %.6g]", metric,
                "adjusted" if weights is not None else "unadjusted", point, summary["mean"],
                summary["lower"], summary["upper"])
    return EffectEstimate(metric, float(point), replicates, summary, int(seed), weights is not None, horizon, level)
