"""
Kaplan-Meier and Nelson-Aalen estimators and the censoring distribution G.

At tied times deaths are processed before censorings: a row censored at t is still
in the risk set of deaths at t, and in the censoring estimator deaths at t leave
the risk set before the censorings at t are counted.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ValidationError
from .utils import write_frame_csv

logger = logging.getLogger(__name__)

SURVIVAL = "survival"
CUMULATIVE_HAZARD = "cumulative_hazard"


@dataclass(frozen=True)
class StepCurve:
    """
    Right-continuous piecewise-constant curve.

    The value on [0, jump_times[0]) is ``initial_value``; from jump_times[j] on it
    is values[j].
    """
    jump_times: np.ndarray
    values: np.ndarray
    initial_value: float
    kind: str = SURVIVAL

    def __post_init__(self):
        object.__setattr__(self, "jump_times", np.asarray(self.jump_times, dtype=float).reshape(-1))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        if self.jump_times.shape != self.values.shape:
            raise ValueError("jump_times and values must have the same length")
        if self.jump_times.size and (np.any(np.diff(self.jump_times) <= 0) or self.jump_times[0] <= 0):
            raise ValueError("jump_times must be positive and strictly increasing")

    def __call__(self, t):
        return curve_eval(self, t)

    def to_dict(self):
        return {"kind": self.kind, "initial_value": self.initial_value,
                "jump_times": self.jump_times, "values": self.values}

    @classmethod
    def from_dict(cls, payload):
        return cls(np.asarray(payload["jump_times"], dtype=float), np.asarray(payload["values"], dtype=float),
                   float(payload["initial_value"]), payload.get("kind", SURVIVAL))


def curve_eval(curve, t):
    """Value of the curve at t (value of the last jump <= t)."""
    t = np.asarray(t, dtype=float)
    index = np.searchsorted(curve.jump_times, t, side="right") - 1
    padded = np.concatenate([[curve.initial_value], curve.values])
    out = padded[index + 1]
    return float(out) if out.ndim == 0 else out


def curve_eval_left(curve, t):
    """Left limit of the curve at t (value of the last jump < t)."""
    t = np.asarray(t, dtype=float)
    index = np.searchsorted(curve.jump_times, t, side="left") - 1
    padded = np.concatenate([[curve.initial_value], curve.values])
    out = padded[index + 1]
    return float(out) if out.ndim == 0 else out


def _prepare(times, events, weights):
    times = np.asarray(times, dtype=float).reshape(-1)
    events = np.asarray(events, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValidationError("At least one observation is required")
    if np.any(~(times > 0)):
        raise ValidationError("times must be > 0", row=int(np.flatnonzero(~(times > 0))[0]))
    if times.shape != events.shape:
        raise ValidationError("times and events must have the same length")
    weights = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape != times.shape or np.any(weights < 0):
        raise ValidationError("weights must be non-negative with one entry per row")
    if not np.any(weights > 0):
        raise ValidationError("All weights are zero")
    return times, events, weights


def hazard_table(times, events, weights=None, risk_weights=None):
    """
    Weighted event table at the distinct event times.

    Args:
        times (ndarray): Observed times.
        events (ndarray): Event indicators.
        weights (ndarray): Weights counting deaths (ones when None).
        risk_weights (ndarray): Weights summed over risk sets (``weights`` when None);
            the Breslow estimator passes weights * exp(risk score) here.

    Returns:
        tuple: (event_times, deaths, at_risk) at every distinct time with positive deaths.
    """
    times, events, weights = _prepare(times, events, weights)
    risk_weights = weights if risk_weights is None else np.asarray(risk_weights, dtype=float).reshape(-1)
    unique_times, inverse = np.unique(times, return_inverse=True)
    deaths = np.bincount(inverse, weights=weights * events, minlength=unique_times.size)
    entering = np.bincount(inverse, weights=risk_weights, minlength=unique_times.size)
    at_risk = np.cumsum(entering[::-1])[::-1]
    keep = deaths > 0
    return unique_times[keep], deaths[keep], at_risk[keep]


def kaplan_meier(times, events, weights=None):
    """
    Product-limit survival estimate.

    Args:
        times (ndarray): Observed times (> 0).
        events (ndarray): Event indicators.
        weights (ndarray): Optional sample weights; risk sets and deaths become weight sums.

    Returns:
        StepCurve: Survival curve starting at 1.
    """
    event_times, deaths, at_risk = hazard_table(times, events, weights)
    values = np.cumprod(1.0 - deaths / at_risk)
    return StepCurve(event_times, np.clip(values, 0.0, 1.0), 1.0, SURVIVAL)


def nelson_aalen(times, events, weights=None):
    """
    Nelson-Aalen cumulative hazard, H(t) = sum over event times <= t of d_j / n_j.

    Returns:
        StepCurve: Cumulative hazard starting at 0.
    """
    event_times, deaths, at_risk = hazard_table(times, events, weights)
    return StepCurve(event_times, np.cumsum(deaths / at_risk), 0.0, CUMULATIVE_HAZARD)


def censoring_km(times, events, weights=None):
    """
    Kaplan-Meier estimate G of the censoring distribution.

    Censorings are the events; deaths at a tied time leave the risk set first.

    Returns:
        StepCurve: Censoring survival curve starting at 1.
    """
    times, events, weights = _prepare(times, events, weights)
    unique_times, inverse = np.unique(times, return_inverse=True)
    censored = np.bincount(inverse, weights=weights * (1 - events), minlength=unique_times.size)
    deaths = np.bincount(inverse, weights=weights * events, minlength=unique_times.size)
    entering = np.bincount(inverse, weights=weights, minlength=unique_times.size)
    at_risk = np.cumsum(entering[::-1])[::-1] - deaths
    keep = censored > 0
    values = np.cumprod(1.0 - censored[keep] / at_risk[keep])
    return StepCurve(unique_times[keep], np.clip(values, 0.0, 1.0), 1.0, SURVIVAL)


def curve_frame(curves):
    """
    Long-format table of named curves with an initial row at time 0.

    Args:
        curves (dict): name -> StepCurve.

    Returns:
        pandas.DataFrame: Columns ``curve``, ``time``, ``value``.
    """
    frames = []
    for name, curve in curves.items():
        frames.append(pd.DataFrame({
            "curve": name,
            "time": np.concatenate([[0.0], curve.jump_times]),
            "value": np.concatenate([[curve.initial_value], curve.values]),
        }))
    if not frames:
        return pd.DataFrame(columns=["curve", "time", "value"])
    return pd.concat(frames, ignore_index=True)


def write_curve_csv(curves, path):
    """Write named curves to ``path`` as ``curve,time,value`` rows."""
    return write_frame_csv(path, curve_frame(curves))
