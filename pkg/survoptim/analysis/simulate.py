"""
Synthetic cohorts with closed-form ground truth.

Every scenario draws standard-normal covariates (shifted by ``mean_shift`` for the
covariate-shift scenario) and Weibull event times with proportional-hazards scaling

    S(t | x) = exp(-(t / scale) ** shape * exp(lp(x)))

where shape and scale may depend on a latent group and lp may carry a treatment term.
lp(x) is linear in x plus an optional quadratic term in x1.
Censoring times are exponential with a rate calibrated by bisection to the target
censored fraction.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, softmax

from ..common.data import SurvivalDataset, dataset_frame
from ..common.errors import CalibrationError
from ..common.utils import derive_seed, make_rng, write_frame_csv

logger = logging.getLogger(__name__)

SCENARIOS = ("cox_ph", "mixture_k", "hte_subgroup", "confounded_treatment", "covariate_shift")
DEFAULT_BETA = (0.5, -0.5, 0.0)
CENSORING_TOLERANCE = 0.02
BISECTION_STEPS = 200
LOG_RATE_SPAN = 25.0
TIME_FLOOR = 1e-12


@dataclass(frozen=True)
class SimSpec:
    """
    Simulation settings.

    Attributes:
        n (int): Rows.
        d (int): Covariate dimension.
        scenario (str): One of ``SCENARIOS``.
        beta (tuple): Log-hazard coefficients, padded with zeros to ``d``; DEFAULT_BETA when None.
        shape, scale (float): Weibull baseline.
        group_shapes, group_scales (tuple): Per-group baselines of ``mixture_k``.
        gating_strength (float): How strongly covariates drive the ``mixture_k`` group.
        omega (float): Log hazard ratio of treatment inside the planted subgroup.
        subgroup_feature (int): Covariate whose positive values define the subgroup.
        confounding (float): Slope of the treatment logit in covariate 0.
        treatment_effect (float): True log hazard ratio of treatment in ``confounded_treatment``.
        mean_shift (float): Covariate mean of ``covariate_shift`` cohorts.
        quadratic (float): Log-hazard coefficient of x1 ** 2, a term no linear model represents.
        censoring (float): Target censored fraction in [0, 1).
        seed (int): Seed.
    """
    n: int = 1000
    d: int = 3
    scenario: str = "cox_ph"
    beta: Optional[Tuple[float, ...]] = None
    shape: float = 1.5
    scale: float = 1.0
    group_shapes: Tuple[float, ...] = (1.5, 1.5, 1.5)
    group_scales: Tuple[float, ...] = (0.3, 1.0, 3.0)
    gating_strength: float = 0.5
    omega: float = -1.0
    subgroup_feature: int = 0
    confounding: float = 1.0
    treatment_effect: float = 0.0
    mean_shift: float = 0.0
    quadratic: float = 0.0
    censoring: float = 0.3
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"scenario must be one of {SCENARIOS}")
        if self.n < 1 or self.d < 1:
            problems.append("n and d must be positive")
        if not 0 <= self.censoring < 1:
            problems.append("censoring must be in [0, 1)")
        if self.shape <= 0 or self.scale <= 0 or min(self.group_shapes) <= 0 or min(self.group_scales) <= 0:
            problems.append("Weibull shapes and scales must be > 0")
        if len(self.group_shapes) != len(self.group_scales):
            problems.append("group_shapes and group_scales must have the same length")
        if not 0 <= self.subgroup_feature < self.d:
            problems.append("subgroup_feature must index a covariate")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def K(self):
        return len(self.group_shapes)

    def coefficients(self):
        beta = np.zeros(self.d)
        values = np.asarray(DEFAULT_BETA if self.beta is None else self.beta, dtype=float)[:self.d]
        beta[:values.size] = values
        return beta


@dataclass
class SimTruth:
    """
    Ground truth of a generated cohort.

    Row i has S(t) = exp(-(t / scale_i) ** shape_i * exp(base_lp_i + arm_effect_i * a)),
    with a the treatment received (or a counterfactual arm).
    """
    scenario: str
    shape: np.ndarray
    scale: np.ndarray
    base_lp: np.ndarray
    arm_effect: np.ndarray
    treatment: Optional[np.ndarray]
    groups: Optional[np.ndarray] = None
    propensity: Optional[np.ndarray] = None
    censoring_rate: float = 0.0
    censored_fraction: float = 0.0
    params: dict = field(default_factory=dict)

    def linear_predictor(self, treatment=None):
        arm = self.treatment if treatment is None else np.broadcast_to(np.asarray(treatment, dtype=float),
                                                                       self.base_lp.shape)
        if arm is None:
            return self.base_lp
        return self.base_lp + self.arm_effect * arm

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "groups": self.groups,
            "propensity": self.propensity,
            "censoring_rate": self.censoring_rate,
            "censored_fraction": self.censored_fraction,
            "params": self.params,
        }


def weibull_survival(t, shape, scale, lp):
    return np.exp(-(np.asarray(t, dtype=float) / scale) ** shape * np.exp(lp))


def true_survival(truth, times, treatment=None):
    """
    Closed-form S(t | x_i) for every generated row, n x m.

    Args:
        truth (SimTruth): Ground truth record.
        times (array): Evaluation times.
        treatment (int or ndarray): Counterfactual arm(s); the received arm when None.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lp = truth.linear_predictor(treatment)
    return weibull_survival(times[None, :], truth.shape[:, None], truth.scale[:, None], lp[:, None])


def _event_times(rng, shape, scale, lp):
    u = 1.0 - rng.random(lp.shape[0])
    return np.maximum(scale * (-np.log(u) / np.exp(lp)) ** (1.0 / shape), TIME_FLOOR)


def calibrate_censoring(event_times, exposures, target, tolerance=CENSORING_TOLERANCE):
    """
    Exponential censoring rate whose censored fraction is closest to ``target``.

    Censoring times are ``exposures / rate`` for fixed standard-exponential ``exposures``,
    so the censored fraction mean(exposures / rate < T) is non-decreasing in the rate and
    bisection on log(rate) applies.

    Returns:
        tuple: (rate, realised censored fraction).

    Raises:
        CalibrationError: When no rate gets within ``tolerance`` of the target.
    """
    def censored(log_rate):
        return float(np.mean(exposures / np.exp(log_rate) < event_times))

    centre = -np.log(np.median(event_times))
    lo, hi = centre - LOG_RATE_SPAN, centre + LOG_RATE_SPAN
    best = (hi, censored(hi))
    for _ in range(BISECTION_STEPS):
        middle = 0.5 * (lo + hi)
        fraction = censored(middle)
        if abs(fraction - target) < abs(best[1] - target):
            best = (middle, fraction)
        if fraction < target:
            lo = middle
        else:
            hi = middle
        if hi - lo < 1e-12:
            break
    if abs(best[1] - target) > tolerance:
        raise CalibrationError(
            f"Censoring target {target:g} is unattainable (closest censored fraction {best[1]:.4g})",
            target=float(target), closest=best[1])
    return float(np.exp(best[0])), best[1]


def generate(spec):
    """
    Generate a cohort.

    Draw order within the (seed) stream: covariates, scenario draws (group labels or
    treatment), event-time uniforms, censoring exposures.

    Returns:
        tuple: (SurvivalDataset, SimTruth).
    """
    rng = make_rng(spec.seed)
    n, d = spec.n, spec.d
    X = rng.standard_normal((n, d)) + spec.mean_shift
    beta = spec.coefficients()
    base_lp = X @ beta + spec.quadratic * X[:, 0] ** 2
    shape = np.full(n, spec.shape)
    scale = np.full(n, spec.scale)
    arm_effect = np.zeros(n)
    treatment = groups = propensity = None
    params = {"beta": beta, "quadratic": spec.quadratic, "shape": spec.shape, "scale": spec.scale}

    if spec.scenario == "mixture_k":
        gating = rng.standard_normal((d, spec.K))
        probabilities = softmax(spec.gating_strength * X @ gating, axis=1)
        cumulative = np.cumsum(probabilities, axis=1)
        groups = np.minimum((rng.random(n)[:, None] > cumulative).sum(axis=1), spec.K - 1)
        shape = np.asarray(spec.group_shapes, dtype=float)[groups]
        scale = np.asarray(spec.group_scales, dtype=float)[groups]
        params.update(gating=gating, group_shapes=spec.group_shapes, group_scales=spec.group_scales)
    elif spec.scenario == "hte_subgroup":
        propensity = np.full(n, 0.5)
        treatment = (rng.random(n) < propensity).astype(float)
        groups = (X[:, spec.subgroup_feature] > 0).astype(int)
        arm_effect = spec.omega * groups
        params.update(omega=spec.omega, subgroup_feature=spec.subgroup_feature)
    elif spec.scenario == "confounded_treatment":
        propensity = expit(spec.confounding * X[:, 0])
        treatment = (rng.random(n) < propensity).astype(float)
        arm_effect = np.full(n, spec.treatment_effect)
        params.update(confounding=spec.confounding, treatment_effect=spec.treatment_effect)
    elif spec.scenario == "covariate_shift":
        params.update(mean_shift=spec.mean_shift)

    truth = SimTruth(spec.scenario, shape, scale, base_lp, arm_effect, treatment, groups, propensity, params=params)
    latent = _event_times(rng, shape, scale, truth.linear_predictor())
    exposures = rng.standard_exponential(n)
    if spec.censoring == 0:
        observed, events = latent, np.ones(n)
    else:
        rate, _ = calibrate_censoring(latent, exposures, spec.censoring)
        censor_times = np.maximum(exposures / rate, TIME_FLOOR)
        events = (latent < censor_times).astype(float)
        observed = np.minimum(latent, censor_times)
        truth.censoring_rate = rate
    truth.censored_fraction = float(1.0 - events.mean())
    logger.info("Generated %s cohort: n=%d, censored fraction %.4f", spec.scenario, n, truth.censored_fraction)
    dataset = SurvivalDataset(X, observed, events, treatment=treatment,
                              feature_names=[f"x{j + 1}" for j in range(d)])
    return dataset, truth


def generate_domains(spec):
    """
    Source and target cohorts sharing P(T | X): the source has covariate mean 0, the
    target ``spec.mean_shift``. Seeds are derived from (spec.seed, 0) and (spec.seed, 1).
    """
    source = generate(replace(spec, mean_shift=0.0, seed=derive_seed(spec.seed, 0)))
    target = generate(replace(spec, seed=derive_seed(spec.seed, 1)))
    return source, target


def save_cohort_csv(dataset, path, truth=None):
    """Write a cohort in the ``time,event[,treatment],x1..`` CSV layout, with true groups when known."""
    frame = dataset_frame(dataset)
    if truth is not None and truth.groups is not None:
        frame["true_group"] = truth.groups
    return write_frame_csv(path, frame)
