"""The nine-method estimation registry for one cohort.

Hazard-ratio methods: unadjusted Cox, propensity-matched Cox, overlap-
weighted Cox, standard-IPW Cox (the overlap-targeting ablation arm).
RMST methods: unadjusted KM, matched KM, overlap-weighted KM, AFT
regression, and the augmented-IPW doubly robust estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .propensity import (
    DEFAULT_CALIPER,
    DEFAULT_RIDGE,
    STANDARD_WEIGHT_CAP,
    compute_weights,
    fit_logistic,
    match_pairs,
)
from .survival import aft_fit, cox_fit, event_time_horizon, km_curve, rmst

SCALE_LOG_HR = "log_hazard_ratio"
SCALE_RMST_DAYS = "rmst_difference_days"

METHOD_REGISTRY = (
    "cox_unadjusted",
    "cox_psm",
    "cox_ipw_overlap",
    "cox_ipw_standard",
    "rmst_km_unadjusted",
    "rmst_km_psm",
    "rmst_km_ipw_overlap",
    "rmst_aft_regression",
    "rmst_aipw",
)

# IPCW weights are truncated here when the censoring KM hits zero early.
G_WEIGHT_CAP = 100.0


@dataclass
class EffectEstimate:
    method_id: str
    scale: str
    point: float
    std_error: float
    converged: bool
    n_used: int
    note: str = ""


@dataclass
class RunSettings:
    seed: int = 0
    ridge: float = DEFAULT_RIDGE
    caliper_sd_logit: float = DEFAULT_CALIPER
    weight_cap: float = STANDARD_WEIGHT_CAP
    tau_percentile: float = 0.8
    methods: tuple[str, ...] = field(default_factory=lambda: METHOD_REGISTRY)


def _failed(method_id, scale, n, note):
    return EffectEstimate(method_id=method_id, scale=scale, point=math.nan,
                          std_error=math.nan, converged=False, n_used=n, note=note)


def _cox_estimate(method_id, times, events, treated, weights=None) -> EffectEstimate:
    res = cox_fit(times, events, treated, weights)
    se = res.se_robust if weights is not None else res.se_model
    point = res.beta if res.converged else math.nan
    return EffectEstimate(method_id=method_id, scale=SCALE_LOG_HR, point=point,
                          std_error=se, converged=res.converged, n_used=res.n_used)


def _km_rmst_arm(times, events, weights, tau):
    curve = km_curve(times, events, weights)
    value = rmst(curve, tau)
    # Greenwood-style RMST variance; with non-unit weights this uses the
    # weighted counts and is approximate.
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(t, kind="stable")
    t, d, w = t[order], d[order], w[order]
    at_risk_after = np.cumsum(w[::-1])[::-1]
    ev_times, inverse = np.unique(t[d], return_inverse=True)
    if len(ev_times) == 0:
        return value, 0.0
    dw = np.bincount(inverse, weights=w[d], minlength=len(ev_times))
    yw = at_risk_after[np.searchsorted(t, ev_times, side="left")]
    # integral of S over [event time, tau] via prefix integrals of the curve
    knots = np.concatenate([[0.0], curve.times])
    vals = np.concatenate([[1.0], curve.survival])
    prefix = np.concatenate([[0.0], np.cumsum(vals[:-1] * np.diff(knots))])
    cum_tau = value

    def cumint(pts):
        idx = np.searchsorted(knots, pts, side="right") - 1
        return prefix[idx] + vals[idx] * (pts - knots[idx])

    in_range = ev_times <= tau
    areas = np.zeros(len(ev_times))
    areas[in_range] = cum_tau - cumint(ev_times[in_range])
    safe = (yw - dw > 0) & in_range
    var = float(np.sum(areas[safe] ** 2 * dw[safe] / (yw[safe] * (yw[safe] - dw[safe]))))
    return value, var


def _km_diff_estimate(method_id, times, events, treated, tau, weights=None) -> EffectEstimate:
    treated = np.asarray(treated, dtype=bool)
    wa = None if weights is None else np.asarray(weights)[treated]
    wb = None if weights is None else np.asarray(weights)[~treated]
    ra, va = _km_rmst_arm(np.asarray(times)[treated], np.asarray(events)[treated], wa, tau)
    rb, vb = _km_rmst_arm(np.asarray(times)[~treated], np.asarray(events)[~treated], wb, tau)
    return EffectEstimate(method_id=method_id, scale=SCALE_RMST_DAYS, point=ra - rb,
                          std_error=math.sqrt(va + vb), converged=True, n_used=len(times))


def rmst_regression(aft_model, features, tau: float,
                    method_id: str = "rmst_aft_regression") -> EffectEstimate:
    """Mean predicted RMST contrast over all patients at horizon tau."""
    n = len(np.atleast_2d(features))
    if not aft_model.converged:
        return _failed(method_id, SCALE_RMST_DAYS, n, "AFT did not converge")
    ones = np.ones(n)
    diff = aft_model.predicted_rmst(features, ones, tau) - aft_model.predicted_rmst(
        features, np.zeros(n), tau
    )
    return EffectEstimate(method_id=method_id, scale=SCALE_RMST_DAYS,
                          point=float(np.mean(diff)),
                          std_error=float(np.std(diff) / math.sqrt(n)),
                          converged=True, n_used=n)


def rmst_aipw(times, events, treated, features, propensity, aft_model, tau: float,
              method_id: str = "rmst_aipw") -> EffectEstimate:
    """Augmented IPW on the tau-restricted outcome with IPCW for censoring.

    Z = min(T, tau); the correction term is applied only to rows whose Z
    is fully observed (event before tau, or follow-up reaching tau) and
    reweighted by the Kaplan-Meier estimate of the censoring survival at
    Z-minus.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    trt = np.asarray(treated, dtype=bool)
    n = len(t)
    if not aft_model.converged:
        return _failed(method_id, SCALE_RMST_DAYS, n, "AFT did not converge")

    e = np.asarray(propensity.scores, dtype=float)
    m1 = aft_model.predicted_rmst(features, np.ones(n), tau)
    m0 = aft_model.predicted_rmst(features, np.zeros(n), tau)

    z = np.minimum(t, tau)
    observed = (d & (t < tau)) | (t >= tau)
    g_curve = km_curve(t, ~d)
    g_at = g_curve.left_limit(z)
    capped = g_at < 1.0 / G_WEIGHT_CAP
    inv_g = 1.0 / np.maximum(g_at, 1.0 / G_WEIGHT_CAP)

    correction = observed * inv_g * (
        trt / e * (z - m1) - (~trt) / (1.0 - e) * (z - m0)
    )
    contrib = (m1 - m0) + correction
    note = "IPCW weight capped" if bool(capped[observed].any()) else ""
    return EffectEstimate(method_id=method_id, scale=SCALE_RMST_DAYS,
                          point=float(np.mean(contrib)),
                          std_error=float(np.std(contrib) / math.sqrt(n)),
                          converged=True, n_used=n, note=note)


def run_all_methods(cohort, settings: RunSettings | None = None) -> list[EffectEstimate]:
    """Run the method registry on one cohort; failures never abort the batch."""
    settings = settings or RunSettings()
    times, events, treated = cohort.time, cohort.event, cohort.treated
    features = cohort.features
    n = len(times)
    wanted = [m for m in METHOD_REGISTRY if m in settings.methods]
    out: list[EffectEstimate] = []

    try:
        tau = event_time_horizon(times, events, settings.tau_percentile)
    except ValueError:
        return [_failed(m, SCALE_LOG_HR if m.startswith("cox") else SCALE_RMST_DAYS,
                        n, "no observed events") for m in wanted]

    propensity = None
    matched = None

    def get_propensity():
        nonlocal propensity
        if propensity is None:
            propensity = fit_logistic(features, treated, ridge=settings.ridge)
        return propensity

    def get_matched():
        nonlocal matched
        if matched is None:
            fit = get_propensity()
            pairs = match_pairs(fit.scores, treated,
                                caliper_sd_logit=settings.caliper_sd_logit,
                                seed=settings.seed)
            matched = np.array(sorted({i for pair in pairs for i in pair}), dtype=int)
        return matched

    for method_id in wanted:
        scale = SCALE_LOG_HR if method_id.startswith("cox") else SCALE_RMST_DAYS
        try:
            if method_id == "cox_unadjusted":
                est = _cox_estimate(method_id, times, events, treated)
            elif method_id == "cox_psm":
                idx = get_matched()
                est = _cox_estimate(method_id, times[idx], events[idx], treated[idx])
            elif method_id == "cox_ipw_overlap":
                w = compute_weights(get_propensity().scores, treated, "overlap")
                est = _cox_estimate(method_id, times, events, treated, w)
            elif method_id == "cox_ipw_standard":
                w = compute_weights(get_propensity().scores, treated, "standard_ipw",
                                    cap=settings.weight_cap)
                est = _cox_estimate(method_id, times, events, treated, w)
            elif method_id == "rmst_km_unadjusted":
                est = _km_diff_estimate(method_id, times, events, treated, tau)
            elif method_id == "rmst_km_psm":
                idx = get_matched()
                est = _km_diff_estimate(method_id, times[idx], events[idx], treated[idx], tau)
            elif method_id == "rmst_km_ipw_overlap":
                w = compute_weights(get_propensity().scores, treated, "overlap")
                est = _km_diff_estimate(method_id, times, events, treated, tau, w)
            elif method_id == "rmst_aft_regression":
                model = aft_fit(features, treated, times, events)
                est = rmst_regression(model, features, tau, method_id)
            elif method_id == "rmst_aipw":
                model = aft_fit(features, treated, times, events)
                est = rmst_aipw(times, events, treated, features,
                                get_propensity(), model, tau, method_id)
            else:
                est = _failed(method_id, scale, n, "unknown method")
        except Exception as exc:  # per-method isolation
            est = _failed(method_id, scale, n, f"{type(exc).__name__}: {exc}")
        out.append(est)
    return out
