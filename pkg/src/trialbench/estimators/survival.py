"""Survival estimation primitives.

Weighted Cox regression for a binary treatment (Breslow ties), the
weighted Kaplan-Meier product-limit curve, restricted mean survival
time by exact step integration, and Weibull accelerated failure time
regression by Newton maximum likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaln

COX_TOL = 1e-8
COX_MAX_ITER = 50
AFT_GRAD_TOL = 1e-6
AFT_MAX_ITER = 100

# AFT works on log-time; day-0 events get half a day of exposure.
MIN_AFT_TIME = 0.5


@dataclass
class CoxResult:
    beta: float
    se_model: float
    se_robust: float
    converged: bool
    iterations: int
    n_used: int


@dataclass
class SurvivalCurve:
    """Right-continuous step function starting at S(0) = 1."""
    times: np.ndarray   # knot locations (ascending, > 0)
    survival: np.ndarray  # value on [times[i], times[i+1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]


def _sorted_arrays(times, events, x, weights):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    x = np.asarray(x, dtype=float)
    w = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(times, kind="stable")
    return times[order], events[order], x[order], w[order]


def cox_fit(times, events, treatment, row_weights=None) -> CoxResult:
    """Weighted Cox partial likelihood for one binary covariate.

    Breslow handling of ties; Newton-Raphson from beta = 0. se_model is
    the inverse observed information; se_robust the Lin-Wei sandwich,
    appropriate whenever the weights are not all one.
    """
    t, d, x, w = _sorted_arrays(times, events, treatment, row_weights)
    n = len(t)
    if not (d & (x > 0)).any() or not (d & (x <= 0)).any():
        return CoxResult(beta=math.inf if (d & (x > 0)).any() else -math.inf,
                         se_model=math.inf, se_robust=math.inf,
                         converged=False, iterations=0, n_used=n)

    # distinct event times and group boundaries (times sorted ascending)
    event_idx = np.nonzero(d)[0]

    def suffix_sums(beta):
        r = np.exp(beta * x)
        s0 = np.cumsum((w * r)[::-1])[::-1]          # sum over t_j >= t_i
        s1 = np.cumsum((w * r * x)[::-1])[::-1]
        return r, s0, s1

    beta = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, COX_MAX_ITER + 1):
        _, s0, s1 = suffix_sums(beta)
        # each death contributes at the first index of its tie group
        first = np.searchsorted(t, t[event_idx], side="left")
        mbar = s1[first] / s0[first]
        score = float(np.sum(w[event_idx] * (x[event_idx] - mbar)))
        info = float(np.sum(w[event_idx] * (mbar - mbar ** 2)))  # x binary: S2 = S1
        if info <= 0:
            break
        step = score / info
        step = float(np.clip(step, -5.0, 5.0))
        beta += step
        if abs(step) < COX_TOL:
            converged = True
            break

    r, s0, s1 = suffix_sums(beta)
    first = np.searchsorted(t, t[event_idx], side="left")
    mbar = s1[first] / s0[first]
    info = float(np.sum(w[event_idx] * (mbar - mbar ** 2)))
    se_model = math.sqrt(1.0 / info) if info > 0 else math.inf

    # Lin-Wei robust variance from weighted score residuals
    dw_at = {}
    for j, i in enumerate(event_idx):
        key = t[i]
        dw_at[key] = dw_at.get(key, 0.0) + w[i]
    ev_times = np.array(sorted(dw_at))
    dws = np.array([dw_at[k] for k in ev_times])
    pos = np.searchsorted(t, ev_times, side="left")
    s0e, mbe = s0[pos], s1[pos] / s0[pos]
    c1 = np.cumsum(dws / s0e)          # sum of d_w / S0 over event times
    c2 = np.cumsum(dws * mbe / s0e)    # sum of d_w * mbar / S0
    # cumulative values at each subject's own time (event times <= t_i)
    upto = np.searchsorted(ev_times, t, side="right") - 1
    c1_i = np.where(upto >= 0, c1[np.maximum(upto, 0)], 0.0)
    c2_i = np.where(upto >= 0, c2[np.maximum(upto, 0)], 0.0)
    m_at_own = np.zeros(n)
    own = np.searchsorted(ev_times, t[event_idx], side="left")
    m_at_own[event_idx] = mbe[own]
    resid = d * (x - m_at_own) - r * (x * c1_i - c2_i)
    bread = 1.0 / info if info > 0 else math.inf
    meat = float(np.sum((w * resid) ** 2))
    se_robust = math.sqrt(bread * meat * bread) if info > 0 else math.inf

    return CoxResult(beta=float(beta), se_model=se_model, se_robust=se_robust,
                     converged=converged, iterations=iterations, n_used=n)


def cox_partial_loglik(beta, times, events, treatment, row_weights=None) -> float:
    """Weighted Breslow partial log-likelihood (used by brute-force checks)."""
    t, d, x, w = _sorted_arrays(times, events, treatment, row_weights)
    r = np.exp(beta * x)
    s0 = np.cumsum((w * r)[::-1])[::-1]
    event_idx = np.nonzero(d)[0]
    first = np.searchsorted(t, t[event_idx], side="left")
    return float(np.sum(w[event_idx] * (beta * x[event_idx] - np.log(s0[first]))))


def km_curve(times, events, row_weights=None) -> SurvivalCurve:
    """Weighted Kaplan-Meier product-limit estimator."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    w = np.ones_like(t) if row_weights is None else np.asarray(row_weights, dtype=float)
    order = np.argsort(t, kind="stable")
    t, d, w = t[order], d[order], w[order]
    at_risk_after = np.cumsum(w[::-1])[::-1]  # total weight with t_j >= t_i
    ev_times, inverse = np.unique(t[d], return_inverse=True)
    if len(ev_times) == 0:
        return SurvivalCurve(times=np.empty(0), survival=np.empty(0))
    deaths = np.bincount(inverse, weights=w[d], minlength=len(ev_times))
    pos = np.searchsorted(t, ev_times, side="left")
    at_risk = at_risk_after[pos]
    factors = 1.0 - deaths / at_risk
    surv = np.cumprod(np.clip(factors, 0.0, 1.0))
    return SurvivalCurve(times=ev_times, survival=surv)


def rmst(curve: SurvivalCurve, tau: float) -> float:
    """Integral of the step survival curve over [0, tau].

    Beyond the last knot the final value is held constant (documented
    extrapolation for horizons past the last observed event).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    knots = curve.times
    vals = curve.survival
    total = 0.0
    prev_t, prev_s = 0.0, 1.0
    for kt, ks in zip(knots, vals):
        if kt >= tau:
            break
        total += prev_s * (kt - prev_t)
        prev_t, prev_s = kt, ks
    total += prev_s * (tau - prev_t)
    return total


def event_time_horizon(times, events, percentile: float = 0.8) -> float:
    """Nearest-rank percentile of pooled observed event times."""
    t = np.sort(np.asarray(times, dtype=float)[np.asarray(events, dtype=bool)])
    if len(t) == 0:
        raise ValueError("no observed events")
    rank = max(1, math.ceil(percentile * len(t)))
    return float(t[rank - 1])


@dataclass
class AFTModel:
    """Weibull AFT: log T = design . theta + sigma * W, W extreme-value."""
    theta: np.ndarray       # [intercept, treatment, features...]
    log_sigma: float
    converged: bool
    iterations: int
    loglik: float

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    def _mu(self, features, treatment):
        X = _aft_design(features, treatment)
        return X @ self.theta

    def predicted_rmst(self, features, treatment, tau: float) -> np.ndarray:
        """Exact per-row restricted mean under the fitted Weibull curve."""
        mu = self._mu(features, treatment)
        k = 1.0 / self.sigma           # Weibull shape
        lam = np.exp(mu)               # Weibull scale
        z = (tau / lam) ** k
        # integral_0^tau exp(-(t/lam)^k) dt via the lower incomplete gamma
        return (lam / k) * np.exp(gammaln(1.0 / k)) * gammainc(1.0 / k, z)

    def predicted_survival(self, features, treatment, t) -> np.ndarray:
        mu = self._mu(features, treatment)
        z = (np.log(np.maximum(t, MIN_AFT_TIME)) - mu) / self.sigma
        return np.exp(-np.exp(z))


def _aft_design(features, treatment):
    treatment = np.asarray(treatment, dtype=float)
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape[1] == 0:
        return np.column_stack([np.ones(len(treatment)), treatment])
    return np.column_stack([np.ones(len(treatment)), treatment, features])


def aft_fit(features, treatment, times, events, max_iter: int = AFT_MAX_ITER) -> AFTModel:
    """Weibull AFT by Newton maximum likelihood over [treatment, features].

    Requires >= 10 events; otherwise (or on non-convergence) the model
    is flagged and downstream estimates are excluded from metrics.
    """
    X = _aft_design(features, treatment)
    d = np.asarray(events, dtype=float)
    t = np.maximum(np.asarray(times, dtype=float), MIN_AFT_TIME)
    logt = np.log(t)
    n, p = X.shape
    n_events = int(d.sum())

    theta = np.zeros(p)
    theta[0] = float(np.mean(logt))
    s = 0.0  # log sigma
    converged = n_events >= 10
    # the score scales with the event count, so the tolerance must too
    grad_tol = AFT_GRAD_TOL * max(1.0, n_events)

    def loglik_parts(theta, s):
        sigma = math.exp(s)
        z = (logt - X @ theta) / sigma
        z = np.clip(z, -700, 30)
        u = np.exp(z)
        ll = float(np.sum(d * (z - s)) - np.sum(u))
        return ll, z, u, sigma

    ll, z, u, sigma = loglik_parts(theta, s)
    iterations = 0
    if converged:
        converged = False
        for iterations in range(1, max_iter + 1):
            g_theta = X.T @ ((u - d) / sigma)
            g_s = float(np.sum(-d * (z + 1.0) + u * z))
            grad = np.concatenate([g_theta, [g_s]])
            if np.max(np.abs(grad)) < grad_tol:
                converged = True
                break
            h_tt = -(X.T * u) @ X / sigma ** 2
            h_ts = -(X.T @ ((u * z + u - d)[:, None])).ravel() / sigma
            h_ss = float(np.sum(d * z - u * z ** 2 - u * z))
            H = np.zeros((p + 1, p + 1))
            H[:p, :p] = h_tt
            H[:p, p] = h_ts
            H[p, :p] = h_ts
            H[p, p] = h_ss
            # Levenberg damping: far from the optimum the Hessian can be
            # indefinite, so shift it until the step is an ascent direction
            lam = 0.0
            step = None
            scale_h = float(np.max(np.abs(H))) or 1.0
            for _ in range(60):
                try:
                    cand = np.linalg.solve(H - lam * np.eye(p + 1), -grad)
                except np.linalg.LinAlgError:
                    cand = None
                if cand is not None and float(grad @ cand) > 0:
                    step = cand
                    break
                lam = max(2.0 * lam, 1e-6 * scale_h)
            if step is None:
                break
            # halve the step until the log-likelihood improves
            scale = 1.0
            for _ in range(60):
                cand_theta = theta + scale * step[:p]
                cand_s = s + scale * step[p]
                cand_ll, cz, cu, csig = loglik_parts(cand_theta, cand_s)
                if cand_ll > ll - 1e-12:
                    theta, s, ll, z, u, sigma = cand_theta, cand_s, cand_ll, cz, cu, csig
                    break
                scale *= 0.5
            else:
                break
        if not converged and n_events >= 10:
            # stalled line search at a stationary point still counts
            g_theta = X.T @ ((u - d) / sigma)
            g_s = float(np.sum(-d * (z + 1.0) + u * z))
            converged = max(float(np.max(np.abs(g_theta))), abs(g_s)) < grad_tol
    return AFTModel(theta=theta, log_sigma=s, converged=converged,
                    iterations=iterations, loglik=ll)
