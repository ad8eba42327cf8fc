"""Propensity estimation, matching, and weighting."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

SCORE_CLIP = 1e-6
STANDARD_WEIGHT_CAP = 100.0
DEFAULT_RIDGE = 1e-6
DEFAULT_CALIPER = 0.2


class MatchingError(Exception):
    """No matched pairs could be formed."""


@dataclass
class PropensityFit:
    coefficients: np.ndarray  # [intercept, per-feature...]
    scores: np.ndarray        # clipped e(x) per row
    converged: bool
    iterations: int


def fit_logistic(features, treatment_labels, ridge: float = DEFAULT_RIDGE,
                 tol: float = 1e-8, max_iter: int = 100) -> PropensityFit:
    """Ridge-penalized logistic regression via IRLS.

    The intercept is unpenalized. Converged when the max absolute
    coefficient change drops below tol. Separation yields a flagged
    non-converged fit whose clipped scores remain usable.
    """
    X = np.column_stack([np.ones(len(treatment_labels)), np.asarray(features, dtype=float)])
    y = np.asarray(treatment_labels, dtype=float)
    n, p = X.shape
    if y.sum() < 1 or (1 - y).sum() < 1:
        raise ValueError("need at least one row in each arm")
    penalty = np.full(p, ridge)
    penalty[0] = 0.0
    beta = np.zeros(p)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = X @ beta
        e = 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))
        w = np.maximum(e * (1.0 - e), 1e-12)
        grad = X.T @ (y - e) - penalty * beta
        hess = (X.T * w) @ X + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    eta = X @ beta
    scores = 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))
    scores = np.clip(scores, SCORE_CLIP, 1.0 - SCORE_CLIP)
    return PropensityFit(coefficients=beta, scores=scores, converged=converged,
                         iterations=iterations)


def match_pairs(scores, treatment_labels, caliper_sd_logit: float = DEFAULT_CALIPER,
                seed: int = 0) -> list[tuple[int, int]]:
    """1:1 greedy nearest-neighbor matching on logit(score), no replacement.

    Treated rows are processed in seeded random order; a pair farther
    apart than caliper_sd_logit * SD(logit scores) is not formed.
    """
    scores = np.asarray(scores, dtype=float)
    treated_mask = np.asarray(treatment_labels, dtype=bool)
    logits = np.log(scores / (1.0 - scores))
    caliper = caliper_sd_logit * float(np.std(logits))

    treated_idx = np.nonzero(treated_mask)[0]
    control_idx = np.nonzero(~treated_mask)[0]
    if len(treated_idx) == 0 or len(control_idx) == 0:
        raise MatchingError("one arm is empty")

    order = control_idx[np.argsort(logits[control_idx], kind="stable")]
    sorted_logits = logits[order].tolist()
    nc = len(order)
    # path-compressed skip pointers over the sorted controls: next_alive[i]
    # is the first unused control at position >= i (nc sentinel = none),
    # prev_alive[i] the last at position <= i (-1 sentinel).
    next_alive = list(range(nc + 1))
    prev_alive = list(range(-1, nc))

    def find_next(i):
        root = i
        while root <= nc and next_alive[root] != root:
            root = next_alive[root]
        while i < root:
            next_alive[i], i = root, next_alive[i]
        return root

    def find_prev(i):
        root = i
        while root >= 0 and prev_alive[root + 1] != root:
            root = prev_alive[root + 1]
        while i > root:
            prev_alive[i + 1], i = root, prev_alive[i + 1]
        return root

    def remove(i):
        next_alive[i] = i + 1
        prev_alive[i + 1] = i - 1

    rng = np.random.default_rng(seed)
    pairs = []
    remaining = nc
    for t in treated_idx[rng.permutation(len(treated_idx))]:
        if remaining == 0:
            break
        target = logits[t]
        pos = bisect.bisect_left(sorted_logits, target)
        right = find_next(min(pos, nc))
        left = find_prev(min(pos - 1, nc - 1)) if pos > 0 else -1
        best = None
        if left >= 0:
            best = (abs(sorted_logits[left] - target), left)
        if right < nc:
            cand = (abs(sorted_logits[right] - target), right)
            if best is None or cand < best:
                best = cand
        if best is None or best[0] > caliper:
            continue
        pairs.append((int(t), int(order[best[1]])))
        remove(best[1])
        remaining -= 1
    if not pairs:
        raise MatchingError("caliper excluded every candidate pair")
    return pairs


def compute_weights(scores, treatment_labels, mode: str,
                    cap: float = STANDARD_WEIGHT_CAP) -> np.ndarray:
    """Row weights: standard IPW (1/e, 1/(1-e), capped) or overlap (1-e, e)."""
    e = np.asarray(scores, dtype=float)
    treated = np.asarray(treatment_labels, dtype=bool)
    if mode == "standard_ipw":
        w = np.where(treated, 1.0 / e, 1.0 / (1.0 - e))
        return np.minimum(w, cap)
    if mode == "overlap":
        return np.where(treated, 1.0 - e, e)
    raise ValueError(f"unknown weight mode {mode!r}")
