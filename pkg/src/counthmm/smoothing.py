"""Smoothing-parameter selection by cross-validated greedy grid search.

Each candidate vector of smoothing parameters is scored by the mean
out-of-sample log-likelihood over K folds: the model is trained with the
held-out positions treated as missing, then the held-out positions alone
are scored under the trained parameters.  The greedy search walks the grid
one axis step at a time until no neighbor improves the score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import FitConfig, FitError, fit
from .likelihood import PenaltyConfig, forward_loglik
from .model import UnconstrainedParams, to_unconstrained


@dataclass(frozen=True)
class CvGrid:
    """Candidate smoothing values: one shared axis used in every coordinate."""

    axis: np.ndarray
    dimension: int

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float)
        if axis.ndim != 1 or axis.size < 1:
            raise ValueError("grid axis must be a non-empty vector")
        if np.any(axis < 0.0) or np.any(np.diff(axis) <= 0.0):
            raise ValueError("grid axis must be strictly increasing and non-negative")
        if self.dimension < 1:
            raise ValueError("grid dimension must be >= 1")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)

    @classmethod
    def log10(cls, lo_exponent, hi_exponent, dimension):
        """Axis 10^lo, ..., 10^hi in unit exponent steps."""
        return cls(10.0 ** np.arange(lo_exponent, hi_exponent + 1), dimension)

    def index_of(self, value):
        matches = np.nonzero(np.isclose(self.axis, value, rtol=1e-12, atol=0.0))[0]
        if matches.size != 1:
            raise ValueError(f"{value!r} is not on the grid axis")
        return int(matches[0])

    def midpoint_indices(self):
        return (self.axis.size // 2,) * self.dimension

    def values(self, indices):
        return tuple(float(self.axis[i]) for i in indices)

    def neighbors(self, indices):
        """Axis-adjacent index vectors, larger step first within each coordinate."""
        result = []
        for step in (1, -1):
            for coord in range(self.dimension):
                moved = list(indices)
                moved[coord] += step
                if 0 <= moved[coord] < self.axis.size:
                    result.append(tuple(moved))
        return result


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint held-out index sets covering every time point exactly once."""

    n_folds: int
    assignments: tuple
    seed: int

    def __post_init__(self):
        assignments = tuple(np.array(a, dtype=np.intp) for a in self.assignments)
        for a in assignments:
            a.setflags(write=False)
        if len(assignments) != self.n_folds:
            raise ValueError("assignments must contain one index set per fold")
        combined = np.concatenate(assignments) if assignments else np.empty(0, dtype=np.intp)
        length = combined.size
        if length == 0 or not np.array_equal(np.sort(combined), np.arange(length)):
            raise ValueError("folds must partition the index range exactly")
        object.__setattr__(self, "assignments", assignments)

    @property
    def length(self):
        return sum(a.size for a in self.assignments)


def make_folds(length, n_folds=20, seed=0):
    """Uniformly random partition of 0..length-1 into near-equal folds."""
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if length < n_folds:
        raise ValueError("need at least one index per fold")
    rng = np.random.default_rng(seed)
    order = rng.permutation(length)
    assignments = tuple(np.sort(part) for part in np.array_split(order, n_folds))
    return FoldPlan(n_folds, assignments, seed)


@dataclass(frozen=True)
class CvResult:
    """Selected smoothing vector plus the path the greedy search took."""

    best_lambda: tuple
    path: tuple
    per_fold_logliks: np.ndarray

    def __post_init__(self):
        per_fold = np.array(self.per_fold_logliks, dtype=float)
        per_fold.setflags(write=False)
        object.__setattr__(self, "per_fold_logliks", per_fold)
        object.__setattr__(self, "path", tuple((tuple(lam), float(s)) for lam, s in self.path))


def _fold_score(lambdas, data, holdout, n_states, order, fit_config,
                inflation_exempt=frozenset(), extra_starts=()):
    """Train with holdout missing, score holdout alone; returns (score, fitted)."""
    penalty_config = PenaltyConfig(order, np.asarray(lambdas, dtype=float), inflation_exempt)
    train = data.with_missing(holdout)
    result = fit(train, n_states, penalty_config, fit_config, extra_starts=extra_starts)
    score = forward_loglik(result.params, data.keep_only(holdout))
    warm = to_unconstrained(result.params)
    if fit_config.stationary:
        warm = UnconstrainedParams(warm.gamma_star, warm.pmf_star, None)
    return score, warm


def oos_loglik(lambdas, data, holdout, n_states, order, fit_config=None,
               inflation_exempt=frozenset()):
    """Out-of-sample log-likelihood of one fold for one smoothing vector.

    Trains a penalized fit with the held-out positions marked missing, then
    evaluates the unpenalized forward log-likelihood with only the held-out
    positions observed.  An empty holdout scores 0 (nothing to predict).
    """
    fit_config = fit_config or FitConfig()
    holdout = np.asarray(holdout, dtype=np.intp)
    score, _ = _fold_score(lambdas, data, holdout, n_states, order, fit_config,
                           inflation_exempt)
    return score


def greedy_search(grid, data, n_states, order, fold_plan, start_lambda=None,
                  fit_config=None, inflation_exempt=frozenset()):
    """Greedy walk on the smoothing grid maximizing mean out-of-sample log-likelihood.

    From the current vector, the 2N axis-adjacent neighbors are scored; the
    search moves to the best strictly-improving one (ties keep the current
    vector; among tied improving neighbors the larger smoothing value wins)
    and stops at a fixed point.  Each vector is scored at most once.  Fold
    training reuses the current vector's fitted parameters as a warm start;
    the first vector's folds are warmed from one full-data fit.

    Raises
    ------
    FitError
        If training fails on every fold for the start vector and all its
        neighbors (systematic failure, nothing to select).
    """
    fit_config = fit_config or FitConfig()
    if start_lambda is None:
        current = grid.midpoint_indices()
    else:
        if len(start_lambda) != grid.dimension:
            raise ValueError("start_lambda must have one entry per state")
        current = tuple(grid.index_of(v) for v in start_lambda)
    cache = {}

    def seed_warm_starts(indices):
        """Warm every first-vector fold from one full-data fit."""
        penalty_config = PenaltyConfig(
            order, np.asarray(grid.values(indices), dtype=float), inflation_exempt
        )
        try:
            result = fit(data, n_states, penalty_config, fit_config)
        except FitError:
            return None
        warm = to_unconstrained(result.params)
        if fit_config.stationary:
            warm = UnconstrainedParams(warm.gamma_star, warm.pmf_star, None)
        return [warm] * fold_plan.n_folds

    def score(indices, warm_starts):
        if indices in cache:
            return cache[indices]
        lambdas = grid.values(indices)
        fold_scores = np.empty(fold_plan.n_folds)
        fitted = []
        for f, holdout in enumerate(fold_plan.assignments):
            extra = ()
            if warm_starts is not None and warm_starts[f] is not None:
                extra = (warm_starts[f],)
            try:
                fold_scores[f], warm = _fold_score(
                    lambdas, data, holdout, n_states, order, fit_config,
                    inflation_exempt, extra_starts=extra,
                )
            except FitError:
                fold_scores[f], warm = -np.inf, None
            fitted.append(warm)
        mean = fold_scores.mean() if np.all(np.isfinite(fold_scores)) else -np.inf
        cache[indices] = (mean, fold_scores, fitted)
        return cache[indices]

    current_score, _, current_fits = score(current, seed_warm_starts(current))
    path = [(grid.values(current), current_score)]
    while True:
        best_indices, best_score = None, current_score
        for candidate in grid.neighbors(current):
            cand_score, _, _ = score(candidate, current_fits)
            if cand_score > best_score:
                best_indices, best_score = candidate, cand_score
        if best_indices is None:
            break
        current = best_indices
        current_score, _, current_fits = cache[current]
        path.append((grid.values(current), current_score))
    if not np.isfinite(current_score):
        raise FitError("cross-validation failed on every candidate smoothing vector")
    _, per_fold, _ = cache[current]
    return CvResult(grid.values(current), tuple(path), per_fold)
