"""Core types for hidden Markov models on bounded counts.

A model has N latent states with a row-stochastic transition matrix, an
initial state distribution (optionally tied to the stationary distribution
of the chain), and one probability mass function per state on the support
{0, ..., K}.  All probability parameters can be mapped to and from an
unconstrained (multinomial-logit) scale for numerical optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Probabilities are floored at this value before taking logs so that the
#: logit transform is defined on boundary points.
PROB_FLOOR = 1e-12

_ROW_SUM_TOL = 1e-12
_STATIONARY_TOL = 1e-10


def _frozen_array(values, dtype=float, ndim=None, name="array"):
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def validate_stochastic_rows(matrix, name="matrix"):
    """Check that every row of ``matrix`` is a probability vector.

    Entries must lie in [0, 1] and each row must sum to 1 within 1e-12.
    Raises ``ValueError`` otherwise.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(matrix < 0.0) or np.any(matrix > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    row_sums = matrix.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > _ROW_SUM_TOL):
        worst = np.max(np.abs(row_sums - 1.0))
        raise ValueError(f"rows of {name} must sum to 1 (max deviation {worst:.3e})")


@dataclass(frozen=True)
class CountSeries:
    """An observed count time series with optional missing entries.

    Attributes
    ----------
    values : ndarray of int
        Length-T array of counts.  Entries at missing positions are stored
        as 0 and must be ignored (consult `missing`).
    missing : ndarray of bool
        Length-T mask; True marks a missing observation.
    support_bound : int
        Upper bound K of the count support {0, ..., K}.  Must cover every
        observed count.
    """

    values: np.ndarray
    missing: np.ndarray
    support_bound: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64)
        missing = np.array(self.missing, dtype=bool)
        if values.ndim != 1 or missing.shape != values.shape:
            raise ValueError("values and missing must be 1-d arrays of equal length")
        if values.size < 1:
            raise ValueError("a count series must contain at least one entry")
        k = int(self.support_bound)
        if k < 1:
            raise ValueError("support_bound must be >= 1")
        observed = values[~missing]
        if observed.size and (observed.min() < 0 or observed.max() > k):
            raise ValueError(
                f"observed counts must lie in [0, {k}]; "
                f"found range [{observed.min()}, {observed.max()}]"
            )
        values[missing] = 0  # canonical placeholder
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "support_bound", k)

    @classmethod
    def from_sequence(cls, observations, support_bound=None):
        """Build a series from a sequence where None/NaN marks missing.

        When `support_bound` is omitted it defaults to the largest observed
        count (at least 1); a fully missing sequence then raises.
        """
        values, missing = [], []
        for obs in observations:
            if obs is None or (isinstance(obs, float) and math.isnan(obs)):
                values.append(0)
                missing.append(True)
            else:
                if float(obs) != int(obs):
                    raise ValueError(f"counts must be integers, got {obs!r}")
                values.append(int(obs))
                missing.append(False)
        if support_bound is None:
            observed = [v for v, m in zip(values, missing) if not m]
            if not observed:
                raise ValueError("support_bound is required when all entries are missing")
            support_bound = max(max(observed), 1)
        return cls(np.array(values), np.array(missing), int(support_bound))

    def __len__(self):
        return self.values.size

    @property
    def n_observed(self):
        return int((~self.missing).sum())

    def observed_values(self):
        """Counts at the non-missing positions, in time order."""
        return self.values[~self.missing]

    def with_missing(self, indices):
        """Copy of the series with the given positions additionally missing."""
        missing = self.missing.copy()
        missing[np.asarray(indices, dtype=np.intp)] = True
        return CountSeries(self.values.copy(), missing, self.support_bound)

    def keep_only(self, indices):
        """Copy with every position missing except the given (observed) ones.

        Positions listed in `indices` that were missing already stay missing.
        """
        keep = np.zeros(len(self), dtype=bool)
        keep[np.asarray(indices, dtype=np.intp)] = True
        missing = self.missing | ~keep
        return CountSeries(self.values.copy(), missing, self.support_bound)


@dataclass(frozen=True)
class HmmParams:
    """Constrained parameters of a count HMM.

    Attributes
    ----------
    gamma : ndarray, shape (N, N)
        Row-stochastic transition matrix.
    delta : ndarray, shape (N,)
        Initial state distribution.
    pmfs : ndarray, shape (N, K+1)
        Row i holds the emission p.m.f. of state i on {0, ..., K}.
    stationary : bool
        If True, `delta` is the stationary distribution of `gamma` (this is
        validated) and is treated as derived rather than free.
    """

    gamma: np.ndarray
    delta: np.ndarray
    pmfs: np.ndarray
    stationary: bool = False

    def __post_init__(self):
        gamma = _frozen_array(self.gamma, ndim=2, name="gamma")
        delta = _frozen_array(self.delta, ndim=1, name="delta")
        pmfs = _frozen_array(self.pmfs, ndim=2, name="pmfs")
        n = gamma.shape[0]
        if gamma.shape != (n, n):
            raise ValueError(f"gamma must be square, got shape {gamma.shape}")
        if delta.shape != (n,) or pmfs.shape[0] != n:
            raise ValueError("gamma, delta and pmfs disagree on the number of states")
        if pmfs.shape[1] < 2:
            raise ValueError("pmfs must cover a support {0, ..., K} with K >= 1")
        validate_stochastic_rows(gamma, "gamma")
        validate_stochastic_rows(delta[np.newaxis, :], "delta")
        validate_stochastic_rows(pmfs, "pmfs")
        if self.stationary:
            residual = np.max(np.abs(delta @ gamma - delta))
            if residual > _STATIONARY_TOL:
                raise ValueError(
                    f"delta is not stationary for gamma (residual {residual:.3e})"
                )
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "pmfs", pmfs)

    @property
    def n_states(self):
        return self.gamma.shape[0]

    @property
    def support_bound(self):
        return self.pmfs.shape[1] - 1

    @classmethod
    def with_stationary_delta(cls, gamma, pmfs):
        """Construct params whose delta is the stationary distribution of gamma."""
        delta = stationary_distribution(np.asarray(gamma, dtype=float))
        return cls(gamma, delta, pmfs, stationary=True)


@dataclass(frozen=True)
class UnconstrainedParams:
    """Logit-scale working parameters with identifiability pins.

    `gamma_star` has its diagonal pinned to 0, `pmf_star` its first column,
    and `delta_star` (present only when the initial distribution is a free
    parameter) its first entry.  A pinned entry is exactly 0.
    """

    gamma_star: np.ndarray
    pmf_star: np.ndarray
    delta_star: np.ndarray | None = None

    def __post_init__(self):
        gamma_star = _frozen_array(self.gamma_star, ndim=2, name="gamma_star")
        pmf_star = _frozen_array(self.pmf_star, ndim=2, name="pmf_star")
        n = gamma_star.shape[0]
        if gamma_star.shape != (n, n) or pmf_star.shape[0] != n:
            raise ValueError("gamma_star and pmf_star disagree on the number of states")
        for arr, name in ((gamma_star, "gamma_star"), (pmf_star, "pmf_star")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.diag(gamma_star) != 0.0):
            raise ValueError("diagonal of gamma_star must be pinned to 0")
        if np.any(pmf_star[:, 0] != 0.0):
            raise ValueError("first column of pmf_star must be pinned to 0")
        delta_star = self.delta_star
        if delta_star is not None:
            delta_star = _frozen_array(delta_star, ndim=1, name="delta_star")
            if delta_star.shape != (n,):
                raise ValueError("delta_star must have one entry per state")
            if not np.all(np.isfinite(delta_star)):
                raise ValueError("delta_star contains non-finite entries")
            if delta_star[0] != 0.0:
                raise ValueError("first entry of delta_star must be pinned to 0")
        object.__setattr__(self, "gamma_star", gamma_star)
        object.__setattr__(self, "pmf_star", pmf_star)
        object.__setattr__(self, "delta_star", delta_star)

    @property
    def n_states(self):
        return self.gamma_star.shape[0]

    @property
    def support_bound(self):
        return self.pmf_star.shape[1] - 1

    @property
    def stationary(self):
        """True when the initial distribution is tied to the chain's stationary one."""
        return self.delta_star is None


def n_free_parameters(n_states, support_bound, stationary=True):
    """Number of free (non-pinned) working parameters."""
    n, k = n_states, support_bound
    count = n * (n - 1) + n * k
    if not stationary:
        count += n - 1
    return count


def pack_free(u):
    """Flatten the free entries of `u` into a single vector.

    Order: gamma_star off-diagonals (row-major), then delta_star[1:] when
    present, then pmf_star columns 1..K (row-major).
    """
    n = u.n_states
    off_diag = ~np.eye(n, dtype=bool)
    parts = [u.gamma_star[off_diag]]
    if u.delta_star is not None:
        parts.append(u.delta_star[1:])
    parts.append(u.pmf_star[:, 1:].ravel())
    return np.concatenate(parts) if parts else np.empty(0)


def unpack_free(vector, n_states, support_bound, stationary=True):
    """Inverse of :func:`pack_free`."""
    n, k = n_states, support_bound
    vector = np.asarray(vector, dtype=float)
    expected = n_free_parameters(n, k, stationary)
    if vector.shape != (expected,):
        raise ValueError(f"expected {expected} free parameters, got {vector.shape}")
    pos = n * (n - 1)
    gamma_star = np.zeros((n, n))
    gamma_star[~np.eye(n, dtype=bool)] = vector[:pos]
    delta_star = None
    if not stationary:
        delta_star = np.zeros(n)
        delta_star[1:] = vector[pos:pos + n - 1]
        pos += n - 1
    pmf_star = np.zeros((n, k + 1))
    pmf_star[:, 1:] = vector[pos:].reshape(n, k)
    return UnconstrainedParams(gamma_star, pmf_star, delta_star)


def softmax_rows(x):
    """Row-wise softmax with max-subtraction for overflow safety."""
    x = np.asarray(x, dtype=float)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def to_unconstrained(params):
    """Map constrained parameters to the logit scale.

    Probabilities are floored at `PROB_FLOOR` before taking logs, and each
    block is shifted so its pinned entry is exactly 0.  The map inverts
    :func:`from_unconstrained` on interior points to within 1e-10.
    """
    n = params.n_states
    log_gamma = np.log(np.maximum(params.gamma, PROB_FLOOR))
    gamma_star = log_gamma - np.diag(log_gamma)[:, np.newaxis]
    np.fill_diagonal(gamma_star, 0.0)
    log_pmfs = np.log(np.maximum(params.pmfs, PROB_FLOOR))
    pmf_star = log_pmfs - log_pmfs[:, :1]
    pmf_star[:, 0] = 0.0
    delta_star = None
    if not params.stationary:
        log_delta = np.log(np.maximum(params.delta, PROB_FLOOR))
        delta_star = log_delta - log_delta[0]
        delta_star[0] = 0.0
    return UnconstrainedParams(gamma_star, pmf_star, delta_star)


def from_unconstrained(u):
    """Map logit-scale parameters back to constrained probabilities.

    When `u` carries no delta block, the initial distribution is computed as
    the stationary distribution of the resulting transition matrix.
    """
    gamma = softmax_rows(u.gamma_star)
    pmfs = softmax_rows(u.pmf_star)
    if u.stationary:
        delta = stationary_distribution(gamma)
        return HmmParams(gamma, delta, pmfs, stationary=True)
    delta = softmax_rows(u.delta_star[np.newaxis, :])[0]
    return HmmParams(gamma, delta, pmfs, stationary=False)


def stationary_distribution(gamma):
    """Stationary distribution of a row-stochastic transition matrix.

    Solves the balance equations with the normalization constraint folded in
    as an augmented linear system.  Raises ``ValueError`` for reducible
    chains (singular system) instead of returning garbage.
    """
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.shape[0]
    if gamma.shape != (n, n):
        raise ValueError(f"gamma must be square, got shape {gamma.shape}")
    validate_stochastic_rows(gamma, "gamma")
    a = np.eye(n) - gamma + np.ones((n, n))
    try:
        delta = np.linalg.solve(a.T, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise ValueError("transition matrix has no unique stationary distribution "
                         "(singular balance system; chain may be reducible)") from exc
    residual = max(np.max(np.abs(delta @ gamma - delta)), abs(delta.sum() - 1.0))
    if not np.all(np.isfinite(delta)) or residual > 1e-8:
        raise ValueError("stationary distribution solve is numerically unreliable "
                         f"(residual {residual:.3e}); chain may be nearly reducible")
    return delta


def simulate(params, length, seed):
    """Draw a latent state path and counts from the model.

    The first state is drawn from `delta`, subsequent states from the rows
    of `gamma`, and each count from the active state's p.m.f.  Output is
    reproducible bit-for-bit for a given 64-bit `seed` (PCG64 generator).

    Returns
    -------
    states : ndarray of int, shape (length,)
        Latent state indices in {0, ..., N-1}.
    series : CountSeries
        Simulated counts with the model's support bound.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    n = params.n_states
    state_uniforms = rng.random(length)
    count_uniforms = rng.random(length)
    gamma_cum = np.cumsum(params.gamma, axis=1)
    delta_cum = np.cumsum(params.delta)
    states = np.empty(length, dtype=np.int64)
    states[0] = min(np.searchsorted(delta_cum, state_uniforms[0], side="right"), n - 1)
    for t in range(1, length):
        row = gamma_cum[states[t - 1]]
        states[t] = min(np.searchsorted(row, state_uniforms[t], side="right"), n - 1)
    pmf_cum = np.cumsum(params.pmfs, axis=1)
    k = params.support_bound
    counts = np.empty(length, dtype=np.int64)
    for t in range(length):
        counts[t] = min(np.searchsorted(pmf_cum[states[t]], count_uniforms[t], side="right"), k)
    series = CountSeries(counts, np.zeros(length, dtype=bool), k)
    return states, series
