"""State decoding, residual diagnostics, and estimator-comparison metrics."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.stats import norm

from .likelihood import emission_matrix, forward_backward

_KLD_FLOOR = 1e-12


@dataclass(frozen=True)
class DecodeResult:
    """Globally most probable state path and its joint log-probability."""

    states: np.ndarray
    joint_log_prob: float

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)


@dataclass(frozen=True)
class PseudoResiduals:
    """Normal quantile residuals of each observation given all others.

    Discrete data yield residual intervals [lower, upper]; `mid` applies the
    quantile transform at the interval midpoint probability.  Saturation
    flags mark residuals that are infinite because the conditional
    cumulative probability was exactly 0 or 1.
    """

    lower: np.ndarray
    mid: np.ndarray
    upper: np.ndarray
    saturated_low: np.ndarray
    saturated_high: np.ndarray


def viterbi(params, data):
    """Most probable joint state path given the data (log-space dynamic program).

    Ties are resolved toward the lexicographically smallest path: the
    optimal continuation values are computed backward, then the path is
    built forward always taking the lowest state index that attains the
    optimum.  Missing observations contribute no emission term.
    """
    emis = emission_matrix(params, data)
    big_t, n = emis.shape
    with np.errstate(divide="ignore"):
        log_emis = np.log(emis)
        log_gamma = np.log(params.gamma)
        log_delta = np.log(params.delta)
    # continue_value[t, i]: best log-probability of emissions/transitions after
    # time t when the chain sits in state i at time t
    continue_value = np.zeros((big_t, n))
    for t in range(big_t - 2, -1, -1):
        step = log_gamma + (log_emis[t + 1] + continue_value[t + 1])[np.newaxis, :]
        continue_value[t] = step.max(axis=1)
    first = log_delta + log_emis[0] + continue_value[0]
    total = first.max()
    if not np.isfinite(total):
        raise ValueError("data have zero probability under the model; nothing to decode")
    states = np.empty(big_t, dtype=np.int64)
    states[0] = int(np.argmax(first))
    for t in range(1, big_t):
        step = log_gamma[states[t - 1]] + log_emis[t] + continue_value[t]
        states[t] = int(np.argmax(step))
    return DecodeResult(states, float(total))


def state_probabilities(params, data):
    """(T, N) posterior state probabilities given the whole series."""
    fb = forward_backward(params, data)
    post = fb.forward * fb.backward
    return post / post.sum(axis=1, keepdims=True)


def conditional_distributions(params, data):
    """(T, K+1) conditional p.m.f. of each observation given all the others."""
    fb = forward_backward(params, data)
    weights = fb.pre_emission * fb.backward
    weights = weights / weights.sum(axis=1, keepdims=True)
    return weights @ params.pmfs


def pseudo_residuals(params, data):
    """Normal ordinary pseudo-residuals of every observation.

    For each t the conditional distribution of the observation given all
    other observations is computed from the forward and backward passes;
    the residual interval endpoints are the normal quantiles of the
    conditional CDF just below and at the observed count.
    """
    if np.any(data.missing):
        raise ValueError("pseudo-residuals require a fully observed series")
    cond = conditional_distributions(params, data)
    cdf = np.cumsum(cond, axis=1)
    big_t = len(data)
    idx = np.arange(big_t)
    upper_p = np.minimum(cdf[idx, data.values], 1.0)
    lower_p = np.where(data.values > 0, cdf[idx, data.values - 1], 0.0)
    lower_p = np.clip(lower_p, 0.0, 1.0)
    saturated_low = lower_p <= 0.0
    saturated_high = upper_p >= 1.0
    with np.errstate(divide="ignore"):
        lower = norm.ppf(lower_p)
        upper = norm.ppf(upper_p)
        mid = norm.ppf(0.5 * (lower_p + upper_p))
    return PseudoResiduals(lower, mid, upper, saturated_low, saturated_high)


def kld(true_pmfs, est_pmfs):
    """Per-state Kullback-Leibler divergence from true to estimated p.m.f.s.

    Estimated probabilities are floored at 1e-12 wherever the true mass is
    positive; counts with zero true mass contribute nothing.
    """
    true_pmfs = np.asarray(true_pmfs, dtype=float)
    est_pmfs = np.asarray(est_pmfs, dtype=float)
    if true_pmfs.shape != est_pmfs.shape:
        raise ValueError("true and estimated p.m.f. matrices must have equal shape")
    est = np.maximum(est_pmfs, _KLD_FLOOR)
    terms = np.where(true_pmfs > 0.0, true_pmfs * np.log(np.maximum(true_pmfs, _KLD_FLOOR) / est), 0.0)
    return terms.sum(axis=1)


def transition_mae(est_gamma, true_gamma):
    """Entrywise absolute errors of the transition probability estimates."""
    est_gamma = np.asarray(est_gamma, dtype=float)
    true_gamma = np.asarray(true_gamma, dtype=float)
    if est_gamma.shape != true_gamma.shape:
        raise ValueError("transition matrices must have equal shape")
    return np.abs(est_gamma - true_gamma)


def misclassification_rate(decoded, true_states):
    """Fraction of misclassified time points after the best state relabeling.

    The decoded labels are mapped through the permutation minimizing the
    error rate, so the value is invariant to label switching.
    """
    decoded = np.asarray(decoded, dtype=np.int64)
    true_states = np.asarray(true_states, dtype=np.int64)
    if decoded.shape != true_states.shape or decoded.ndim != 1:
        raise ValueError("decoded and true state sequences must have equal length")
    n = int(max(decoded.max(), true_states.max())) + 1
    best = 1.0
    for perm in permutations(range(n)):
        relabeled = np.asarray(perm, dtype=np.int64)[decoded]
        best = min(best, float(np.mean(relabeled != true_states)))
    return best
