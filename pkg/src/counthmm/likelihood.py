"""Likelihood evaluation and the roughness-penalized objective.

The log-likelihood is computed with the scaled forward recursion (per-step
normalization, accumulating log normalizers) so that long series do not
underflow.  Missing observations contribute an identity emission term, i.e.
they are integrated out exactly.

The roughness penalty is a weighted sum of squared m-th order differences
of adjacent count probabilities, per state.  Counts listed as inflation
exempt (e.g. 0 for zero-inflated data, or the ceiling K) drop every
difference whose stencil touches them, so genuine excess mass at those
counts is not shrunk toward its neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import from_unconstrained


@dataclass(frozen=True)
class PenaltyConfig:
    """Configuration of the difference penalty.

    Attributes
    ----------
    order : int
        Order m >= 1 of the differences being penalized.
    lambdas : ndarray, shape (N,)
        Non-negative smoothing parameter for each state.
    inflation_exempt : frozenset of int
        Counts whose adjacent differences are excluded from the penalty.
    """

    order: int
    lambdas: np.ndarray
    inflation_exempt: frozenset = frozenset()

    def __post_init__(self):
        order = int(self.order)
        if order < 1:
            raise ValueError("difference order must be >= 1")
        lambdas = np.array(self.lambdas, dtype=float, ndmin=1)
        if lambdas.ndim != 1:
            raise ValueError("lambdas must be a vector with one entry per state")
        if np.any(~np.isfinite(lambdas)) or np.any(lambdas < 0.0):
            raise ValueError("smoothing parameters must be finite and >= 0")
        lambdas.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "inflation_exempt", frozenset(int(c) for c in self.inflation_exempt))

    @property
    def n_states(self):
        return self.lambdas.size


@dataclass(frozen=True)
class LogLikelihoodValue:
    """Log-likelihood together with its penalty; `penalized` is their difference."""

    loglik: float
    penalty: float

    @property
    def penalized(self):
        return self.loglik - self.penalty


class ForwardBackward(NamedTuple):
    """Scaled forward/backward quantities shared by gradient and diagnostics.

    `forward[t]` is the normalized forward vector after the time-t emission,
    `pre_emission[t]` the normalized prediction before it, `backward[t]` the
    matching scaled backward vector (so forward * backward sums to 1 at each
    t), and `normalizers[t]` the per-step scale whose logs sum to `loglik`.
    """

    forward: np.ndarray
    pre_emission: np.ndarray
    backward: np.ndarray
    normalizers: np.ndarray
    loglik: float


def emission_matrix(params, data):
    """(T, N) matrix of emission probabilities; rows of ones where missing."""
    if data.support_bound != params.support_bound:
        raise ValueError(
            f"support bound mismatch: data has K={data.support_bound}, "
            f"model has K={params.support_bound}"
        )
    emis = params.pmfs[:, data.values].T.copy()
    emis[data.missing] = 1.0
    return emis


def forward_loglik(params, data):
    """Log-likelihood of the series under the model, by the scaled forward pass.

    Returns ``-inf`` when the data have probability zero under the model
    (some step leaves no state with positive probability); this is a valid
    value, not an error.
    """
    emis = emission_matrix(params, data)
    alpha = params.delta * emis[0]
    total = 0.0
    for t in range(len(data)):
        if t > 0:
            alpha = (alpha @ params.gamma) * emis[t]
        norm = alpha.sum()
        if norm <= 0.0 or not np.isfinite(norm):
            return -np.inf
        total += np.log(norm)
        alpha = alpha / norm
    return total


def forward_backward(params, data):
    """Scaled forward and backward passes in one structure.

    Raises ``ValueError`` when the likelihood is exactly zero, since the
    scaled quantities are undefined there; callers that only need the
    log-likelihood should use :func:`forward_loglik`.
    """
    emis = emission_matrix(params, data)
    big_t, n = emis.shape
    forward = np.empty((big_t, n))
    pre = np.empty((big_t, n))
    normalizers = np.empty(big_t)
    pre[0] = params.delta
    for t in range(big_t):
        if t > 0:
            pre[t] = forward[t - 1] @ params.gamma
        phi = pre[t] * emis[t]
        norm = phi.sum()
        if norm <= 0.0 or not np.isfinite(norm):
            raise ValueError(f"data have zero probability under the model (time {t})")
        normalizers[t] = norm
        forward[t] = phi / norm
    backward = np.empty((big_t, n))
    backward[-1] = 1.0
    for t in range(big_t - 2, -1, -1):
        backward[t] = (params.gamma @ (emis[t + 1] * backward[t + 1])) / normalizers[t + 1]
    return ForwardBackward(forward, pre, backward, normalizers, float(np.log(normalizers).sum()))


def difference_matrix(support_bound, order, inflation_exempt=frozenset()):
    """Matrix mapping a p.m.f. on {0..K} to its penalized m-th differences.

    Row r of the full matrix computes the m-th order difference ending at
    count m+r (stencil {r, ..., r+m}).  Rows whose stencil touches an
    exempt count are dropped.  With no exemptions this is the complete set
    of differences for k = m, ..., K; exempting 0 drops exactly the k = m
    term, so the sum starts at k = m+1.
    """
    k, m = int(support_bound), int(order)
    if m > k:
        raise ValueError(f"difference order m={m} needs a support bound K >= m, got K={k}")
    diff = np.eye(k + 1)
    for _ in range(m):
        diff = diff[1:] - diff[:-1]
    if inflation_exempt:
        exempt = {int(c) for c in inflation_exempt}
        keep = [r for r in range(k + 1 - m) if not exempt.intersection(range(r, r + m + 1))]
        diff = diff[keep]
    return diff


def penalty(pmfs, config):
    """Roughness penalty: sum_i lambda_i * ||included m-th differences of row i||^2."""
    pmfs = np.asarray(pmfs, dtype=float)
    if config.lambdas.size != pmfs.shape[0]:
        raise ValueError("one smoothing parameter per state is required")
    diff = difference_matrix(pmfs.shape[1] - 1, config.order, config.inflation_exempt)
    squared = (pmfs @ diff.T) ** 2
    return float(config.lambdas @ squared.sum(axis=1))


def penalized_loglik(u, data, config):
    """Penalized objective at unconstrained parameters.

    Transforms `u` to constrained parameters, evaluates the forward
    log-likelihood, and subtracts the roughness penalty.  A zero-probability
    series yields ``loglik = -inf`` (propagated, not raised).
    """
    params = from_unconstrained(u)
    return LogLikelihoodValue(forward_loglik(params, data), penalty(params.pmfs, config))


def _constrained_scores(params, data, fb):
    """Partial derivatives of the log-likelihood w.r.t. the raw probabilities.

    Entries are treated as free reals; the softmax chain rule later projects
    them onto the simplex parameterization.  Returns (d/dgamma, d/ddelta,
    d/dpmfs) where the delta term is the direct one (the stationary tie-in,
    when active, is handled by the caller).
    """
    emis = emission_matrix(params, data)
    n, k1 = params.pmfs.shape
    # score per time step of the pre-emission forward times scaled backward
    rate = fb.pre_emission * fb.backward / fb.normalizers[:, np.newaxis]
    g_pmfs = np.zeros((k1, n))
    observed = ~data.missing
    np.add.at(g_pmfs, data.values[observed], rate[observed])
    g_pmfs = g_pmfs.T
    weighted_back = emis * fb.backward / fb.normalizers[:, np.newaxis]
    g_gamma = fb.forward[:-1].T @ weighted_back[1:]
    g_delta = weighted_back[0]
    return g_gamma, g_delta, g_pmfs


def _softmax_row_chain(prob_rows, upstream):
    """Chain rule through a row-wise softmax: returns d/d(logits)."""
    inner = np.sum(upstream * prob_rows, axis=-1, keepdims=True)
    return prob_rows * (upstream - inner)


def value_and_gradient(u, data, config):
    """Penalized objective and its gradient w.r.t. the free parameters.

    The gradient is assembled from one forward-backward pass (emission,
    transition and initial-distribution scores), the implicit derivative of
    the stationary distribution when the initial distribution is tied to it,
    and the quadratic penalty term, all mapped through the multinomial-logit
    chain rule.  Raises ``ValueError`` when the likelihood is zero.
    """
    params = from_unconstrained(u)
    fb = forward_backward(params, data)
    # near-zero likelihoods can overflow the scaled backward quantities; the
    # resulting non-finite gradient is reported as-is for callers to reject
    with np.errstate(over="ignore", invalid="ignore"):
        g_gamma, g_delta, g_pmfs = _constrained_scores(params, data, fb)

        if u.stationary and params.n_states > 1:
            # delta = ones @ inv(I - gamma + ones); perturbing gamma moves delta
            # by delta dGamma inv(A), adding delta_i * (inv(A) g_delta)_j on ij
            n = params.n_states
            a = np.eye(n) - params.gamma + np.ones((n, n))
            v = np.linalg.solve(a, g_delta)
            g_gamma = g_gamma + np.outer(params.delta, v)

        diff = difference_matrix(params.support_bound, config.order, config.inflation_exempt)
        pen_rows = params.pmfs @ diff.T
        pen_value = float(config.lambdas @ (pen_rows ** 2).sum(axis=1))
        g_pmfs = g_pmfs - 2.0 * config.lambdas[:, np.newaxis] * (pen_rows @ diff)

        gamma_star_grad = _softmax_row_chain(params.gamma, g_gamma)
        pmf_star_grad = _softmax_row_chain(params.pmfs, g_pmfs)
        parts = [gamma_star_grad[~np.eye(params.n_states, dtype=bool)]]
        if not u.stationary:
            delta_star_grad = _softmax_row_chain(params.delta[np.newaxis, :], g_delta[np.newaxis, :])[0]
            parts.append(delta_star_grad[1:])
        parts.append(pmf_star_grad[:, 1:].ravel())
    value = LogLikelihoodValue(fb.loglik, pen_value)
    return value, np.concatenate(parts)


def gradient(u, data, config):
    """Gradient of the penalized log-likelihood w.r.t. the free parameters.

    Ordering matches :func:`counthmm.model.pack_free`.  Raises ``ValueError``
    on a zero-likelihood (non-finite objective) point.
    """
    _, grad = value_and_gradient(u, data, config)
    return grad


def _batched_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _batched_unpack(points, n, k, stationary):
    b = points.shape[0]
    off = ~np.eye(n, dtype=bool)
    pos = n * (n - 1)
    gamma_star = np.zeros((b, n, n))
    gamma_star[:, off] = points[:, :pos]
    delta_star = None
    if not stationary:
        delta_star = np.zeros((b, n))
        delta_star[:, 1:] = points[:, pos:pos + n - 1]
        pos += n - 1
    pmf_star = np.zeros((b, n, k + 1))
    pmf_star[:, :, 1:] = points[:, pos:].reshape(b, n, k)
    return gamma_star, pmf_star, delta_star


def batched_value_and_gradient(points, data, config, n_states, stationary):
    """Penalized objective and gradient at a batch of packed parameter vectors.

    Vectorizes the forward-backward pass over the batch so that evaluating
    many nearby points (e.g. the columns of a finite-difference Hessian)
    costs barely more than one; results match :func:`value_and_gradient`
    point for point.  Rows whose likelihood is zero or whose stationary
    solve fails get value ``-inf`` and a zero gradient instead of raising.

    Parameters
    ----------
    points : ndarray, shape (B, P)
        Packed free-parameter vectors (see :func:`counthmm.model.pack_free`).

    Returns
    -------
    (values, gradients) : (ndarray shape (B,), ndarray shape (B, P))
    """
    points = np.asarray(points, dtype=float)
    b, p = points.shape
    n, k = n_states, data.support_bound
    gamma_star, pmf_star, delta_star = _batched_unpack(points, n, k, stationary)
    gamma = _batched_softmax(gamma_star)
    pmfs = _batched_softmax(pmf_star)
    bad = np.zeros(b, dtype=bool)
    a = None
    if stationary:
        a = np.eye(n)[np.newaxis] - gamma + 1.0
        try:
            delta = np.linalg.solve(np.swapaxes(a, 1, 2), np.ones((b, n, 1)))[..., 0]
        except np.linalg.LinAlgError:
            delta = np.full((b, n), 1.0 / n)
            for i in range(b):
                try:
                    delta[i] = np.linalg.solve(a[i].T, np.ones(n))
                except np.linalg.LinAlgError:
                    bad[i] = True
        residual = np.abs(np.einsum("bi,bij->bj", delta, gamma) - delta).max(axis=1)
        bad |= ~np.isfinite(residual) | (residual > 1e-8) | np.any(delta < 0.0, axis=1)
    else:
        delta = _batched_softmax(delta_star)

    big_t = len(data)
    emis = np.swapaxes(pmfs[:, :, data.values], 1, 2).copy()
    emis[:, data.missing, :] = 1.0
    forward = np.empty((b, big_t, n))
    pre = np.empty((b, big_t, n))
    normalizers = np.empty((b, big_t))
    pre[:, 0] = delta
    for t in range(big_t):
        if t > 0:
            pre[:, t] = np.einsum("bi,bij->bj", forward[:, t - 1], gamma)
        phi = pre[:, t] * emis[:, t]
        norm = phi.sum(axis=1)
        zero = ~np.isfinite(norm) | (norm <= 0.0)
        if zero.any():
            bad |= zero
            norm = np.where(zero, 1.0, norm)
            phi = np.where(zero[:, np.newaxis], 1.0 / n, phi)
        normalizers[:, t] = norm
        forward[:, t] = phi / norm[:, np.newaxis]
    backward = np.empty((b, big_t, n))
    backward[:, -1] = 1.0
    for t in range(big_t - 2, -1, -1):
        nxt = emis[:, t + 1] * backward[:, t + 1]
        backward[:, t] = np.einsum("bij,bj->bi", gamma, nxt) / normalizers[:, t + 1][:, np.newaxis]
    loglik = np.log(normalizers).sum(axis=1)

    with np.errstate(over="ignore", invalid="ignore"):
        rate = pre * backward / normalizers[:, :, np.newaxis]
        g_pmfs = np.zeros((k + 1, b, n))
        observed = np.nonzero(~data.missing)[0]
        np.add.at(g_pmfs, data.values[observed], np.swapaxes(rate[:, observed], 0, 1))
        g_pmfs = np.transpose(g_pmfs, (1, 2, 0))
        weighted_back = emis * backward / normalizers[:, :, np.newaxis]
        g_gamma = np.einsum("bti,btj->bij", forward[:, :-1], weighted_back[:, 1:])
        g_delta = weighted_back[:, 0]
        if stationary and n > 1:
            try:
                v = np.linalg.solve(a, g_delta[..., np.newaxis])[..., 0]
            except np.linalg.LinAlgError:
                v = np.zeros((b, n))
                for i in range(b):
                    try:
                        v[i] = np.linalg.solve(a[i], g_delta[i])
                    except np.linalg.LinAlgError:
                        bad[i] = True
            g_gamma = g_gamma + delta[:, :, np.newaxis] * v[:, np.newaxis, :]

        diff = difference_matrix(k, config.order, config.inflation_exempt)
        pen_rows = pmfs @ diff.T
        pen = (config.lambdas[np.newaxis, :, np.newaxis] * pen_rows ** 2).sum(axis=(1, 2))
        g_pmfs = g_pmfs - 2.0 * config.lambdas[np.newaxis, :, np.newaxis] * (pen_rows @ diff)

        gamma_chain = _softmax_row_chain(gamma, g_gamma)
        pmf_chain = _softmax_row_chain(pmfs, g_pmfs)
        grads = np.empty((b, p))
        off = ~np.eye(n, dtype=bool)
        pos = n * (n - 1)
        grads[:, :pos] = gamma_chain[:, off]
        if not stationary:
            delta_chain = _softmax_row_chain(delta, g_delta)
            grads[:, pos:pos + n - 1] = delta_chain[:, 1:]
            pos += n - 1
        grads[:, pos:] = pmf_chain[:, :, 1:].reshape(b, -1)
    values = loglik - pen
    # rows whose scaled quantities overflowed have no usable gradient
    bad |= ~np.all(np.isfinite(grads), axis=1)
    values[bad] = -np.inf
    grads[bad] = 0.0
    return values, grads
