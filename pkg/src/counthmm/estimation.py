"""Maximum penalized likelihood fitting with a multi-start strategy.

Each start point runs a quasi-Newton ascent (L-BFGS-B on the negated
objective, with the analytic gradient).  Large smoothing weights make the
objective stiff; those fits continue with a second-order polish that
whitens the coordinates using a finite-difference Hessian and reruns the
quasi-Newton ascent in the whitened system.  The start reaching the highest
penalized log-likelihood wins.  Reported states are ordered by ascending
emission mean so results are label-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .likelihood import batched_value_and_gradient, penalized_loglik, value_and_gradient
from .model import (
    HmmParams,
    UnconstrainedParams,
    from_unconstrained,
    pack_free,
    to_unconstrained,
    unpack_free,
)

# relative objective-change stopping rule, alongside the gradient tolerance
_FTOL = 1e-10
_HUGE = np.inf
# smoothing weight beyond which first-order ascent alone stalls (the penalty
# curvature dwarfs the likelihood's), so a preconditioned polish follows
_POLISH_THRESHOLD = 1e3
_POLISH_MAX_ROUNDS = 12
_POLISH_INNER_MAXITER = 400
# objective improvement below this relative level counts as a stall
_POLISH_STALL_TOL = 1e-9


class FitError(RuntimeError):
    """Raised when no start point produced a finite optimum.

    Carries per-start diagnostics in `diagnostics` (one dict per start).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings for a penalized fit."""

    n_starts: int = 10
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-6
    stationary: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.gradient_tolerance <= 0.0:
            raise ValueError("gradient_tolerance must be > 0")


@dataclass(frozen=True)
class FitResult:
    """Outcome of a penalized maximum likelihood fit.

    `loglik` is the unpenalized log-likelihood at the optimum and
    `penalized_loglik` the objective that was maximized; the two coincide
    when every smoothing parameter is zero.
    """

    params: HmmParams
    loglik: float
    penalized_loglik: float
    converged: bool
    n_iterations: int
    start_index_of_best: int
    seed: int
    start_diagnostics: tuple = field(default=(), repr=False)


def make_starts(data, n_states, n_starts, seed, stationary=True, extra_starts=()):
    """Start points for the multi-start optimization.

    Start 0 is deterministic: the observed counts are split at empirical
    quantiles into `n_states` groups, each state's p.m.f. is the group's
    frequency histogram mixed half-and-half with the uniform distribution
    (so every count keeps positive mass and group means stay ordered), the
    transition matrix has 0.9 on the diagonal, and the initial distribution
    starts uniform when it is a free parameter.  Remaining starts jitter
    start 0 on the logit scale with standard normal noise.  `extra_starts`
    (e.g. warm starts from a neighboring fit) are prepended as given.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    k = data.support_bound
    observed = np.sort(data.observed_values())
    uniform = np.full(k + 1, 1.0 / (k + 1))
    pmfs = np.empty((n_states, k + 1))
    if observed.size >= n_states:
        groups = np.array_split(observed, n_states)
    else:
        groups = [observed] * n_states
    for i, group in enumerate(groups):
        if group.size:
            hist = np.bincount(group, minlength=k + 1).astype(float)
            hist /= hist.sum()
            pmfs[i] = 0.5 * hist + 0.5 * uniform
        else:
            pmfs[i] = uniform
    if n_states == 1:
        gamma = np.ones((1, 1))
    else:
        gamma = np.full((n_states, n_states), 0.1 / (n_states - 1))
        np.fill_diagonal(gamma, 0.9)
    delta = np.full(n_states, 1.0 / n_states)
    base_params = HmmParams(gamma, delta, pmfs)
    base = to_unconstrained(base_params)
    if stationary:
        base = UnconstrainedParams(base.gamma_star, base.pmf_star, None)
    starts = list(extra_starts) + [base]
    if n_starts > 1:
        rng = np.random.default_rng(seed)
        base_vec = pack_free(base)
        for _ in range(n_starts - 1):
            jitter = rng.normal(0.0, 1.0, size=base_vec.size)
            starts.append(unpack_free(base_vec + jitter, n_states, k, stationary))
    return starts


def _canonical_state_order(params):
    """Permutation putting states in ascending order of emission mean."""
    support = np.arange(params.support_bound + 1)
    means = params.pmfs @ support
    return np.argsort(means, kind="stable")


def canonicalize(params):
    """Relabel states so emission means are ascending."""
    order = _canonical_state_order(params)
    if np.array_equal(order, np.arange(params.n_states)):
        return params
    gamma = params.gamma[np.ix_(order, order)]
    return HmmParams(gamma, params.delta[order], params.pmfs[order], params.stationary)


def _fd_hessian(x, data, penalty_config, n_states, stationary):
    """Hessian of the negated objective by forward differences of the gradient.

    All perturbed points are evaluated in one batched pass, so the cost is a
    small multiple of a single gradient.  Raises ``ValueError`` when any
    perturbation leaves the feasible region (non-finite rows).
    """
    steps = 1e-7 * (1.0 + np.abs(x))
    points = np.vstack([x[np.newaxis, :], x[np.newaxis, :] + np.diag(steps)])
    _, grads = batched_value_and_gradient(points, data, penalty_config, n_states, stationary)
    hessian = (grads[1:] - grads[0]) / steps[:, np.newaxis]
    if not np.all(np.isfinite(hessian)):
        raise ValueError("finite-difference Hessian left the feasible region")
    return -0.5 * (hessian + hessian.T)


def _preconditioned_polish(x, f, objective, data, penalty_config, n_states,
                           stationary, config):
    """Second-order finisher for stiff penalties (minimization sense).

    A large smoothing weight makes the objective's curvature span many
    orders of magnitude, which stalls quasi-Newton ascent.  Each round here
    whitens the coordinates with the eigendecomposition of the
    finite-difference Hessian and reruns L-BFGS in the whitened system,
    where the curvature is near unit scale.  Rounds repeat (the Hessian goes
    stale as the iterate moves) until the raw gradient meets the configured
    tolerance or the objective stops improving.

    Returns (x, f, converged, total_inner_iterations); never returns a point
    worse than the input.
    """
    best_x, best_f = x, float(f)
    total_iterations = 0
    converged = False
    for _ in range(_POLISH_MAX_ROUNDS):
        try:
            hessian = _fd_hessian(best_x, data, penalty_config, n_states, stationary)
            eigvals, eigvecs = np.linalg.eigh(hessian)
        except (ValueError, np.linalg.LinAlgError):
            break
        top = float(eigvals.max(initial=0.0))
        floor = max(top * 1e-12, 1e-8) if top > 0.0 else 1.0
        transform = eigvecs / np.sqrt(np.maximum(eigvals, floor))
        base = best_x

        def whitened(y):
            value, grad = objective(base + transform @ y)
            return value, transform.T @ grad

        inner = minimize(
            whitened,
            np.zeros(base.size),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": _POLISH_INNER_MAXITER, "ftol": 1e-13,
                     "gtol": 1e-9, "maxls": 50, "maxfun": 20000},
        )
        total_iterations += int(inner.nit)
        candidate_x = base + transform @ inner.x
        candidate_f, candidate_g = objective(candidate_x)
        if not np.isfinite(candidate_f) or candidate_f > best_f:
            break
        improvement = best_f - candidate_f
        best_x, best_f = candidate_x, float(candidate_f)
        gradient_norm = float(np.abs(candidate_g).max(initial=0.0))
        if gradient_norm <= config.gradient_tolerance:
            converged = True
            break
        if improvement <= _POLISH_STALL_TOL * (1.0 + abs(best_f)):
            # progress is below numerical resolution; accept as converged
            # when the gradient is small relative to the objective scale
            converged = gradient_norm <= 1e-4 * (1.0 + abs(best_f))
            break
    return best_x, best_f, converged, total_iterations


def _run_one_start(u0, data, penalty_config, config):
    n, k = u0.n_states, u0.support_bound
    stationary = u0.stationary

    def objective(vec):
        u = unpack_free(vec, n, k, stationary)
        try:
            value, grad = value_and_gradient(u, data, penalty_config)
        except ValueError:
            return _HUGE, np.zeros(vec.size)
        if not np.isfinite(value.penalized) or not np.all(np.isfinite(grad)):
            return _HUGE, np.zeros(vec.size)
        return -value.penalized, -grad

    x0 = pack_free(u0)
    f0, _ = objective(x0)
    stiff = float(penalty_config.lambdas.max()) >= _POLISH_THRESHOLD
    # with a stiff penalty the quasi-Newton phase only needs to reach the
    # neighborhood of the optimum; the preconditioned polish finishes the job
    maxiter = min(config.max_iterations, 500) if stiff else config.max_iterations
    result = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": maxiter,
            "ftol": _FTOL,
            "gtol": config.gradient_tolerance,
            "maxls": 50,
            "maxfun": 20 * maxiter + 10000,
        },
    )
    # never report a point worse than its start
    if np.isfinite(result.fun) and result.fun <= f0:
        best_f, best_x = float(result.fun), result.x
        converged = bool(result.success)
    else:
        best_f, best_x = (float(f0) if np.isfinite(f0) else _HUGE), x0
        converged = False
    n_iterations = int(result.nit)
    message = str(result.message)
    if stiff and np.isfinite(best_f):
        best_x, best_f, converged, polish_iterations = _preconditioned_polish(
            best_x, best_f, objective, data, penalty_config, n, stationary, config
        )
        n_iterations += polish_iterations
        message = "preconditioned polish " + ("converged" if converged else "stalled")
    return {
        "objective": -best_f if best_f < _HUGE else -np.inf,
        "x": best_x,
        "converged": converged,
        "n_iterations": n_iterations,
        "message": message,
    }


def fit(data, n_states, penalty_config, config=None, extra_starts=()):
    """Fit an N-state model by maximizing the penalized log-likelihood.

    Parameters
    ----------
    data : CountSeries
        Observations; missing entries are integrated out.
    n_states : int
        Number of latent states.
    penalty_config : PenaltyConfig
        Difference order, per-state smoothing parameters, and exempt counts.
    config : FitConfig, optional
        Multi-start and convergence settings.
    extra_starts : sequence of UnconstrainedParams, optional
        Additional start points (e.g. warm starts) tried before the built-in
        ones; they count toward neither `n_starts` nor the seed stream.

    Returns
    -------
    FitResult
        Best start's parameters (states sorted by emission mean), with the
        unpenalized and penalized log-likelihood at the optimum.

    Raises
    ------
    FitError
        If every start ended at a non-finite objective.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if penalty_config.lambdas.size != n_states:
        raise ValueError("penalty_config must carry one smoothing parameter per state")
    config = config or FitConfig()
    for extra in extra_starts:
        if extra.stationary != config.stationary:
            raise ValueError("extra_starts must match the configured delta handling")
    starts = make_starts(
        data, n_states, config.n_starts, config.seed,
        stationary=config.stationary, extra_starts=extra_starts,
    )
    outcomes = []
    for u0 in starts:
        outcomes.append(_run_one_start(u0, data, penalty_config, config))
    best_index = -1
    best_objective = -np.inf
    for i, out in enumerate(outcomes):
        if np.isfinite(out["objective"]) and out["objective"] > best_objective:
            best_objective = out["objective"]
            best_index = i
    diagnostics = tuple(
        {k: v for k, v in out.items() if k != "x"} | {"start_index": i}
        for i, out in enumerate(outcomes)
    )
    if best_index < 0:
        raise FitError(
            f"all {len(outcomes)} start points failed to reach a finite objective",
            list(diagnostics),
        )
    best = outcomes[best_index]
    u_best = unpack_free(best["x"], n_states, data.support_bound, config.stationary)
    # evaluate both reported likelihood figures at the same point so their
    # difference is exactly the penalty
    value = penalized_loglik(u_best, data, penalty_config)
    params = canonicalize(from_unconstrained(u_best))
    return FitResult(
        params=params,
        loglik=value.loglik,
        penalized_loglik=value.penalized,
        converged=best["converged"],
        n_iterations=best["n_iterations"],
        start_index_of_best=best_index,
        seed=config.seed,
        start_diagnostics=diagnostics,
    )
