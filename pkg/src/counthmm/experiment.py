"""Monte-Carlo harness comparing count-HMM estimators on simulated data.

Each run simulates a series from a user-specified true model, fits every
requested estimator, and records per-state Kullback-Leibler divergence of
the emission estimates, mean absolute error of the transition estimates,
and the state misclassification rate of the decoded path.  Results come
back per run and averaged over runs.

Estimators
----------
parametric-poisson
    HMM with Poisson emissions (truncated to the support and renormalized),
    fitted by direct likelihood maximization.
nonparam-unpenalized
    Free emission p.m.f.s, no roughness penalty.
nonparam-penalized
    Free emission p.m.f.s with the difference penalty; smoothing parameters
    either fixed in the spec or selected by cross-validation per run.
true-parametric-oracle
    Emission p.m.f.s held at the truth; only the transition matrix (and,
    through it, the stationary initial distribution) is estimated.

States are aligned by ascending emission mean on both the true and the
fitted side, so per-state metrics compare matching states; the
misclassification rate additionally minimizes over relabelings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import poisson

from .estimation import FitConfig, FitError, canonicalize, fit
from .inference import kld, misclassification_rate, transition_mae, viterbi
from .likelihood import PenaltyConfig, forward_loglik, value_and_gradient
from .model import (
    HmmParams,
    UnconstrainedParams,
    from_unconstrained,
    simulate,
    softmax_rows,
    stationary_distribution,
    to_unconstrained,
)
from .smoothing import CvGrid, greedy_search, make_folds

ESTIMATORS = (
    "parametric-poisson",
    "nonparam-unpenalized",
    "nonparam-penalized",
    "true-parametric-oracle",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Configuration of a simulation experiment.

    `lambdas` is either a per-state vector of smoothing parameters or the
    string ``"cv"``, in which case `grid` and `n_folds` drive a greedy
    cross-validated selection inside every run.
    """

    true_params: HmmParams
    length: int
    n_runs: int
    estimators: tuple
    order: int
    lambdas: object
    grid: CvGrid | None
    n_folds: int
    inflation_exempt: frozenset
    seed: int
    n_starts: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValueError(
                f"unknown estimator(s) {unknown}; choose from {list(ESTIMATORS)}"
            )
        needs_lambda = "nonparam-penalized" in self.estimators
        if needs_lambda and not self.uses_cv:
            lambdas = np.asarray(self.lambdas, dtype=float)
            if lambdas.shape != (self.true_params.n_states,):
                raise ValueError("lambdas must carry one value per state (or be 'cv')")
        if needs_lambda and self.uses_cv and self.grid is None:
            raise ValueError("lambda selection by CV requires a grid")
        # metrics are matched state by state, so both sides share one ordering
        object.__setattr__(self, "true_params", canonicalize(self.true_params))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(
            self, "inflation_exempt", frozenset(int(c) for c in self.inflation_exempt)
        )

    @property
    def uses_cv(self):
        return isinstance(self.lambdas, str)


@dataclass(frozen=True)
class RunRecord:
    """Metrics of one estimator on one simulated run."""

    run: int
    estimator: str
    kld: tuple
    mae: float
    smr: float


@dataclass(frozen=True)
class ExperimentResult:
    """Per-run records plus per-estimator means, in run-index order."""

    records: tuple
    n_states: int

    def aggregates(self):
        """Mean KLD/MAE/SMR per estimator, recomputed from the records."""
        out = {}
        for name in dict.fromkeys(r.estimator for r in self.records):
            rows = [r for r in self.records if r.estimator == name]
            out[name] = {
                "kld": tuple(np.mean([r.kld for r in rows], axis=0)),
                "mae": float(np.mean([r.mae for r in rows])),
                "smr": float(np.mean([r.smr for r in rows])),
            }
        return out

    def table(self):
        """(header, rows) of the tidy results table; aggregate rows last."""
        header = ["run", "estimator"]
        header += [f"kld_state{i + 1}" for i in range(self.n_states)]
        header += ["transition_mae", "misclassification_rate"]
        rows = []
        for r in self.records:
            rows.append([r.run, r.estimator, *r.kld, r.mae, r.smr])
        for name, agg in self.aggregates().items():
            rows.append(["mean", name, *agg["kld"], agg["mae"], agg["smr"]])
        return header, rows


def _params_from_doc(doc):
    gamma = np.array(doc["gamma"], dtype=float)
    pmfs = np.array(doc["pmfs"], dtype=float)
    if "delta" in doc:
        return HmmParams(gamma, np.array(doc["delta"], dtype=float), pmfs,
                         stationary=bool(doc.get("stationary", False)))
    return HmmParams.with_stationary_delta(gamma, pmfs)


def spec_from_dict(doc):
    """Build an :class:`ExperimentSpec` from a plain JSON-style dict."""
    try:
        true_params = _params_from_doc(doc["true_model"])
        lambdas = doc.get("lambda", "cv")
        if not isinstance(lambdas, str):
            lambdas = tuple(float(v) for v in np.atleast_1d(lambdas))
        elif lambdas != "cv":
            raise ValueError(f"lambda must be a number list or 'cv', got {lambdas!r}")
        grid = None
        if "grid" in doc:
            g = doc["grid"]
            step = float(g.get("log_step", 1.0))
            exponents = np.arange(float(g["lo"]), float(g["hi"]) + 0.5 * step, step)
            grid = CvGrid(10.0 ** exponents, true_params.n_states)
        return ExperimentSpec(
            true_params=true_params,
            length=int(doc["length"]),
            n_runs=int(doc["n_runs"]),
            estimators=tuple(doc["estimators"]),
            order=int(doc.get("order", 3)),
            lambdas=lambdas,
            grid=grid,
            n_folds=int(doc.get("folds", 20)),
            inflation_exempt=frozenset(doc.get("inflation_exempt", ())),
            seed=int(doc.get("seed", 0)),
            n_starts=int(doc.get("starts", 5)),
        )
    except KeyError as exc:
        raise ValueError(f"experiment spec is missing required field {exc}") from None


def load_experiment_spec(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return spec_from_dict(doc)


def truncated_poisson_pmfs(means, support_bound):
    """Poisson p.m.f.s restricted to {0..K} and renormalized, one row per mean."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    if np.any(means <= 0.0):
        raise ValueError("Poisson means must be positive")
    pmfs = poisson.pmf(np.arange(support_bound + 1)[np.newaxis, :], means[:, np.newaxis])
    totals = pmfs.sum(axis=1)
    if np.any(totals < 1e-12):
        raise ValueError("Poisson mean places essentially no mass on the support")
    return pmfs / totals[:, np.newaxis]


def fit_poisson_hmm(data, n_states, n_starts=5, seed=0):
    """Fit an HMM with (truncated) Poisson emissions by direct maximization.

    Parameters are the transition logits and log-means; the initial
    distribution is tied to the stationary one.  The problem is only a few
    dimensions, so a derivative-free simplex search per start is enough.
    States are returned in ascending order of estimated mean.
    """
    k = data.support_bound
    observed = np.sort(data.observed_values())
    groups = np.array_split(observed, n_states) if observed.size >= n_states else [observed] * n_states
    means0 = np.array([max(float(np.mean(g)) if g.size else 1.0, 0.1) for g in groups])
    off_diag = ~np.eye(n_states, dtype=bool)

    def unpack(vec):
        gamma_star = np.zeros((n_states, n_states))
        gamma_star[off_diag] = vec[: n_states * (n_states - 1)]
        gamma = softmax_rows(gamma_star)
        means = np.exp(vec[n_states * (n_states - 1):])
        return gamma, means

    def objective(vec):
        gamma, means = unpack(vec)
        try:
            pmfs = truncated_poisson_pmfs(means, k)
            params = HmmParams.with_stationary_delta(gamma, pmfs)
            loglik = forward_loglik(params, data)
        except ValueError:
            return np.inf
        return -loglik if np.isfinite(loglik) else np.inf

    base = np.concatenate([
        np.full(n_states * (n_states - 1), np.log(0.1 / 0.9) if n_states > 1 else 0.0),
        np.log(means0),
    ])
    rng = np.random.default_rng(seed)
    best_value, best_vec = np.inf, None
    for s in range(n_starts):
        x0 = base if s == 0 else base + rng.normal(0.0, 0.5, size=base.size)
        result = minimize(objective, x0, method="Nelder-Mead",
                          options={"maxiter": 5000, "xatol": 1e-6, "fatol": 1e-9})
        if np.isfinite(result.fun) and result.fun < best_value:
            best_value, best_vec = result.fun, result.x
    if best_vec is None:
        raise FitError("Poisson HMM fit failed from every start point")
    gamma, means = unpack(best_vec)
    params = HmmParams.with_stationary_delta(gamma, truncated_poisson_pmfs(means, k))
    return canonicalize(params)


def fit_oracle_transitions(data, true_params, n_starts=5, seed=0):
    """Estimate the transition matrix with emissions pinned at the truth.

    Only the transition logits are free; emission logits stay at the true
    p.m.f.s (floored away from exact zeros) and the initial distribution is
    the stationary one of the running transition estimate.
    """
    n = true_params.n_states
    pmf_star = to_unconstrained(
        HmmParams.with_stationary_delta(true_params.gamma, true_params.pmfs)
    ).pmf_star
    zero_penalty = PenaltyConfig(1, np.zeros(n))
    off_diag = ~np.eye(n, dtype=bool)
    n_gamma = n * (n - 1)

    def objective(gvec):
        gamma_star = np.zeros((n, n))
        gamma_star[off_diag] = gvec
        u = UnconstrainedParams(gamma_star, pmf_star, None)
        try:
            value, grad = value_and_gradient(u, data, zero_penalty)
        except ValueError:
            return np.inf, np.zeros(n_gamma)
        if not np.isfinite(value.penalized):
            return np.inf, np.zeros(n_gamma)
        return -value.penalized, -grad[:n_gamma]

    base = np.full(n_gamma, np.log(0.1 / 0.9)) if n > 1 else np.zeros(0)
    rng = np.random.default_rng(seed)
    best_value, best_vec = np.inf, None
    for s in range(n_starts):
        x0 = base if s == 0 else base + rng.normal(0.0, 1.0, size=base.size)
        result = minimize(objective, x0, jac=True, method="L-BFGS-B",
                          options={"maxiter": 500, "ftol": 1e-10, "gtol": 1e-6})
        value = result.fun if np.isfinite(result.fun) else objective(x0)[0]
        vec = result.x if np.isfinite(result.fun) else x0
        if value < best_value:
            best_value, best_vec = value, vec
    if best_vec is None or not np.isfinite(best_value):
        raise FitError("oracle transition fit failed from every start point")
    gamma_star = np.zeros((n, n))
    gamma_star[off_diag] = best_vec
    gamma = softmax_rows(gamma_star)
    return HmmParams(gamma, stationary_distribution(gamma), true_params.pmfs,
                     stationary=True)


def _select_lambdas(spec, data, run_seed):
    fold_plan = make_folds(len(data), spec.n_folds, seed=run_seed)
    fit_config = FitConfig(n_starts=spec.n_starts, seed=run_seed)
    result = greedy_search(spec.grid, data, spec.true_params.n_states, spec.order,
                           fold_plan, fit_config=fit_config,
                           inflation_exempt=spec.inflation_exempt)
    return np.asarray(result.best_lambda, dtype=float)


def _fit_estimator(name, spec, data, run_seed):
    n = spec.true_params.n_states
    if name == "parametric-poisson":
        return fit_poisson_hmm(data, n, n_starts=spec.n_starts, seed=run_seed)
    if name == "true-parametric-oracle":
        return fit_oracle_transitions(data, spec.true_params,
                                      n_starts=spec.n_starts, seed=run_seed)
    if name == "nonparam-unpenalized":
        lambdas = np.zeros(n)
    else:
        lambdas = (np.asarray(spec.lambdas, dtype=float) if not spec.uses_cv
                   else _select_lambdas(spec, data, run_seed))
    penalty_config = PenaltyConfig(spec.order, lambdas, spec.inflation_exempt)
    config = FitConfig(n_starts=spec.n_starts, seed=run_seed)
    return fit(data, n, penalty_config, config).params


def run_experiment(spec, progress=None):
    """Execute every run of the experiment and collect metric records.

    Run r uses seed `spec.seed + r` (r = 1..n_runs) for both the simulation
    and the fits, so runs are distinct but individually reproducible.
    `progress`, when given, is called as progress(run, estimator) before
    each fit; output order is by run index then by the spec's estimator
    order regardless of any scheduling.
    """
    records = []
    for run in range(1, spec.n_runs + 1):
        run_seed = spec.seed + run
        true_states, series = simulate(spec.true_params, spec.length, run_seed)
        for name in spec.estimators:
            if progress is not None:
                progress(run, name)
            est = _fit_estimator(name, spec, series, run_seed)
            decoded = viterbi(est, series).states
            records.append(RunRecord(
                run=run,
                estimator=name,
                kld=tuple(kld(spec.true_params.pmfs, est.pmfs)),
                mae=float(transition_mae(est.gamma, spec.true_params.gamma).mean()),
                smr=misclassification_rate(decoded, true_states),
            ))
    return ExperimentResult(tuple(records), spec.true_params.n_states)
