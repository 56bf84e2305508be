"""Command-line interface.

Subcommands: `fit` (penalized fit, optionally selecting the smoothing
parameters by CV first), `cv` (smoothing selection only), `decode`
(Viterbi path plus posterior state probabilities), `residuals`
(pseudo-residual and ACF tables), `simulate` (draw a series from a saved
model), and `experiment` (Monte-Carlo estimator comparison).

Everything is deterministic given the flags and seeds: outputs carry no
timestamps, floats are printed with their shortest round-trip repr, and
repeated invocations are byte-identical.  Failures exit 2 (bad input or
configuration) or 3 (numerical failure) with a one-line JSON error record
on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .estimation import FitConfig, FitError, fit
from .experiment import load_experiment_spec, run_experiment
from .inference import pseudo_residuals, state_probabilities, viterbi
from .io import (
    ParseError,
    load_counts,
    load_model,
    model_to_dict,
    save_counts,
    save_model,
    write_table,
)
from .likelihood import PenaltyConfig
from .model import simulate
from .smoothing import CvGrid, greedy_search, make_folds

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class CliError(Exception):
    """Failure with a designated exit code and a machine-readable record."""

    def __init__(self, message, code, kind=None):
        super().__init__(message)
        self.code = code
        self.kind = kind or ("ConfigError" if code == EXIT_CONFIG else "NumericalError")


class _Parser(argparse.ArgumentParser):
    # route argparse's own failures through the JSON error path (exit 2)
    def error(self, message):
        raise CliError(message, EXIT_CONFIG, kind="ArgumentError")


def _config(fn, *args, **kwargs):
    """Run a configuration-phase callable; failures exit 2."""
    try:
        return fn(*args, **kwargs)
    except ParseError as exc:
        raise CliError(str(exc), EXIT_CONFIG, kind="ParseError") from exc
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        raise CliError(str(exc), EXIT_CONFIG, kind=type(exc).__name__) from exc


def _numerical(fn, *args, **kwargs):
    """Run a numerical-phase callable; failures exit 3."""
    try:
        return fn(*args, **kwargs)
    except (FitError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise CliError(str(exc), EXIT_NUMERICAL, kind=type(exc).__name__) from exc


def _parse_lambda(text, n_states):
    """Comma list of per-state smoothing values, a single shared value, or 'cv'."""
    if text.strip().lower() == "cv":
        return "cv"
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise CliError(f"--lambda expects numbers or 'cv', got {text!r}", EXIT_CONFIG) from None
    if len(values) == 1:
        values = values * n_states
    if len(values) != n_states:
        raise CliError(
            f"--lambda needs one value per state ({n_states}), got {len(values)}",
            EXIT_CONFIG,
        )
    if any(not np.isfinite(v) or v < 0.0 for v in values):
        raise CliError("--lambda values must be finite and >= 0", EXIT_CONFIG)
    return np.array(values)


def _parse_grid(text, n_states):
    """Grid spec lo:hi[:log-step] of base-10 exponents."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise CliError(f"--grid expects lo:hi[:log-step], got {text!r}", EXIT_CONFIG)
    try:
        lo, hi = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise CliError(f"--grid expects numeric bounds, got {text!r}", EXIT_CONFIG) from None
    if step <= 0.0 or hi < lo:
        raise CliError("--grid needs hi >= lo and a positive log-step", EXIT_CONFIG)
    axis = 10.0 ** np.arange(lo, hi + 0.5 * step, step)
    return _config(CvGrid, axis, n_states)


def _parse_exempt(text):
    if not text:
        return frozenset()
    try:
        return frozenset(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise CliError(
            f"--inflation-exempt expects a comma list of counts, got {text!r}",
            EXIT_CONFIG,
        ) from None


def _load_series(path, support):
    return _config(load_counts, path, support)


def _load_model(path):
    params, penalty_config, _ = _config(load_model, path)
    return params, penalty_config


def _fit_config(args):
    return _config(
        FitConfig,
        n_starts=args.starts,
        stationary=args.stationary,
        seed=args.seed,
    )


def _select_by_cv(args, series, n_states, exempt, fit_config):
    if args.grid is None:
        raise CliError("--lambda cv requires --grid", EXIT_CONFIG)
    grid = _parse_grid(args.grid, n_states)
    folds = _config(make_folds, len(series), args.folds, args.seed)
    return _numerical(
        greedy_search, grid, series, n_states, args.order, folds,
        fit_config=fit_config, inflation_exempt=exempt,
    )


def cmd_fit(args):
    series = _load_series(args.data, args.support)
    exempt = _parse_exempt(args.inflation_exempt)
    fit_config = _fit_config(args)
    lam = _parse_lambda(args.lam, args.states)
    cv_result = None
    if isinstance(lam, str):
        cv_result = _select_by_cv(args, series, args.states, exempt, fit_config)
        lam = np.asarray(cv_result.best_lambda, dtype=float)
    penalty_config = _config(PenaltyConfig, args.order, lam, exempt)
    result = _numerical(fit, series, args.states, penalty_config, fit_config)
    meta = {
        "loglik": result.loglik,
        "penalized_loglik": result.penalized_loglik,
        "seed": result.seed,
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "n_starts": fit_config.n_starts,
    }
    if cv_result is not None:
        meta["lambda_selected_by_cv"] = [float(v) for v in cv_result.best_lambda]
    if args.out is None:
        doc = model_to_dict(result.params, penalty_config, meta)
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    else:
        save_model(args.out, result.params, penalty_config, meta)


def cmd_cv(args):
    series = _load_series(args.data, args.support)
    exempt = _parse_exempt(args.inflation_exempt)
    fit_config = _fit_config(args)
    grid = _parse_grid(args.grid, args.states)
    folds = _config(make_folds, len(series), args.folds, args.seed)
    start = None
    if args.start_lambda is not None:
        start = _parse_lambda(args.start_lambda, args.states)
        if isinstance(start, str):
            raise CliError("--start-lambda must be numeric", EXIT_CONFIG)
    result = _numerical(
        greedy_search, grid, series, args.states, args.order, folds,
        start_lambda=start, fit_config=fit_config, inflation_exempt=exempt,
    )
    header = ["step"] + [f"lambda_state{i + 1}" for i in range(args.states)]
    header.append("mean_oos_loglik")
    rows = [[step, *lam, score] for step, (lam, score) in enumerate(result.path)]
    rows.append(["selected", *result.best_lambda, result.path[-1][1]])
    write_table(args.out, header, rows)


def cmd_decode(args):
    params, _ = _load_model(args.model)
    series = _load_series(args.data, params.support_bound)
    decoded = _numerical(viterbi, params, series)
    posterior = _numerical(state_probabilities, params, series)
    header = ["t", "count", "state"]
    header += [f"p_state{i + 1}" for i in range(params.n_states)]
    rows = []
    for t in range(len(series)):
        count = "NA" if series.missing[t] else int(series.values[t])
        rows.append([t + 1, count, int(decoded.states[t]) + 1, *posterior[t]])
    write_table(args.out, header, rows)


def _autocorrelations(x, n_lags):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise CliError(
            "residuals contain non-finite values; ACF undefined "
            "(the model assigns zero conditional mass near an observation)",
            EXIT_NUMERICAL,
        )
    centered = x - x.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise CliError("residuals have zero variance; ACF undefined", EXIT_NUMERICAL)
    return [float(centered[:-k] @ centered[k:]) / denom for k in range(1, n_lags + 1)]


def cmd_residuals(args):
    params, _ = _load_model(args.model)
    series = _load_series(args.data, params.support_bound)
    if bool(series.missing.any()):
        raise CliError("residuals require a fully observed series", EXIT_CONFIG)
    res = _numerical(pseudo_residuals, params, series)
    header = ["t", "count", "lower", "mid", "upper", "saturated_low", "saturated_high"]
    rows = [
        [t + 1, int(series.values[t]), res.lower[t], res.mid[t], res.upper[t],
         int(res.saturated_low[t]), int(res.saturated_high[t])]
        for t in range(len(series))
    ]
    write_table(args.out, header, rows)
    if args.acf_out is not None:
        n_lags = min(args.lags, len(series) - 1)
        if n_lags < 1:
            raise CliError("series too short for any ACF lag", EXIT_CONFIG)
        acf = _autocorrelations(res.mid, n_lags)
        write_table(args.acf_out, ["lag", "acf"],
                    [[k + 1, v] for k, v in enumerate(acf)])


def cmd_simulate(args):
    params, _ = _load_model(args.model)
    if args.length < 1:
        raise CliError("--length must be >= 1", EXIT_CONFIG)
    states, series = _numerical(simulate, params, args.length, args.seed)
    if args.out is None:
        sys.stdout.write("count\n")
        sys.stdout.write("".join(f"{int(v)}\n" for v in series.values))
    else:
        save_counts(args.out, series)
    if args.states_out is not None:
        write_table(args.states_out, ["t", "state"],
                    [[t + 1, int(s) + 1] for t, s in enumerate(states)])


def cmd_experiment(args):
    spec = _config(load_experiment_spec, args.spec)
    result = _numerical(run_experiment, spec)
    header, rows = result.table()
    write_table(args.out, header, rows)


def _add_common_fit_flags(sub):
    sub.add_argument("--states", type=int, required=True,
                     help="number of latent states")
    sub.add_argument("--order", type=int, default=3,
                     help="difference order m of the penalty (default 3)")
    sub.add_argument("--folds", type=int, default=20,
                     help="number of CV folds (default 20)")
    sub.add_argument("--support", type=int, default=None,
                     help="support bound K (default: max count plus a buffer)")
    sub.add_argument("--stationary", action="store_true",
                     help="tie the initial distribution to the stationary one")
    sub.add_argument("--starts", type=int, default=10,
                     help="number of optimizer start points (default 10)")
    sub.add_argument("--seed", type=int, default=0,
                     help="seed for starts and fold assignment (default 0)")
    sub.add_argument("--inflation-exempt", default="",
                     help="comma list of counts excluded from the penalty")


def build_parser():
    parser = _Parser(
        prog="counthmm",
        description="Penalized nonparametric hidden Markov models for count series.",
    )
    parser.add_argument("--version", action="version", version=f"counthmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model by penalized maximum likelihood")
    p_fit.add_argument("data", help="one-column count file (NA = missing)")
    _add_common_fit_flags(p_fit)
    p_fit.add_argument("--lambda", dest="lam", required=True,
                       help="per-state smoothing values (comma list), one shared value, or 'cv'")
    p_fit.add_argument("--grid", default=None,
                       help="CV grid of base-10 exponents, lo:hi[:log-step]")
    p_fit.add_argument("--out", default=None, help="model file path (default: stdout)")
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="select smoothing parameters by cross-validation")
    p_cv.add_argument("data", help="one-column count file (NA = missing)")
    _add_common_fit_flags(p_cv)
    p_cv.add_argument("--grid", required=True,
                      help="grid of base-10 exponents, lo:hi[:log-step]")
    p_cv.add_argument("--start-lambda", default=None,
                      help="grid point to start the greedy search from")
    p_cv.add_argument("--out", default=None, help="table path (default: stdout)")
    p_cv.set_defaults(func=cmd_cv)

    p_dec = sub.add_parser("decode", help="Viterbi path and posterior state probabilities")
    p_dec.add_argument("data", help="one-column count file (NA = missing)")
    p_dec.add_argument("--model", required=True, help="model file from 'fit'")
    p_dec.add_argument("--out", default=None, help="table path (default: stdout)")
    p_dec.set_defaults(func=cmd_decode)

    p_res = sub.add_parser("residuals", help="pseudo-residual diagnostics")
    p_res.add_argument("data", help="one-column count file (fully observed)")
    p_res.add_argument("--model", required=True, help="model file from 'fit'")
    p_res.add_argument("--out", default=None, help="residual table path (default: stdout)")
    p_res.add_argument("--acf-out", default=None,
                       help="also write an autocorrelation table here")
    p_res.add_argument("--lags", type=int, default=20,
                       help="number of ACF lags (default 20)")
    p_res.set_defaults(func=cmd_residuals)

    p_sim = sub.add_parser("simulate", help="draw a series from a saved model")
    p_sim.add_argument("--model", required=True, help="model file")
    p_sim.add_argument("--length", type=int, required=True, help="series length")
    p_sim.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")
    p_sim.add_argument("--out", default=None, help="counts path (default: stdout)")
    p_sim.add_argument("--states-out", default=None,
                       help="also write the latent state path here")
    p_sim.set_defaults(func=cmd_simulate)

    p_exp = sub.add_parser("experiment", help="run a Monte-Carlo estimator comparison")
    p_exp.add_argument("spec", help="experiment spec (JSON)")
    p_exp.add_argument("--out", default=None, help="table path (default: stdout)")
    p_exp.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return EXIT_OK
    except CliError as exc:
        record = {"error": {"code": exc.code, "type": exc.kind, "message": str(exc)}}
        sys.stderr.write(json.dumps(record) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
