"""Data ingestion, model (de)serialization, and table output.

Count files are one column of non-negative integers (text or CSV), with an
optional header line and `NA` marking missing entries.  Models round-trip
through a JSON document; floats are written with Python's shortest
round-trip repr, so load(save(x)) reproduces x bit for bit.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .likelihood import PenaltyConfig
from .model import CountSeries, HmmParams

MODEL_SCHEMA_VERSION = 1

_MISSING_TOKENS = {"na", "nan", ""}


class ParseError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def default_support_bound(max_observed):
    """Support bound with head-room above the largest observed count.

    Leaves the smoothed p.m.f. room to place mass past the observed maximum:
    the larger of 5 extra counts or 10% of the maximum.
    """
    max_observed = int(max_observed)
    return max_observed + max(5, math.ceil(0.1 * max_observed))


def load_counts(path, support_bound=None):
    """Read a one-column count file into a :class:`CountSeries`.

    A non-numeric first line is skipped as a header.  `NA` (any case) or an
    empty field marks a missing entry.  Unless given, the support bound is
    :func:`default_support_bound` of the largest observed count.
    """
    text = Path(path).read_text(encoding="utf-8")
    values, missing = [], []
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        token = raw.strip().strip(",")
        if "," in token:
            raise ParseError("expected a single column of counts", lineno)
        low = token.lower()
        if low in _MISSING_TOKENS:
            if low == "" and lineno == len(lines):
                continue  # trailing newline
            values.append(0)
            missing.append(True)
            continue
        try:
            value = int(token)
        except ValueError:
            if lineno == 1:
                continue  # header
            raise ParseError(f"expected an integer count, got {token!r}", lineno) from None
        if value < 0:
            raise ParseError(f"counts must be non-negative, got {value}", lineno)
        values.append(value)
        missing.append(False)
    if not values:
        raise ParseError(f"no observations found in {path}")
    observed = [v for v, m in zip(values, missing) if not m]
    if support_bound is None:
        if not observed:
            raise ParseError("cannot infer a support bound from a fully missing series")
        support_bound = default_support_bound(max(observed))
    try:
        return CountSeries(np.array(values), np.array(missing), int(support_bound))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def save_counts(path, series):
    """Write a series in the same one-column format `load_counts` reads."""
    lines = ["count"]
    for value, is_missing in zip(series.values, series.missing):
        lines.append("NA" if is_missing else str(int(value)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def model_to_dict(params, penalty_config=None, fit_meta=None):
    """JSON-ready document describing a model (and optionally its fit)."""
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "n_states": params.n_states,
        "support_bound": params.support_bound,
        "stationary": bool(params.stationary),
        "gamma": params.gamma.tolist(),
        "delta": params.delta.tolist(),
        "pmfs": params.pmfs.tolist(),
    }
    if penalty_config is not None:
        doc["penalty"] = {
            "order": penalty_config.order,
            "lambdas": np.asarray(penalty_config.lambdas).tolist(),
            "inflation_exempt": sorted(penalty_config.inflation_exempt),
        }
    if fit_meta is not None:
        doc["fit"] = dict(fit_meta)
    return doc


def model_from_dict(doc):
    """Inverse of :func:`model_to_dict`.

    Returns
    -------
    (HmmParams, PenaltyConfig or None, dict or None)
    """
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ParseError(f"unsupported model schema version {version!r}")
    params = HmmParams(
        np.array(doc["gamma"], dtype=float),
        np.array(doc["delta"], dtype=float),
        np.array(doc["pmfs"], dtype=float),
        stationary=bool(doc.get("stationary", False)),
    )
    penalty_config = None
    if "penalty" in doc:
        pen = doc["penalty"]
        penalty_config = PenaltyConfig(
            int(pen["order"]),
            np.array(pen["lambdas"], dtype=float),
            frozenset(int(c) for c in pen.get("inflation_exempt", ())),
        )
    return params, penalty_config, doc.get("fit")


def save_model(path, params, penalty_config=None, fit_meta=None):
    doc = model_to_dict(params, penalty_config, fit_meta)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model file {path}: {exc}") from exc
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid model file {path}: {exc}") from exc


def format_table(header, rows):
    """Tab-separated table with floats rendered via their shortest repr."""
    def cell(value):
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        return str(value)

    lines = ["\t".join(header)]
    lines.extend("\t".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_table(destination, header, rows):
    """Write a TSV table to a path, or stdout when destination is None."""
    text = format_table(header, rows)
    if destination is None:
        import sys

        sys.stdout.write(text)
    else:
        Path(destination).write_text(text, encoding="utf-8")
