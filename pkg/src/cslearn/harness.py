"""Experiment orchestration: Monte Carlo coverage studies, CSV-driven runs,
and report serialization.

Every replicate is keyed by (master seed, replicate index), so skipped
replicates never shift the streams of later ones and parallel execution is
byte-identical to serial execution.
"""

import csv as _csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import partial

import numpy as np

from . import simgen
from .aggregate import (
    PredictionSet,
    aggregate_intersection,
    aggregate_union,
    aggregate_wta,
    weighted_majority_vote,
)
from .conformal import (
    CalibrationScores,
    ConformalConfig,
    Interval,
    full_conformal_interval,
    split_conformal_interval,
)
from .ensemble import cv_predictions, solve_simplex_weights
from .errors import ConfigError, CslError, DataError, NumericalError
from .learners import LEARNER_KINDS, Dataset, LearnerSpec, fit_learner, \
    nonconformity_score

DEFAULT_LIBRARY = ("ols", "lasso", "knn", "forest", "locscale")
SCENARIO_PRESETS = {
    "S1": ("ols", "knn", "forest", "locscale"),
    "S2": ("ols", "knn", "forest", "locscale"),
    "S3": ("ols", "knn", "forest", "locscale"),
    "S4": ("ols", "knn", "forest", "lasso"),
}
RULES = ("vote", "intersection", "union", "wta")
FORMATS = ("json", "csv", "table")

# Flat config keys that feed learner hyperparameters.
_LEARNER_PARAM_KEYS = {
    "knn_k": ("knn", "k"),
    "lasso_num_lambdas": ("lasso", "num_lambdas"),
    "lasso_lambda_min_ratio": ("lasso", "lambda_min_ratio"),
    "lasso_cv_folds": ("lasso", "cv_folds"),
    "forest_trees": ("forest", "n_trees"),
    "forest_max_depth": ("forest", "max_depth"),
    "forest_min_leaf": ("forest", "min_leaf"),
    "forest_mtry": ("forest", "mtry"),
    "locscale_iterations": ("locscale", "iterations"),
}


@dataclass
class ExperimentConfig:
    """Flat experiment settings; unset optional fields take mode-specific
    defaults at run time."""

    scenario: str = None
    csv_path: str = None
    n: int = 500
    replicates: int = 1000
    alpha: float = 0.1
    mode: str = "split"
    split_fraction: float = None
    folds: int = 5
    seed: int = 0
    threads: int = 1
    learners: tuple = None
    rule: str = "vote"
    grid_step: float = 1e-4
    grid_margin: float = 0.25
    full_rank_includes_candidate: bool = False
    out: str = None
    format: str = "json"
    response: str = "response"
    test_fraction: float = 0.1
    log_response: bool = False
    learner_params: dict = field(default_factory=dict)


@dataclass
class ReplicateRecord:
    replicate: int
    covered: bool
    width: float
    hull_width: float
    weights: tuple
    rule_used: str
    dominant: bool
    preferred: str
    unbounded: bool
    boundary_censored: bool
    noncontiguous: bool
    intervals: tuple


@dataclass
class ExperimentReport:
    config: dict
    learners: tuple
    records: list
    skipped: list
    summary: dict
    runtime_seconds: float


def _validate_common(config):
    if config.replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if not 0.0 < config.alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {config.alpha}")
    if config.mode not in ("split", "full"):
        raise ConfigError(f"mode must be split or full, got '{config.mode}'")
    if config.rule not in RULES:
        raise ConfigError(f"rule must be one of {RULES}, got '{config.rule}'")
    if config.folds < 2:
        raise ConfigError("folds must be >= 2")
    if config.threads < 1:
        raise ConfigError("threads must be >= 1")
    if config.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    if config.split_fraction is not None and not 0 < config.split_fraction < 1:
        raise ConfigError("split_fraction must lie in (0, 1)")
    for key in config.learner_params:
        if key not in _LEARNER_PARAM_KEYS:
            raise ConfigError(f"unknown learner parameter '{key}'")


def _resolve_library(config):
    if config.learners is not None:
        names = tuple(config.learners)
    elif config.scenario is not None:
        names = SCENARIO_PRESETS[config.scenario]
    else:
        names = DEFAULT_LIBRARY
    if not names:
        raise ConfigError("learner library is empty")
    for name in names:
        if name not in LEARNER_KINDS:
            raise ConfigError(f"unknown learner '{name}'")
    return names


def build_specs(config):
    """LearnerSpec tuple for the configured library, applying any flat
    hyperparameter overrides."""
    names = _resolve_library(config)
    overrides = {}
    for key, value in config.learner_params.items():
        kind, attr = _LEARNER_PARAM_KEYS[key]
        overrides.setdefault(kind, {})[attr] = value
    return tuple(
        LearnerSpec(kind=name, **overrides.get(name, {})).validate()
        for name in names
    )


def _child_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(
        1, np.uint64)[0])


def _conformal_config(config, mode):
    return ConformalConfig(
        alpha=config.alpha,
        mode=mode,
        split_fraction=(config.split_fraction
                        if config.split_fraction is not None else 0.5),
        grid_step=config.grid_step,
        grid_margin=config.grid_margin,
        full_rank_includes_candidate=config.full_rank_includes_candidate,
    )


def _aggregate(intervals, weights, rule):
    if rule == "vote":
        return weighted_majority_vote(intervals, weights)
    if rule == "intersection":
        return aggregate_intersection(intervals, weights)
    if rule == "union":
        return aggregate_union(intervals, weights)
    return aggregate_wta(intervals, weights)


def _record_from_set(r, pset, weights, names, y_new, intervals):
    top = int(np.argmax(weights.w))
    any_censored = any(iv.boundary_censored for iv in intervals)
    any_gaps = any(not iv.contiguous for iv in intervals)
    return ReplicateRecord(
        replicate=r,
        covered=bool(pset.contains(y_new)),
        width=pset.total_width,
        hull_width=pset.hull_width,
        weights=tuple(float(v) for v in weights.w),
        rule_used=pset.rule_used,
        dominant=bool(weights.w[top] > 0.5),
        preferred=names[top],
        unbounded=pset.unbounded,
        boundary_censored=any_censored,
        noncontiguous=any_gaps,
        intervals=tuple((iv.lower, iv.upper) for iv in pset.intervals),
    )


def _split_intervals(train, cal, specs, x_new, alpha, seed_parts):
    intervals = []
    for k, spec in enumerate(specs):
        fitted = fit_learner(
            train, spec, np.random.default_rng([*seed_parts, 14, k])
        )
        cal_scores = CalibrationScores.from_raw(
            nonconformity_score(fitted, cal.x, cal.y)
        )
        intervals.append(
            split_conformal_interval(fitted, cal_scores, x_new, alpha)
        )
    return intervals


def _simulate_one(config, specs, names, r):
    """One replicate; returns a ReplicateRecord or a skip dict."""
    try:
        data, (x_new, y_new) = simgen.generate(simgen.ScenarioConfig(
            scenario=config.scenario, n=config.n, seed=config.seed,
            replicate=r,
        ))
        if config.mode == "split":
            ccfg = _conformal_config(config, "split")
            perm = np.random.default_rng(
                [config.seed, r, 12]).permutation(config.n)
            n_train = min(max(int(round(config.n * ccfg.split_fraction)), 1),
                          config.n - 1)
            train = data.subset(perm[:n_train])
            cal = data.subset(perm[n_train:])
            cvm = cv_predictions(
                train, specs, v=config.folds,
                rng_seed=_child_seed(config.seed, r, 13),
            )
            weights = solve_simplex_weights(cvm, train.y)
            intervals = _split_intervals(
                train, cal, specs, x_new, config.alpha, (config.seed, r)
            )
        else:
            ccfg = _conformal_config(config, "full")
            cvm = cv_predictions(
                data, specs, v=config.folds,
                rng_seed=_child_seed(config.seed, r, 13),
            )
            weights = solve_simplex_weights(cvm, data.y)
            intervals = [
                full_conformal_interval(
                    data, spec, x_new, ccfg,
                    rng_seed=_child_seed(config.seed, r, 15, k),
                )
                for k, spec in enumerate(specs)
            ]
        pset = _aggregate(intervals, weights, config.rule)
        return _record_from_set(r, pset, weights, names, y_new, intervals)
    except (CslError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return {"replicate": r, "seed": [config.seed, r],
                "reason": f"{type(exc).__name__}: {exc}"}


def _run_replicates(worker, config):
    indices = range(config.replicates)
    if config.threads > 1 and config.replicates > 1:
        chunk = max(1, config.replicates // (config.threads * 8))
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(worker, indices, chunksize=chunk))
    else:
        results = [worker(r) for r in indices]
    records = [res for res in results if isinstance(res, ReplicateRecord)]
    skipped = [res for res in results if not isinstance(res, ReplicateRecord)]
    return records, skipped


def _summarize(records, names, alpha):
    completed = len(records)
    summary = {
        "completed": completed,
        "coverage": None,
        "coverage_se": None,
        "mean_width": None,
        "mean_hull_width": None,
        "unbounded_count": 0,
        "boundary_censored_count": 0,
        "noncontiguous_count": 0,
        "weight_means": {name: None for name in names},
        "modal_learner": None,
        "dominant_pct": None,
        "preferred_pct": None,
        "dominant_rule_count": 0,
        "worst_case_floor": None,
    }
    if completed == 0:
        return summary
    covered = np.array([rec.covered for rec in records], dtype=float)
    widths = np.array([rec.width for rec in records], dtype=float)
    hulls = np.array([rec.hull_width for rec in records], dtype=float)
    weights = np.array([rec.weights for rec in records], dtype=float)
    coverage = float(covered.mean())
    finite_w = widths[np.isfinite(widths)]
    finite_h = hulls[np.isfinite(hulls)]
    preferred = np.array([names.index(rec.preferred) for rec in records])
    counts = np.bincount(preferred, minlength=len(names))
    modal = int(np.argmax(counts))
    summary.update({
        "coverage": coverage,
        "coverage_se": math.sqrt(coverage * (1 - coverage) / completed),
        "mean_width": float(finite_w.mean()) if finite_w.size else None,
        "mean_hull_width": float(finite_h.mean()) if finite_h.size else None,
        "unbounded_count": int(np.sum(~np.isfinite(widths))),
        "boundary_censored_count": int(
            sum(rec.boundary_censored for rec in records)),
        "noncontiguous_count": int(
            sum(rec.noncontiguous for rec in records)),
        "weight_means": {
            name: float(weights[:, k].mean())
            for k, name in enumerate(names)
        },
        "modal_learner": names[modal],
        "dominant_pct": float(np.mean(weights[:, modal] > 0.5)),
        "preferred_pct": float(np.mean(preferred == modal)),
        "dominant_rule_count": int(
            sum(rec.rule_used == "dominant" for rec in records)),
        "worst_case_floor": 1.0 - 2 * alpha - 3 * math.sqrt(
            2 * alpha * (1 - 2 * alpha) / completed),
    })
    return summary


def _config_snapshot(config, names):
    # Thread count and output destination are excluded: reports must be
    # byte-identical across parallelism degrees.
    resolved_split = (config.split_fraction
                      if config.split_fraction is not None else 0.5)
    snap = {
        "mode": config.mode,
        "scenario": config.scenario,
        "csv_path": config.csv_path,
        "n": config.n if config.scenario is not None else None,
        "replicates": config.replicates,
        "alpha": config.alpha,
        "split_fraction": resolved_split,
        "folds": config.folds,
        "seed": config.seed,
        "rule": config.rule,
        "learners": list(names),
        "learner_params": dict(sorted(config.learner_params.items())),
    }
    if config.mode == "full":
        snap["grid_step"] = config.grid_step
        snap["grid_margin"] = config.grid_margin
        snap["full_rank_includes_candidate"] = (
            config.full_rank_includes_candidate)
    if config.csv_path is not None:
        snap["response"] = config.response
        snap["test_fraction"] = config.test_fraction
        snap["log_response"] = config.log_response
    return snap


def run_simulation(config):
    """Monte Carlo coverage study on a synthetic scenario.

    Per replicate: draw the dataset and one test point, estimate the
    stacking weights, build one conformal interval per learner, aggregate
    with the configured rule, and record coverage of the test response and
    the set width. Failed replicates are skipped and listed in the report.
    """
    _validate_common(config)
    if config.scenario is None:
        raise ConfigError("run_simulation needs a scenario")
    if config.scenario not in simgen.SCENARIOS:
        raise ConfigError(f"unknown scenario '{config.scenario}'")
    if config.n < 20:
        raise ConfigError("simulation sample size must be >= 20")
    specs = build_specs(config)
    names = tuple(spec.kind for spec in specs)
    start = time.perf_counter()
    worker = partial(_simulate_one, config, specs, names)
    records, skipped = _run_replicates(worker, config)
    runtime = time.perf_counter() - start
    return ExperimentReport(
        config=_config_snapshot(config, names),
        learners=names,
        records=records,
        skipped=skipped,
        summary=_summarize(records, names, config.alpha),
        runtime_seconds=runtime,
    )


def _load_csv(path, response):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = _csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read csv '{path}': {exc}") from exc
    if not rows or len(rows) < 2:
        raise DataError(f"csv '{path}' needs a header row and data rows")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise DataError(
            f"csv '{path}' is missing the response column '{response}'"
        )
    width = len(header)
    body = rows[1:]
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(
                f"csv '{path}' row {i + 2} has {len(row)} cells, "
                f"expected {width}"
            )
    resp_idx = header.index(response)
    columns = list(zip(*body))
    try:
        y = np.array([float(v) for v in columns[resp_idx]])
    except ValueError as exc:
        raise DataError(
            f"response column '{response}' has non-numeric cells: {exc}"
        ) from exc
    blocks = []
    names = []
    for j, name in enumerate(header):
        if j == resp_idx:
            continue
        cells = columns[j]
        try:
            blocks.append(np.array([float(v) for v in cells])[:, None])
            names.append(name)
        except ValueError:
            # Categorical column: one indicator per observed level.
            levels = sorted(set(cells))
            for level in levels:
                blocks.append(np.array(
                    [1.0 if v == level else 0.0 for v in cells])[:, None])
                names.append(f"{name}={level}")
    if not blocks:
        raise DataError(f"csv '{path}' has no covariate columns")
    x = np.hstack(blocks)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError(f"csv '{path}' contains non-finite values")
    return x, y, names


def _exp_set(pset):
    return PredictionSet(
        tuple(Interval(math.exp(iv.lower), math.exp(iv.upper),
                       boundary_censored=iv.boundary_censored,
                       contiguous=iv.contiguous)
              for iv in pset.intervals),
        pset.rule_used,
    )


def run_csv(config):
    """Single train/calibrate/test run on a CSV file.

    A test fraction (default 10%) is held out; the remainder is split
    train:calibrate by ``split_fraction`` (default 80:20) in split mode, or
    used whole as the refitting set in full mode. Reports one record per
    test row. With ``log_response`` the model works on log(y) and intervals
    are mapped back through the exponential.
    """
    _validate_common(config)
    if config.csv_path is None:
        raise ConfigError("run_csv needs a csv path")
    if not 0.0 < config.test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    x, y_raw, _ = _load_csv(config.csv_path, config.response)
    n = x.shape[0]
    if config.log_response:
        if np.any(y_raw <= 0):
            raise DataError("log_response requires strictly positive values")
        y_work = np.log(y_raw)
    else:
        y_work = y_raw
    specs = build_specs(config)
    names = tuple(spec.kind for spec in specs)
    split_fraction = (config.split_fraction
                      if config.split_fraction is not None else 0.8)

    rng = np.random.default_rng([config.seed, 0, 21])
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * config.test_fraction)))
    if n - n_test < max(config.folds, 4):
        raise DataError("too few non-test rows for the configured folds")
    test_idx = perm[:n_test]
    rest_idx = perm[n_test:]

    start = time.perf_counter()
    records = []
    skipped = []
    if config.mode == "split":
        n_train = min(max(int(round(rest_idx.size * split_fraction)), 1),
                      rest_idx.size - 1)
        train = Dataset(x[rest_idx[:n_train]], y_work[rest_idx[:n_train]])
        cal_idx = rest_idx[n_train:]
        cal = Dataset(x[cal_idx], y_work[cal_idx])
        cvm = cv_predictions(train, specs, v=config.folds,
                             rng_seed=_child_seed(config.seed, 0, 13))
        weights = solve_simplex_weights(cvm, train.y)
        fitted = [
            fit_learner(train, spec,
                        np.random.default_rng([config.seed, 0, 14, k]))
            for k, spec in enumerate(specs)
        ]
        cal_scores = [
            CalibrationScores.from_raw(nonconformity_score(f, cal.x, cal.y))
            for f in fitted
        ]
        for pos, row in enumerate(test_idx):
            intervals = [
                split_conformal_interval(f, cs, x[row], config.alpha)
                for f, cs in zip(fitted, cal_scores)
            ]
            pset = _aggregate(intervals, weights, config.rule)
            if config.log_response:
                pset = _exp_set(pset)
            records.append(_record_from_set(
                pos, pset, weights, names, y_raw[row], intervals))
    else:
        rest = Dataset(x[rest_idx], y_work[rest_idx])
        ccfg = _conformal_config(config, "full")
        cvm = cv_predictions(rest, specs, v=config.folds,
                             rng_seed=_child_seed(config.seed, 0, 13))
        weights = solve_simplex_weights(cvm, rest.y)
        for pos, row in enumerate(test_idx):
            try:
                intervals = [
                    full_conformal_interval(
                        rest, spec, x[row], ccfg,
                        rng_seed=_child_seed(config.seed, pos, 15, k))
                    for k, spec in enumerate(specs)
                ]
            except CslError as exc:
                skipped.append({"replicate": pos, "seed": [config.seed, pos],
                                "reason": f"{type(exc).__name__}: {exc}"})
                continue
            pset = _aggregate(intervals, weights, config.rule)
            if config.log_response:
                pset = _exp_set(pset)
            records.append(_record_from_set(
                pos, pset, weights, names, y_raw[row], intervals))
    runtime = time.perf_counter() - start
    return ExperimentReport(
        config=_config_snapshot(config, names),
        learners=names,
        records=records,
        skipped=skipped,
        summary=_summarize(records, names, config.alpha),
        runtime_seconds=runtime,
    )


def _record_dict(rec):
    return {
        "replicate": rec.replicate,
        "covered": rec.covered,
        "width": rec.width,
        "hull_width": rec.hull_width,
        "weights": list(rec.weights),
        "rule_used": rec.rule_used,
        "dominant": rec.dominant,
        "preferred": rec.preferred,
        "unbounded": rec.unbounded,
        "boundary_censored": rec.boundary_censored,
        "noncontiguous": rec.noncontiguous,
        "intervals": [list(iv) for iv in rec.intervals],
    }


def report_dict(report):
    """Report as a json-ready dict with a stable key order; wall-clock
    runtime is deliberately excluded so identical configurations serialize
    identically."""
    return {
        "config": report.config,
        "learners": list(report.learners),
        "summary": report.summary,
        "skipped": report.skipped,
        "replicates": [_record_dict(rec) for rec in report.records],
    }


def _fmt6(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _emit_table(report):
    lines = ["== config =="]
    for key, value in report.config.items():
        lines.append(f"{key:<28}{_fmt6(value)}")
    lines.append("== summary ==")
    for key, value in report.summary.items():
        if key == "weight_means":
            continue
        lines.append(f"{key:<28}{_fmt6(value)}")
    lines.append("== mean weights ==")
    for name in report.learners:
        lines.append(f"{name:<28}{_fmt6(report.summary['weight_means'][name])}")
    lines.append("== replicates ==")
    header = ["replicate", "covered", "width", "hull_width", "rule",
              "dominant", "preferred"]
    lines.append("  ".join(f"{h:>10}" for h in header))
    for rec in report.records:
        cells = [rec.replicate, rec.covered, rec.width, rec.hull_width,
                 rec.rule_used, rec.dominant, rec.preferred]
        lines.append("  ".join(f"{_fmt6(c):>10}" for c in cells))
    if report.skipped:
        lines.append("== skipped ==")
        for skip in report.skipped:
            lines.append(f"{skip['replicate']:<12}{skip['reason']}")
    return "\n".join(lines) + "\n"


def _emit_csv(report):
    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    weight_cols = [f"w_{name}" for name in report.learners]
    writer.writerow(
        ["replicate", "covered", "width", "hull_width", "rule_used",
         "dominant", "preferred", "unbounded", "boundary_censored",
         "noncontiguous"] + weight_cols)
    for rec in report.records:
        writer.writerow(
            [rec.replicate, rec.covered, repr(rec.width),
             repr(rec.hull_width), rec.rule_used, rec.dominant,
             rec.preferred, rec.unbounded, rec.boundary_censored,
             rec.noncontiguous] + [repr(w) for w in rec.weights])
    return buf.getvalue()


def emit_report(report, format="json"):
    """Serialize a report: json (full precision), csv (per-replicate rows),
    or table (6 significant digits)."""
    if format == "json":
        return json.dumps(report_dict(report), indent=2) + "\n"
    if format == "csv":
        return _emit_csv(report)
    if format == "table":
        return _emit_table(report)
    raise ConfigError(f"unknown report format '{format}'")
