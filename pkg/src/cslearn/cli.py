"""Command line entry point.

Two subcommands: ``simulate`` runs a synthetic coverage study, ``csv`` runs
on a data file. Settings resolve as defaults < --config file < explicit
flags. Exit codes: 0 ok, 1 bad configuration, 2 bad data, 3 numerical
failure.
"""

import argparse
import json
import sys

from .errors import ConfigError, CslError, DataError
from .harness import (
    FORMATS,
    RULES,
    ExperimentConfig,
    emit_report,
    run_csv,
    run_simulation,
)
from .learners import LEARNER_KINDS
from .simgen import SCENARIOS

# Config-file keys that map straight onto ExperimentConfig attributes.
_FILE_KEYS = (
    "scenario", "csv_path", "n", "replicates", "alpha", "mode",
    "split_fraction", "folds", "seed", "threads", "learners", "rule",
    "grid_step", "grid_margin", "full_rank_includes_candidate", "out",
    "format", "response", "test_fraction", "log_response", "learner_params",
)


def _add_shared(sub):
    sub.add_argument("--config", default=None, metavar="FILE",
                     help="json file with the same keys as the flags")
    sub.add_argument("--alpha", type=float, default=None,
                     help="miscoverage level (default 0.1)")
    sub.add_argument("--mode", choices=("split", "full"), default=None)
    sub.add_argument("--split-fraction", type=float, default=None,
                     dest="split_fraction")
    sub.add_argument("--folds", type=int, default=None,
                     help="cross validation folds for the weights")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--learners", default=None,
                     help="comma separated subset of "
                          + ",".join(LEARNER_KINDS))
    sub.add_argument("--rule", choices=RULES, default=None)
    sub.add_argument("--grid-step", type=float, default=None,
                     dest="grid_step")
    sub.add_argument("--grid-margin", type=float, default=None,
                     dest="grid_margin")
    sub.add_argument("--full-rank-includes-candidate", action="store_true",
                     default=None, dest="full_rank_includes_candidate")
    sub.add_argument("--out", default=None, help="write report here "
                     "instead of stdout")
    sub.add_argument("--format", choices=FORMATS, default=None)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cslearn",
        description="conformal prediction sets for stacked regression "
                    "ensembles",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="synthetic coverage study")
    sim.add_argument("--scenario", choices=SCENARIOS, default=None)
    sim.add_argument("--n", type=int, default=None,
                     help="sample size per replicate")
    sim.add_argument("--replicates", type=int, default=None)
    _add_shared(sim)

    csvp = subs.add_parser("csv", help="run on a csv file")
    csvp.add_argument("csv_path", metavar="PATH")
    csvp.add_argument("--response", default=None,
                      help="response column name (default 'response')")
    csvp.add_argument("--test-fraction", type=float, default=None,
                      dest="test_fraction")
    csvp.add_argument("--log-response", action="store_true", default=None,
                      dest="log_response")
    csvp.add_argument("--replicates", type=int, default=None,
                      help=argparse.SUPPRESS)
    _add_shared(csvp)

    return parser


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config '{path}' is not valid json: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config '{path}' must hold a json object")
    for key in raw:
        if key not in _FILE_KEYS:
            raise ConfigError(f"config '{path}' has unknown key '{key}'")
    return raw


def _parse_learners(value):
    if value is None or not isinstance(value, str):
        return value
    names = tuple(part.strip() for part in value.split(",") if part.strip())
    if not names:
        raise ConfigError("--learners needs at least one name")
    return names


def build_config(args):
    """Merge defaults, config file, and flags into an ExperimentConfig."""
    config = ExperimentConfig()
    if args.command == "csv":
        config.csv_path = args.csv_path
        config.replicates = 1
    if getattr(args, "config", None):
        for key, value in _load_config_file(args.config).items():
            if key == "learners" and isinstance(value, list):
                value = tuple(value)
            setattr(config, key, value)
    for key in _FILE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    config.learners = _parse_learners(config.learners)
    if not isinstance(config.learner_params, dict):
        raise ConfigError("learner_params must be a json object")
    return config


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        if args.command == "simulate":
            if config.scenario is None:
                raise ConfigError("simulate needs --scenario")
            report = run_simulation(config)
        else:
            report = run_csv(config)
        text = emit_report(report, config.format)
        if config.out:
            try:
                with open(config.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            except OSError as exc:
                raise ConfigError(
                    f"cannot write report to '{config.out}': {exc}"
                ) from exc
        else:
            sys.stdout.write(text)
        print(f"done in {report.runtime_seconds:.2f}s "
              f"({report.summary['completed']} replicates, "
              f"{len(report.skipped)} skipped)", file=sys.stderr)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except CslError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # internal failures also map to 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
