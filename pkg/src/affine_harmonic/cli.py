"""Command-line entry point: ``affine-flow {run,validate,list}``.

Exit codes: 0 when the outcome is Converged or matches the scenario's
``expected_outcome``, 1 on any other outcome (or a chart exit), 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ChartExit, ConfigError
from .flow import THREADS_ENV, Outcome
from .hessian_geometry import POTENTIAL_CATALOG
from .scenarios import (
    BUILTIN_SCENARIOS,
    INITIAL_MAP_CATALOG,
    METRIC_FIELD_CATALOG,
    builtin,
    load_config,
    run_scenario,
    validate,
)
from .targets import CHART_CATALOG

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG = 0, 1, 2


def _resolve(name: str):
    if name in BUILTIN_SCENARIOS and not Path(name).exists():
        return builtin(name)
    return load_config(name)


def _cmd_list(args) -> int:
    sections = [
        ("scenarios", BUILTIN_SCENARIOS),
        ("potentials", POTENTIAL_CATALOG),
        ("metric fields", METRIC_FIELD_CATALOG),
        ("targets", CHART_CATALOG),
        ("initial maps", INITIAL_MAP_CATALOG),
    ]
    for title, names in sections:
        print(f"{title}:")
        for n in names:
            print(f"  {n}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _resolve(args.config)
    validate(cfg)
    print(f"{cfg.name}: ok")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _resolve(args.config)
    output = args.output or cfg.output or os.path.join("runs", cfg.name)
    workers = args.threads
    try:
        report, _, _ = run_scenario(cfg, output=output, workers=workers)
    except ChartExit as exc:
        print(f"{cfg.name}: chart exit: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED
    print(f"{cfg.name}: {report.outcome.value} (expected {report.expected_outcome.value}) "
          f"sup_residual={report.final_sup_residual:.3e} sup_kinetic={report.final_sup_kinetic:.3e}")
    print(f"output written to {output}")
    if report.outcome is Outcome.CONVERGED or report.as_expected:
        return EXIT_OK
    return EXIT_UNEXPECTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affine-flow", description="Affine harmonic map heat flow scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config file or builtin scenario")
    p_run.add_argument("config", help="path to a config file or a builtin scenario name")
    p_run.add_argument("-o", "--output", help="output directory (default: config 'output' or runs/<name>)")
    p_run.add_argument("--threads", type=int, default=None,
                       help=f"worker threads per step (default: ${THREADS_ENV}, 0 = all cores)")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_list = sub.add_parser("list", help="print catalog names")
    p_list.set_defaults(func=_cmd_list)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())
