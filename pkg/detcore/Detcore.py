#!/usr/bin/env python
# coding: utf8
#
# Copyright (c) 2024 detcore developers.
#
# This file is part of detcore.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
This module contains the general function to run the detcore command line.
"""

# Disable following error:
# Module name "Detcore" doesn't conform to snake_case naming style
# pylint: disable=invalid-name

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

from pandora import read_config_file, setup_logging
from pandora.common import mkdir_p

import detcore
from detcore import bench, oracle, report, studies
from detcore.check_configuration import ConfigurationError, check_conf

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def get_parser() -> argparse.ArgumentParser:
    """
    ArgumentParser for detcore

    :return parser
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a json configuration file, the default configuration otherwise")
    common.add_argument("--out", help="output directory, the current directory for train and studies")
    common.add_argument("--seed", type=int, help="seed overriding the configuration one")
    common.add_argument("--quiet", action="store_true", help="only log errors")

    parser = argparse.ArgumentParser(description="detcore")
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("train", parents=[common], help="train and evaluate the tiny detector")

    grid = subparsers.add_parser("grid-loss", parents=[common], help="regression loss x loss weight grid")
    grid.add_argument("--losses", nargs="+", default=list(studies.LOSS_TYPES), choices=studies.LOSS_TYPES)
    grid.add_argument("--weights", nargs="+", type=float, default=list(studies.LOSS_WEIGHTS))

    subparsers.add_parser("rpn-study", parents=[common], help="RPN hyper-parameters on the proposal task")
    subparsers.add_parser("scale-study", parents=[common], help="single scale, value and range training scales")

    oracle_parser = subparsers.add_parser("oracle", parents=[common], help="brute-force reference comparisons")
    oracle_parser.add_argument("suite", choices=oracle.SUITES)

    bench_parser = subparsers.add_parser("bench", parents=[common], help="kernel micro-benchmarks")
    bench_parser.add_argument("--kernel", default="all", choices=list(bench.KERNELS) + ["all"])
    bench_parser.add_argument("--size", type=int, default=1000)
    bench_parser.add_argument("--reps", type=int, default=5)
    return parser


def load_configuration(args: argparse.Namespace) -> Dict:
    """Checked configuration of the --config file, the default one when not given, with the --seed override"""
    user_cfg = read_config_file(args.config) if args.config else {}
    if args.seed is not None:
        user_cfg["seed"] = args.seed
    return check_conf(user_cfg)


def emit_report(rows: List[report.ReportRow], name: str, title: str, output: str) -> None:
    """Write <output>/<name>.csv and print the aligned table"""
    mkdir_p(output)
    report.write_csv(rows, os.path.join(output, f"{name}.csv"))
    print(report.render_table(rows, title), end="")


def run_study(args: argparse.Namespace, cfg: Dict) -> int:
    if args.command == "grid-loss":
        cells = studies.grid_loss_cells(cfg, args.losses, args.weights)
        title = "AP@0.5 by regression loss and loss weight"
    elif args.command == "rpn-study":
        cells = studies.rpn_study_cells(cfg)
        title = "AR@1000 of the proposal task"
    else:
        cells = studies.scale_study_cells(cfg)
        title = "AP@0.5 by training scale policy"
    rows = studies.run_cells(cells)
    emit_report(rows, args.command.replace("-", "_"), title, args.out or ".")
    return EXIT_OK


def run_oracle(args: argparse.Namespace) -> int:
    result = oracle.run_suite(args.suite, 0 if args.seed is None else args.seed)
    print(result.summary())
    return EXIT_OK if result.ok else EXIT_FAILURE


def run_bench(args: argparse.Namespace) -> int:
    if args.size < 1 or args.reps < 1:
        raise ConfigurationError("bench", "size and reps must be at least 1")
    kernels = bench.KERNELS if args.kernel == "all" else (args.kernel,)
    seed = 0 if args.seed is None else args.seed
    rows = [row for kernel in kernels for row in bench.bench(kernel, args.size, args.reps, seed).rows()]
    print(report.to_csv(rows), end="")
    if args.out is not None:
        mkdir_p(args.out)
        report.write_csv(rows, os.path.join(args.out, "bench.csv"))
    return EXIT_OK


def usage_error(error: Exception) -> int:
    """Report a usage or configuration error and return its exit code"""
    logging.error("Configuration error: %s", error)
    print(f"detcore: error: {error}", file=sys.stderr)
    return EXIT_USAGE


def main(argv: Optional[List[str]] = None) -> int:
    """
    Call the detcore subcommands

    :param argv: command line arguments, sys.argv by default
    :type argv: List[str]
    :return: exit code, 0 success, 1 runtime failure, 2 usage or configuration error
    :rtype: int
    """

    # Get parser
    parser = get_parser()
    args = parser.parse_args(argv)
    setup_logging(not args.quiet)

    try:
        cfg = None if args.command in ("oracle", "bench") else load_configuration(args)
    except (ConfigurationError, OSError, json.JSONDecodeError) as error:
        return usage_error(error)

    try:
        if args.command == "train":
            detcore.train(cfg, args.out or ".")
            return EXIT_OK
        if args.command == "oracle":
            return run_oracle(args)
        if args.command == "bench":
            return run_bench(args)
        return run_study(args, cfg)
    except ConfigurationError as error:
        return usage_error(error)
    except Exception as error:  # pylint: disable=broad-except
        logging.error("detcore %s failed: %s", args.command, error)
        print(f"detcore: {args.command} failed: {error}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
