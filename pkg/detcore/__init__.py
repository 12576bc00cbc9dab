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
This module contains functions to run the detcore training pipeline.
"""

import logging
import os
from typing import Dict, List, NamedTuple, Optional

import numpy as np
from pandora import read_config_file, setup_logging
from pandora.common import save_config

from detcore import common
from detcore.check_configuration import check_conf, serializable
from detcore.pipeline import CheckpointHook, Hook, LoggerHook, LrSchedule, LrUpdaterHook, Runner, RunnerState, eval_hook
from detcore.metrics import EvalResult
from detcore.refdet import DetectorModel, batches, gen_dataset


class RunOutput(NamedTuple):
    """Final runner state, trained model and validation samples"""

    state: RunnerState
    model: DetectorModel
    val_samples: List


def build_hooks(cfg: Dict, model: DetectorModel, val_samples: List, output: Optional[str] = None) -> List[Hook]:
    """
    Hooks of the configuration, plus the learning rate updater

    The checkpoint hook is skipped without an output directory.

    :param cfg: checked configuration
    :type cfg: dict
    :param model: model to evaluate and save
    :type model: DetectorModel
    :param val_samples: evaluation samples
    :type val_samples: list
    :param output: output directory
    :type output: string
    :return: hooks
    :rtype: List[Hook]
    """
    schedule_cfg = cfg["lr_schedule"]
    schedule = LrSchedule(
        cfg["optimizer"]["lr"], tuple(schedule_cfg["steps"]), schedule_cfg["factor"], schedule_cfg["warmup_iters"]
    )
    hooks: List[Hook] = [LrUpdaterHook(schedule)]

    def evaluate(_: RunnerState) -> EvalResult:
        return model.evaluate(val_samples)

    for hook_cfg in cfg["hooks"]:
        if hook_cfg["type"] == "logger":
            hooks.append(LoggerHook(hook_cfg["interval"], hook_cfg["priority"]))
        elif hook_cfg["type"] == "eval":
            hooks.append(eval_hook(hook_cfg["interval"], evaluate, hook_cfg["priority"]))
        elif output is not None:
            checkpoints = os.path.join(output, "checkpoints")

            def save(state: RunnerState) -> None:
                common.save_weights(model.detector.parameters(), checkpoints, f"epoch_{state.epoch:03d}.npz")

            hooks.append(CheckpointHook(save, hook_cfg["interval"], hook_cfg["priority"]))
    return hooks


def run(cfg: Dict, output: Optional[str] = None) -> RunOutput:
    """
    Run the detcore training pipeline on the synthetic dataset

    :param cfg: checked configuration
    :type cfg: dict
    :param output: output directory of the checkpoints
    :type output: string
    :return: final state, model and validation samples
    :rtype: RunOutput
    """
    data_cfg = cfg["data"]
    rng = np.random.default_rng(cfg["seed"])
    train_samples = gen_dataset(data_cfg["train_images"], data_cfg["img_size"], data_cfg["max_objects"], rng)
    val_samples = gen_dataset(data_cfg["val_images"], data_cfg["img_size"], data_cfg["max_objects"], rng)

    model = DetectorModel(cfg)
    runner = Runner(
        cfg["workflow"], cfg["optimizer"]["lr"], cfg["max_epochs"], build_hooks(cfg, model, val_samples, output)
    )
    data = {
        "train": batches(train_samples, data_cfg["batch_size"]),
        "val": batches(val_samples, data_cfg["batch_size"]),
    }
    state = runner.run(model, data)
    return RunOutput(state, model, val_samples)


def train(cfg: Dict, path_output: str) -> RunOutput:
    """
    Run the pipeline on a checked configuration and save its results

    :param cfg: checked configuration
    :type cfg: dict
    :param path_output: output directory
    :type path_output: string
    :return: final state, model and validation samples
    :rtype: RunOutput
    """
    output = run(cfg, path_output)

    # save weights, event log, evaluations and detections of the validation split
    common.save_weights(output.model.detector.parameters(), path_output)
    common.save_event_log(output.state, path_output)
    common.save_eval_records(output.state.eval_records, path_output)
    common.save_detections(output.model.detect(output.val_samples), path_output)
    logging.info("Results saved in %s", path_output)
    # save config
    save_config(path_output, serializable(cfg))
    return output


def main(cfg_path: Optional[str], path_output: str, verbose: bool, seed: Optional[int] = None) -> None:
    """
    Check config file and run the detcore training pipeline accordingly

    :param cfg_path: path to the json configuration file, the default configuration when None
    :type cfg_path: string
    :param path_output: output directory
    :type path_output: string
    :param verbose: verbose mode
    :type verbose: bool
    :param seed: seed overriding the configuration one
    :type seed: int
    :return: None
    """

    # read the user input's configuration
    user_cfg = read_config_file(cfg_path) if cfg_path else {}
    if seed is not None:
        user_cfg["seed"] = seed

    cfg = check_conf(user_cfg)

    setup_logging(verbose)

    train(cfg, path_output)
