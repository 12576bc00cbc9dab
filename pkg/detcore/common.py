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
This module contains functions allowing to save the results of the detcore pipeline.
"""

import json
import os
from typing import Any, Dict, Mapping

import numpy as np
from pandora.common import mkdir_p

from .metrics import EvalResult
from .pipeline import RunnerState
from .postprocessing import Detections


def write_json(data: Any, path: str) -> None:
    """Write data as indented JSON with sorted keys"""
    with open(path, "w", encoding="utf-8") as file_:
        json.dump(data, file_, indent=2, sort_keys=True)
        file_.write("\n")


def save_weights(params: Mapping[str, np.ndarray], output: str, name: str = "weights.npz") -> str:
    """
    Save arrays in a numpy archive

    :param params: arrays by name
    :type params: Mapping[str, np.ndarray]
    :param output: output directory
    :type output: string
    :param name: archive name
    :type name: string
    :return: archive path
    :rtype: string
    """
    mkdir_p(output)
    path = os.path.join(output, name)
    np.savez(path, **{key: np.asarray(value) for key, value in params.items()})
    return path


def load_weights(path: str) -> Dict[str, np.ndarray]:
    with np.load(path) as archive:
        return {key: archive[key] for key in archive.files}


def save_event_log(state: RunnerState, output: str) -> None:
    """
    Save the timepoints dispatched during a run and the training losses

    :param state: final runner state
    :type state: RunnerState
    :param output: output directory
    :type output: string
    :return: None
    """
    mkdir_p(output)
    write_json(
        {"events": state.event_log, "epochs": state.epoch, "iterations": state.iter, "losses": state.losses},
        os.path.join(output, "event_log.json"),
    )


def save_eval_records(records: Mapping[int, EvalResult], output: str) -> None:
    """
    Save one JSON evaluation file per evaluated epoch, eval/epoch_<n>.json

    :param records: evaluation result by epoch
    :type records: Mapping[int, EvalResult]
    :param output: output directory
    :type output: string
    :return: None
    """
    eval_dir = os.path.join(output, "eval")
    mkdir_p(eval_dir)
    for epoch, result in sorted(records.items()):
        write_json({"epoch": epoch, **result.to_dict()}, os.path.join(eval_dir, f"epoch_{epoch:03d}.json"))


def save_detections(dets: Mapping[int, Detections], output: str, name: str = "detections.json") -> None:
    """
    Save detections as a JSON array of {image_id, bbox, score, category_id}

    :param dets: detections by image id
    :type dets: Mapping[int, Detections]
    :param output: output directory
    :type output: string
    :param name: file name
    :type name: string
    :return: None
    """
    mkdir_p(output)
    records = [record for image_id in sorted(dets) for record in dets[image_id].to_records(image_id)]
    write_json(records, os.path.join(output, name))
