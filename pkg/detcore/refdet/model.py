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
This module contains the adapter between the tiny detector and the runner.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import xarray as xr

from ..img_tools import ScalePolicy, pad_to_stride, resize_factor, rescale_sample, sample_scale, sample_size
from ..metrics import EvalResult, GroundTruth, eval_ar, eval_map
from ..postprocessing import Detections
from .detector import TinyDetector

# Proposals kept per image for the average recall of the proposal task.
AR_TOP_K = 1000
# Fixed sampling seed of validation losses, they do not consume the training generator.
_VAL_SEED = 0


class DetectorModel:
    """
    DetectorModel class: multi-scale training steps and evaluation of a TinyDetector
    """

    def __init__(self, cfg: Dict, detector: Optional[TinyDetector] = None) -> None:
        """
        :param cfg: checked configuration
        :type cfg: dict
        :param detector: detector to wrap, built from cfg by default
        :type detector: TinyDetector
        :return: None
        """
        self.cfg = cfg
        self.detector = TinyDetector(cfg) if detector is None else detector
        policy_cfg = cfg["scale_policy"]
        self.policy = ScalePolicy(policy_cfg["mode"], policy_cfg["long_edge"], tuple(policy_cfg["short_edges"]))
        self.rng = np.random.default_rng(cfg["seed"])

    def prepare(self, sample: xr.Dataset) -> xr.Dataset:
        """Resize a training sample to a scale drawn from the policy, padded to the stride"""
        long_cap, short_target = sample_scale(self.policy, self.rng)
        img_w, img_h = sample_size(sample)
        return rescale_sample(sample, resize_factor(img_w, img_h, long_cap, short_target), self.detector.stride)

    def train_step(self, batch: Sequence[xr.Dataset], lr: float) -> float:
        """
        :param batch: samples
        :type batch: Sequence[xr.Dataset]
        :param lr: learning rate
        :type lr: float
        :return: total loss
        :rtype: float
        """
        return self.detector.train_step([self.prepare(sample) for sample in batch], lr, self.rng)

    def val_step(self, batch: Sequence[xr.Dataset]) -> float:
        samples = [pad_to_stride(sample, self.detector.stride) for sample in batch]
        loss, _, _ = self.detector.loss_and_grads(samples, np.random.default_rng(_VAL_SEED), training=False)
        return loss

    def detect(self, samples: Sequence[xr.Dataset]) -> Dict[int, Detections]:
        """
        Detections of every sample, keyed by image id

        :param samples: samples
        :type samples: Sequence[xr.Dataset]
        :return: detections per image id
        :rtype: Dict[int, Detections]
        """
        max_per_img = AR_TOP_K if self.detector.task == "proposal" else None
        return {
            int(sample.attrs["image_id"]): self.detector.infer(
                pad_to_stride(sample, self.detector.stride), max_per_img=max_per_img
            )
            for sample in samples
        }

    def evaluate(self, samples: Sequence[xr.Dataset]) -> EvalResult:
        """
        mAP of the detections on samples, plus AR@1000 of the proposal task

        :param samples: samples
        :type samples: Sequence[xr.Dataset]
        :return: evaluation result
        :rtype: EvalResult
        """
        dets = self.detect(samples)
        gts = {int(sample.attrs["image_id"]): ground_truth(sample, self.detector.task) for sample in samples}
        result = eval_map(dets, gts)
        if self.detector.task == "proposal":
            result.ar_at_k = eval_ar(dets, gts, AR_TOP_K)
            result.k = AR_TOP_K
        logging.info("AP@0.5: %.4f, mAP: %.4f", result.ap50, result.map)
        return result


def ground_truth(sample: xr.Dataset, task: str = "detection") -> GroundTruth:
    """Ground truth of a sample, a single class 0 for the proposal task"""
    labels = np.asarray(sample["labels"].data, dtype=np.int64)
    if task == "proposal":
        labels = np.zeros_like(labels)
    return GroundTruth(sample["boxes"].data, labels)


def batches(samples: List[xr.Dataset], batch_size: int) -> List[List[xr.Dataset]]:
    """Consecutive batches of samples, the last one may be smaller"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    return [samples[start : start + batch_size] for start in range(0, len(samples), batch_size)]
