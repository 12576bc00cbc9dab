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
This module contains the CPU micro-benchmarks of the geometry kernels.
"""

import math
import timeit
from typing import Callable, Dict, List, NamedTuple

import numpy as np

from .anchor import AnchorGenSpec, base_anchors, grid_anchors
from .geometry import iou_matrix
from .postprocessing import Detections, nms
from .report import ReportRow

KERNELS = ("iou_matrix", "nms", "anchors")


class BenchResult(NamedTuple):
    """Wall-time statistics of one kernel, in seconds"""

    kernel: str
    size: int
    samples: List[float]

    @property
    def min(self) -> float:
        return float(np.min(self.samples))

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def max(self) -> float:
        return float(np.max(self.samples))

    def rows(self) -> List[ReportRow]:
        label = f"{self.kernel} size={self.size} reps={len(self.samples)}"
        return [ReportRow(label, "min_s", self.min), ReportRow(label, "median_s", self.median)]


def _random_boxes(rng: np.random.Generator, size: int) -> np.ndarray:
    corners = rng.uniform(0, 1000, size=(size, 2))
    return np.hstack([corners, corners + rng.uniform(1, 100, size=(size, 2))])


def make_kernel(kernel: str, size: int, rng: np.random.Generator) -> Callable[[], object]:
    """
    Benchmarked call of a kernel on inputs of the given size

    - iou_matrix: size x size boxes
    - nms: size detections of one class
    - anchors: about size anchors, 3 ratios on a square feature grid

    :param kernel: kernel name
    :type kernel: str
    :param size: input size, at least 1
    :type size: int
    :param rng: random generator of the inputs
    :type rng: np.random.Generator
    :return: callable without argument
    :rtype: Callable
    """
    if size < 1:
        raise ValueError(f"benchmark size must be at least 1, got {size}")
    if kernel == "iou_matrix":
        boxes_a, boxes_b = _random_boxes(rng, size), _random_boxes(rng, size)
        return lambda: iou_matrix(boxes_a, boxes_b)
    if kernel == "nms":
        dets = Detections(_random_boxes(rng, size), rng.uniform(size=size), np.zeros(size, dtype=np.int64))
        return lambda: nms(dets, 0.5)
    if kernel == "anchors":
        base = base_anchors(AnchorGenSpec(32, (1.0,), (0.5, 1.0, 2.0), 8))
        side = max(1, int(math.ceil(math.sqrt(size / len(base)))))
        return lambda: grid_anchors(base, side, side, 8)
    raise ValueError(f"unknown benchmark kernel {kernel}, expected one of {', '.join(KERNELS)}")


def bench(kernel: str, size: int, reps: int = 5, seed: int = 0) -> BenchResult:
    """
    Time a kernel reps times after one warm-up call

    :param kernel: kernel name
    :type kernel: str
    :param size: input size
    :type size: int
    :param reps: number of timed calls, at least 1
    :type reps: int
    :param seed: seed of the inputs
    :type seed: int
    :return: timings
    :rtype: BenchResult
    """
    if reps < 1:
        raise ValueError(f"benchmark reps must be at least 1, got {reps}")
    call = make_kernel(kernel, size, np.random.default_rng(seed))
    call()
    return BenchResult(kernel, size, timeit.repeat(call, repeat=reps, number=1))


def bench_all(size: int, reps: int = 5, seed: int = 0) -> Dict[str, BenchResult]:
    return {kernel: bench(kernel, size, reps, seed) for kernel in KERNELS}
