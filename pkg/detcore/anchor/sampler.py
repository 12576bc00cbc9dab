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
This module contains the random positive/negative anchor sampler.
"""

import math
from typing import NamedTuple

import numpy as np

from .anchor_generator import UNBOUNDED
from .assigner import AssignResult


class SamplerSpec(NamedTuple):
    """Random sampler parameters"""

    num: int = 256
    pos_fraction: float = 0.5
    neg_pos_ub: float = UNBOUNDED


class SamplingResult(NamedTuple):
    """Sorted, disjoint positive and negative anchor indices"""

    pos_indices: np.ndarray
    neg_indices: np.ndarray


def random_sample(assign: AssignResult, spec: SamplerSpec, rng: np.random.Generator) -> SamplingResult:
    """
    Sample positives and negatives uniformly without replacement

    Up to num * pos_fraction positives are drawn, negatives fill the
    remainder of num. When neg_pos_ub is bounded, negatives are capped at
    neg_pos_ub * max(1, number of sampled positives).

    :param assign: anchor assignment
    :type assign: AssignResult
    :param spec: sampler parameters
    :type spec: SamplerSpec
    :param rng: seeded random generator
    :type rng: np.random.Generator
    :return: sampled indices
    :rtype: SamplingResult
    """
    if spec.num < 1:
        raise ValueError(f"sampler num must be at least 1, got {spec.num}")
    if not 0 < spec.pos_fraction <= 1:
        raise ValueError(f"sampler pos_fraction must be in (0, 1], got {spec.pos_fraction}")
    if spec.neg_pos_ub <= 0:
        raise ValueError(f"sampler neg_pos_ub must be strictly positive, got {spec.neg_pos_ub}")

    positives = np.flatnonzero(assign.pos_mask)
    negatives = np.flatnonzero(assign.neg_mask)

    num_pos = min(int(spec.num * spec.pos_fraction), len(positives))
    pos_indices = np.sort(rng.choice(positives, size=num_pos, replace=False)) if num_pos else positives[:0]

    num_neg = spec.num - num_pos
    if not math.isinf(spec.neg_pos_ub):
        num_neg = min(num_neg, int(spec.neg_pos_ub * max(1, num_pos)))
    num_neg = min(num_neg, len(negatives))
    neg_indices = np.sort(rng.choice(negatives, size=num_neg, replace=False)) if num_neg else negatives[:0]

    return SamplingResult(pos_indices, neg_indices)
