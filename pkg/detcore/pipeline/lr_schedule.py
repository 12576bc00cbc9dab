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
This module contains the step learning rate schedule with linear warmup.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class LrSchedule:
    """
    Step decay schedule: base_lr * factor ** (number of steps <= epoch),
    ramped linearly from warmup_ratio * lr during the first warmup_iters iterations
    """

    base_lr: float
    steps: Sequence[int] = field(default_factory=tuple)
    factor: float = 0.1
    warmup_iters: int = 0
    warmup_ratio: float = 1.0 / 3

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be strictly positive, got {self.base_lr}")
        if self.factor <= 0:
            raise ValueError(f"lr decay factor must be strictly positive, got {self.factor}")
        if any(later <= earlier for earlier, later in zip(self.steps, self.steps[1:])):
            raise ValueError(f"lr steps must be strictly increasing, got {list(self.steps)}")
        if self.warmup_iters < 0:
            raise ValueError(f"warmup_iters must be non-negative, got {self.warmup_iters}")
        if not 0 < self.warmup_ratio <= 1:
            raise ValueError(f"warmup_ratio must be in (0, 1], got {self.warmup_ratio}")


def lr_at(schedule: LrSchedule, epoch: int, iteration: Optional[int] = None) -> float:
    """
    Learning rate of a 0-based epoch, and of a 0-based global iteration during warmup

    :param schedule: learning rate schedule
    :type schedule: LrSchedule
    :param epoch: epoch index
    :type epoch: int
    :param iteration: global iteration index, warmup is applied when it is below warmup_iters
    :type iteration: int
    :return: learning rate
    :rtype: float
    """
    passed = int(np.sum(np.asarray(schedule.steps) <= epoch))
    lr = schedule.base_lr * schedule.factor**passed
    if iteration is not None and iteration < schedule.warmup_iters:
        lr *= schedule.warmup_ratio + (1 - schedule.warmup_ratio) * iteration / schedule.warmup_iters
    return lr
