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
This module contains the hook definitions of the runner: timepoints, priorities and built-in hooks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Any, Callable, Dict

from .lr_schedule import LrSchedule, lr_at

if TYPE_CHECKING:
    from .runner import RunnerState


class HookPoint(str, Enum):
    """The ten timepoints at which hooks are dispatched"""

    BEFORE_RUN = "before_run"
    BEFORE_TRAIN_EPOCH = "before_train_epoch"
    AFTER_TRAIN_EPOCH = "after_train_epoch"
    BEFORE_TRAIN_ITER = "before_train_iter"
    AFTER_TRAIN_ITER = "after_train_iter"
    BEFORE_VAL_EPOCH = "before_val_epoch"
    AFTER_VAL_EPOCH = "after_val_epoch"
    BEFORE_VAL_ITER = "before_val_iter"
    AFTER_VAL_ITER = "after_val_iter"
    AFTER_RUN = "after_run"


class Priority(IntEnum):
    """Named priorities, lower fires earlier"""

    HIGHEST = 0
    VERY_HIGH = 10
    HIGH = 30
    NORMAL = 50
    LOW = 70
    VERY_LOW = 90
    LOWEST = 100


Callback = Callable[["RunnerState"], None]


@dataclass
class Hook:
    """
    Named callbacks bound to timepoints

    Hooks fire by increasing priority, then by registration order.
    """

    name: str
    priority: int = Priority.NORMAL
    callbacks: Dict[HookPoint, Callback] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.callbacks = {HookPoint(point): callback for point, callback in self.callbacks.items()}


class LrUpdaterHook(Hook):
    """Sets the runner learning rate from a step schedule"""

    def __init__(self, schedule: LrSchedule, priority: int = Priority.VERY_HIGH) -> None:
        self.schedule = schedule
        super().__init__(
            "lr_updater",
            priority,
            {
                HookPoint.BEFORE_TRAIN_EPOCH: self.before_train_epoch,
                HookPoint.BEFORE_TRAIN_ITER: self.before_train_iter,
            },
        )

    def before_train_epoch(self, state: RunnerState) -> None:
        state.lr = lr_at(self.schedule, state.epoch)

    def before_train_iter(self, state: RunnerState) -> None:
        if state.iter < self.schedule.warmup_iters:
            state.lr = lr_at(self.schedule, state.epoch, state.iter)
        elif state.iter == self.schedule.warmup_iters:
            state.lr = lr_at(self.schedule, state.epoch)


class LoggerHook(Hook):
    """Logs the training loss every interval iterations and the epoch summaries"""

    def __init__(self, interval: int = 10, priority: int = Priority.VERY_LOW) -> None:
        if interval < 1:
            raise ValueError(f"logger interval must be at least 1, got {interval}")
        self.interval = interval
        super().__init__(
            "logger",
            priority,
            {
                HookPoint.AFTER_TRAIN_ITER: self.after_train_iter,
                HookPoint.AFTER_TRAIN_EPOCH: self.after_train_epoch,
                HookPoint.AFTER_VAL_EPOCH: self.after_val_epoch,
            },
        )

    def after_train_iter(self, state: RunnerState) -> None:
        if state.iter % self.interval == 0:
            logging.info(
                "Epoch [%d] iter %d, lr: %.3e, loss: %.4f", state.epoch + 1, state.iter, state.lr, state.last_loss
            )

    @staticmethod
    def after_train_epoch(state: RunnerState) -> None:
        logging.info("Training epoch %d done, %d iterations so far", state.epoch, state.iter)

    @staticmethod
    def after_val_epoch(state: RunnerState) -> None:
        logging.info("Validation epoch %d done, loss: %.4f", state.val_epoch, state.last_val_loss)


class CheckpointHook(Hook):
    """Calls a saving function every interval training epochs"""

    def __init__(self, save: Callback, interval: int = 1, priority: int = Priority.NORMAL) -> None:
        if interval < 1:
            raise ValueError(f"checkpoint interval must be at least 1, got {interval}")
        self.save = save
        self.interval = interval
        super().__init__("checkpoint", priority, {HookPoint.AFTER_TRAIN_EPOCH: self.after_train_epoch})

    def after_train_epoch(self, state: RunnerState) -> None:
        if state.epoch % self.interval == 0:
            self.save(state)


def eval_hook(every_n_epochs: int, evaluator: Callable[["RunnerState"], Any], priority: int = Priority.LOW) -> Hook:
    """
    Hook running the evaluator after every n-th training epoch

    The result is recorded in state.eval_records under the epoch number.

    :param every_n_epochs: evaluation period, at least 1
    :type every_n_epochs: int
    :param evaluator: callable returning an evaluation result
    :type evaluator: Callable
    :param priority: hook priority
    :type priority: int
    :return: evaluation hook
    :rtype: Hook
    """
    if every_n_epochs < 1:
        raise ValueError(f"evaluation interval must be at least 1, got {every_n_epochs}")

    def after_train_epoch(state: RunnerState) -> None:
        if state.epoch % every_n_epochs == 0:
            logging.info("Evaluation...")
            state.eval_records[state.epoch] = evaluator(state)

    return Hook("eval", priority, {HookPoint.AFTER_TRAIN_EPOCH: after_train_epoch})
