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
This module contains the hook-based runner: a minimal loop forwarding the model
over the workflow phases, every other behavior being brought by hooks.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from transitions import Machine, MachineError
from typing_extensions import Protocol

from .hooks import Hook, HookPoint

PHASES = ("train", "val")


class HookExecutionError(RuntimeError):
    """A hook callback raised, the run is aborted"""


class RunnerModel(Protocol):
    """What the runner needs from a model"""

    def train_step(self, batch: Any, lr: float) -> float:
        """Forward, backward and optimizer step on one batch, return the loss"""

    def val_step(self, batch: Any) -> float:
        """Forward on one batch without any update, return the loss"""


@dataclass
class RunnerState:
    """
    Counters and records of a run.

    epoch and val_epoch count completed training and validation epochs, iter
    counts completed training iterations; they are incremented before the
    after_* timepoint of the epoch or iteration they count.
    """

    workflow: List[Tuple[str, int]]
    max_epochs: int
    lr: float
    epoch: int = 0
    val_epoch: int = 0
    iter: int = 0
    inner_iter: int = 0
    last_loss: float = float("nan")
    last_val_loss: float = float("nan")
    event_log: List[str] = field(default_factory=list)
    eval_records: Dict[int, Any] = field(default_factory=dict)
    losses: List[float] = field(default_factory=list)


def check_workflow(workflow: Sequence[Sequence]) -> List[Tuple[str, int]]:
    """
    Check a workflow: a non-empty list of (phase, epochs) with phase in train, val

    :param workflow: workflow
    :type workflow: Sequence
    :return: workflow as a list of tuples
    :rtype: List[Tuple[str, int]]
    """
    if not workflow:
        raise ValueError("workflow must not be empty")
    checked = []
    for item in workflow:
        phase, epochs = item
        if phase not in PHASES or int(epochs) < 1:
            raise ValueError(f"invalid workflow item {list(item)}, expected [train|val, epochs >= 1]")
        checked.append((str(phase), int(epochs)))
    return checked


class Runner(Machine):
    """
    Runner class sequencing the workflow phases with a state machine
    """

    _transitions_run = [
        {"trigger": "start", "source": "idle", "dest": "ready", "after": "run_before"},
        {"trigger": "train_epoch", "source": ["ready", "train", "val"], "dest": "train", "after": "run_train_epoch"},
        {"trigger": "val_epoch", "source": ["ready", "train", "val"], "dest": "val", "after": "run_val_epoch"},
        {"trigger": "finish", "source": ["ready", "train", "val"], "dest": "done", "after": "run_after"},
    ]

    def __init__(
        self, workflow: Sequence[Sequence], lr: float, max_epochs: Optional[int] = None, hooks: Sequence[Hook] = ()
    ) -> None:
        """
        Initialize the runner

        :param workflow: list of (phase, epochs)
        :type workflow: Sequence
        :param lr: learning rate used when no hook sets it
        :type lr: float
        :param max_epochs: training epochs, the workflow is repeated until reached.
            Defaults to the training epochs of one workflow pass.
        :type max_epochs: int
        :param hooks: hooks to register
        :type hooks: Sequence[Hook]
        """
        self.workflow = check_workflow(workflow)
        if lr <= 0:
            raise ValueError(f"lr must be strictly positive, got {lr}")
        self.base_lr = lr
        train_epochs = sum(epochs for phase, epochs in self.workflow if phase == "train")
        self.max_epochs = train_epochs if max_epochs is None else max_epochs
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be non-negative, got {self.max_epochs}")

        self._hooks: List[Hook] = []
        for hook in hooks:
            self.register(hook)

        self.run_state = RunnerState(list(self.workflow), self.max_epochs, lr)
        self._model: Optional[RunnerModel] = None
        self._data: Dict[str, Sequence] = {}

        Machine.__init__(
            self,
            states=["idle", "ready", "train", "val", "done"],
            initial="idle",
            transitions=None,
            auto_transitions=False,
        )
        logging.getLogger("transitions").setLevel(logging.WARNING)

    @property
    def hooks(self) -> List[Hook]:
        return list(self._hooks)

    def register(self, hook: Hook) -> "Runner":
        """
        Register a hook, dispatch order is (priority, registration order)

        :param hook: hook to register
        :type hook: Hook
        :return: the runner
        :rtype: Runner
        """
        if any(registered.name == hook.name for registered in self._hooks):
            raise ValueError(f"a hook named {hook.name} is already registered")
        self._hooks.append(hook)
        # sort is stable: equal priorities keep the registration order
        self._hooks.sort(key=lambda registered: registered.priority)
        return self

    def call_hook(self, point: HookPoint) -> None:
        """
        Dispatch a timepoint to the registered hooks and record it in the event log

        :param point: timepoint
        :type point: HookPoint
        :raises HookExecutionError: when a callback raises
        """
        self.run_state.event_log.append(point.value)
        for hook in self._hooks:
            callback = hook.callbacks.get(point)
            if callback is None:
                continue
            logging.debug("Dispatch %s to hook %s", point.value, hook.name)
            try:
                callback(self.run_state)
            except Exception as error:
                raise HookExecutionError(f"hook {hook.name} failed at {point.value}: {error}") from error

    def run(self, model: RunnerModel, data: Dict[str, Sequence]) -> RunnerState:
        """
        Run the workflow until max_epochs training epochs are done

        :param model: model exposing train_step and val_step
        :type model: RunnerModel
        :param data: batches of each phase of the workflow, {'train': [...], 'val': [...]}
        :type data: dict
        :return: final state
        :rtype: RunnerState
        """
        missing = {phase for phase, _ in self.workflow} - set(data)
        if missing:
            raise ValueError(f"no data for workflow phase(s) {sorted(missing)}")
        self._model = model
        self._data = data
        self.run_state = RunnerState(list(self.workflow), self.max_epochs, self.base_lr)
        self.add_transitions(self._transitions_run)
        has_train = any(phase == "train" for phase, _ in self.workflow)

        try:
            self.trigger("start")
            while True:
                for phase, epochs in self.workflow:
                    for _ in range(epochs):
                        if phase == "train" and self.run_state.epoch >= self.max_epochs:
                            break
                        self.trigger(f"{phase}_epoch")
                if not has_train or self.run_state.epoch >= self.max_epochs:
                    break
            self.trigger("finish")
        except MachineError:
            logging.error("Problem occurs during runner sequencing. Be sure of your workflow")
            raise
        finally:
            self.run_exit()
        return self.run_state

    def run_exit(self) -> None:
        """
        Clear transitions and return to state idle

        :return: None
        """
        self.remove_transitions(self._transitions_run)  # type: ignore
        self.set_state("idle")

    def remove_transitions(self, transition_list: List[Dict[str, Any]]) -> None:
        """
        Delete all transitions defined in the input list

        :param transition_list: list of transitions
        :type transition_list: list
        :return: None
        """
        # Transition is removed using trigger name. But one trigger name can be used by multiple transitions
        # In this case, the "remove_transition" function removes all transitions using this trigger name
        # deleted_triggers list is used to avoid multiple call of "remove_transition" with the same trigger name.
        deleted_triggers = []
        for trans in transition_list:
            if trans["trigger"] not in deleted_triggers:
                self.remove_transition(trans["trigger"])
                deleted_triggers.append(trans["trigger"])

    def run_before(self) -> None:
        self.call_hook(HookPoint.BEFORE_RUN)

    def run_after(self) -> None:
        self.call_hook(HookPoint.AFTER_RUN)

    def run_train_epoch(self) -> None:
        """Training epoch: one optimizer step per batch"""
        state = self.run_state
        logging.info("Training epoch %d...", state.epoch + 1)
        self.call_hook(HookPoint.BEFORE_TRAIN_EPOCH)
        for inner_iter, batch in enumerate(self._data["train"]):
            state.inner_iter = inner_iter
            self.call_hook(HookPoint.BEFORE_TRAIN_ITER)
            state.last_loss = float(self._model.train_step(batch, state.lr))  # type: ignore[union-attr]
            state.losses.append(state.last_loss)
            state.iter += 1
            self.call_hook(HookPoint.AFTER_TRAIN_ITER)
        state.epoch += 1
        self.call_hook(HookPoint.AFTER_TRAIN_EPOCH)

    def run_val_epoch(self) -> None:
        """Validation epoch: forward only"""
        state = self.run_state
        self.call_hook(HookPoint.BEFORE_VAL_EPOCH)
        losses = []
        for inner_iter, batch in enumerate(self._data["val"]):
            state.inner_iter = inner_iter
            self.call_hook(HookPoint.BEFORE_VAL_ITER)
            losses.append(float(self._model.val_step(batch)))  # type: ignore[union-attr]
            self.call_hook(HookPoint.AFTER_VAL_ITER)
        state.last_val_loss = sum(losses) / len(losses) if losses else float("nan")
        state.val_epoch += 1
        self.call_hook(HookPoint.AFTER_VAL_EPOCH)
