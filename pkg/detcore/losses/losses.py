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
This module contains the abstract regression loss and the loss output container.
"""
from __future__ import annotations

import logging
from abc import ABCMeta, abstractmethod
from typing import Dict, NamedTuple

import numpy as np

# Floor applied inside logarithms and ratios of the box losses.
EPS = 1e-6


class LossOut(NamedTuple):
    """
    Value and gradient of a loss.

    value is summed over elements, grad has the shape of the prediction.
    flagged is set when an eps floor was used.
    """

    value: float
    grad: np.ndarray
    flagged: bool = False


def weighted(loss: LossOut, loss_weight: float) -> LossOut:
    """
    Scale a loss value and its gradient by the loss weight

    :param loss: loss to scale
    :type loss: LossOut
    :param loss_weight: strictly positive weight
    :type loss_weight: float
    :return: scaled loss
    :rtype: LossOut
    """
    if loss_weight <= 0:
        raise ValueError(f"loss_weight must be strictly positive, got {loss_weight}")
    return LossOut(loss.value * loss_weight, loss.grad * loss_weight, loss.flagged)


class AbstractLoss:
    """
    Abstract regression loss class
    """

    __metaclass__ = ABCMeta

    losses_avail: Dict = {}
    # Box losses consume corner boxes, residual losses consume deltas.
    on_boxes = False
    _LOSS_WEIGHT = 1.0

    def __new__(cls, cfg: dict | None = None):
        """
        Return the plugin associated with the loss type given in the configuration

        :param cfg: configuration {'type': value, 'loss_weight': value, ...}
        :type cfg: dictionary
        """
        if cls is AbstractLoss:
            try:
                return super(AbstractLoss, cls).__new__(cls.losses_avail[cfg["type"]])  # type: ignore[index]
            except KeyError:
                logging.error("No regression loss named %s supported", cfg["type"])  # type: ignore[index]
                raise KeyError
        return super(AbstractLoss, cls).__new__(cls)

    def __init__(self, cfg: Dict) -> None:
        """
        :param cfg: loss configuration
        :type cfg: dict
        :return: None
        """
        self.cfg = self.check_conf(dict(cfg))
        self.loss_weight = float(self.cfg["loss_weight"])

    @classmethod
    def register_subclass(cls, short_name: str):
        """
        Allows to register the subclass with its short name

        :param short_name: the subclass to be registered
        :type short_name: string
        """

        def decorator(subclass):
            """
            Registers the subclass in the available methods

            :param subclass: the subclass to be registered
            :type subclass: object
            """
            cls.losses_avail[short_name] = subclass
            return subclass

        return decorator

    @abstractmethod
    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the loss configuration and fill default parameters

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """

    @abstractmethod
    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        """
        Unweighted loss between predictions and targets, gradient with respect to pred

        :param pred: predicted deltas or boxes (N, 4)
        :type pred: np.ndarray
        :param target: target deltas or boxes (N, 4)
        :type target: np.ndarray
        :return: loss value and gradient
        :rtype: LossOut
        """

    def __call__(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        """Weighted loss"""
        return weighted(self.compute(pred, target), self.loss_weight)


def build_loss(spec: Dict) -> AbstractLoss:
    """
    Instantiate a regression loss from its LossSpec configuration

    :param spec: {'type': ..., 'loss_weight': ..., kind-specific parameters}
    :type spec: dict
    :return: loss plugin
    :rtype: AbstractLoss
    """
    return AbstractLoss(spec)  # type: ignore[abstract]
