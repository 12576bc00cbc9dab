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
This module contains the residual regression losses: Smooth L1, L1 and Balanced L1.

They act on the residual x = pred - target element-wise and sum over elements.
"""

from typing import Dict, Union

import numpy as np
from json_checker import And, Checker, Or

from .losses import AbstractLoss, LossOut

ArrayLike = Union[float, np.ndarray]


def smooth_l1(x: ArrayLike, beta: float = 1.0) -> LossOut:
    """
    Smooth L1 loss: 0.5 * x**2 / beta when |x| < beta, |x| - 0.5 * beta otherwise

    :param x: residuals
    :type x: float or np.ndarray
    :param beta: threshold between the quadratic and the linear branch
    :type beta: float
    :return: summed value and gradient with respect to x
    :rtype: LossOut
    """
    if beta <= 0:
        raise ValueError(f"smooth_l1 beta must be strictly positive, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    abs_x = np.abs(x)
    quadratic = abs_x < beta
    value = np.where(quadratic, 0.5 * x**2 / beta, abs_x - 0.5 * beta)
    grad = np.where(quadratic, x / beta, np.sign(x))
    return LossOut(float(np.sum(value)), grad)


def l1(x: ArrayLike) -> LossOut:
    """
    L1 loss, subgradient 0 at x = 0

    :param x: residuals
    :type x: float or np.ndarray
    :return: summed value and gradient with respect to x
    :rtype: LossOut
    """
    x = np.asarray(x, dtype=np.float64)
    return LossOut(float(np.sum(np.abs(x))), np.sign(x))


def balanced_l1(x: ArrayLike, alpha: float = 0.5, gamma: float = 1.5) -> LossOut:
    """
    Balanced L1 loss

    With b such that alpha * ln(b + 1) = gamma:

    - |x| < 1: alpha / b * (b|x| + 1) * ln(b|x| + 1) - alpha|x|
    - otherwise: gamma|x| + gamma / b - alpha

    :param x: residuals
    :type x: float or np.ndarray
    :param alpha: inner branch factor
    :type alpha: float
    :param gamma: slope of the outer branch
    :type gamma: float
    :return: summed value and gradient with respect to x
    :rtype: LossOut
    """
    if alpha <= 0 or gamma <= 0:
        raise ValueError(f"balanced_l1 alpha and gamma must be strictly positive, got {alpha} and {gamma}")
    x = np.asarray(x, dtype=np.float64)
    b = np.expm1(gamma / alpha)
    abs_x = np.abs(x)
    inner = abs_x < 1
    value = np.where(
        inner,
        alpha / b * (b * abs_x + 1) * np.log1p(b * abs_x) - alpha * abs_x,
        gamma * abs_x + gamma / b - alpha,
    )
    grad = np.sign(x) * np.where(inner, alpha * np.log1p(b * abs_x), gamma)
    return LossOut(float(np.sum(value)), grad)


def _residual(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction and target must share the same shape, got {pred.shape} and {target.shape}")
    return pred - target


@AbstractLoss.register_subclass("smooth_l1")
class SmoothL1Loss(AbstractLoss):
    """
    Smooth L1 regression loss
    """

    _BETA = 1.0

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the smooth_l1 configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)
        cfg.setdefault("beta", self._BETA)

        schema = {
            "type": And(str, lambda x: x == "smooth_l1"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
            "beta": And(Or(int, float), lambda x: x > 0),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return smooth_l1(_residual(pred, target), self.cfg["beta"])


@AbstractLoss.register_subclass("l1")
class L1Loss(AbstractLoss):
    """
    L1 regression loss
    """

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the l1 configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)

        schema = {
            "type": And(str, lambda x: x == "l1"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return l1(_residual(pred, target))


@AbstractLoss.register_subclass("balanced_l1")
class BalancedL1Loss(AbstractLoss):
    """
    Balanced L1 regression loss
    """

    _ALPHA = 0.5
    _GAMMA = 1.5

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the balanced_l1 configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)
        cfg.setdefault("alpha", self._ALPHA)
        cfg.setdefault("gamma", self._GAMMA)

        schema = {
            "type": And(str, lambda x: x == "balanced_l1"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
            "alpha": And(Or(int, float), lambda x: x > 0),
            "gamma": And(Or(int, float), lambda x: x > 0),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return balanced_l1(_residual(pred, target), self.cfg["alpha"], self.cfg["gamma"])
