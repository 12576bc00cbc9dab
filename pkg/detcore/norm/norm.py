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
This module contains the normalization layers selectable from the configuration: BN, FrozenBN and GN.
"""
from __future__ import annotations

import logging
from abc import ABCMeta, abstractmethod
from typing import Dict, Optional

import numpy as np
from json_checker import And, Checker, Or

from .functional import (
    GroupNormSpec,
    NormContext,
    NormGrads,
    NormState,
    bn_backward,
    bn_forward,
    gn_backward,
    gn_forward,
)


class AbstractNorm:
    """
    Abstract normalization layer class
    """

    __metaclass__ = ABCMeta

    norms_avail: Dict = {}

    _EVAL = False
    _REQUIRES_GRAD = True
    _MOMENTUM = 0.1
    _EPS = 1e-5
    _NUM_GROUPS = 32

    def __new__(cls, cfg: dict | None = None, num_channels: int | None = None):
        """
        Return the plugin associated with the norm type given in the configuration

        :param cfg: configuration {'type': value, ...}
        :type cfg: dictionary
        :param num_channels: number of channels
        :type num_channels: int
        """
        if cls is AbstractNorm:
            try:
                return super(AbstractNorm, cls).__new__(cls.norms_avail[cfg["type"]])  # type: ignore[index]
            except KeyError:
                logging.error("No normalization layer named %s supported", cfg["type"])  # type: ignore[index]
                raise KeyError
        return super(AbstractNorm, cls).__new__(cls)

    def __init__(self, cfg: Dict, num_channels: int) -> None:
        """
        :param cfg: norm configuration
        :type cfg: dict
        :param num_channels: number of channels
        :type num_channels: int
        :return: None
        """
        self.cfg = self.check_conf(dict(cfg), num_channels)
        self.num_channels = num_channels
        self._ctx: Optional[NormContext] = None
        self.grads: Optional[NormGrads] = None

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
            cls.norms_avail[short_name] = subclass
            return subclass

        return decorator

    def check_conf(self, cfg: Dict, num_channels: int) -> Dict:
        """
        Check the norm configuration and fill default parameters

        :param cfg: norm configuration
        :type cfg: dict
        :param num_channels: number of channels
        :type num_channels: int
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("eval", self._EVAL)
        cfg.setdefault("requires_grad", self._REQUIRES_GRAD)
        cfg.setdefault("momentum", self._MOMENTUM)
        cfg.setdefault("eps", self._EPS)
        cfg.setdefault("num_groups", self._NUM_GROUPS)

        schema = {
            "type": And(str, lambda x: x in self.norms_avail),
            "eval": bool,
            "requires_grad": bool,
            "momentum": And(Or(int, float), lambda x: 0 <= x <= 1),
            "eps": And(Or(int, float), lambda x: x >= 0),
            "num_groups": And(int, lambda x: x >= 1),
        }
        checker = Checker(schema)
        checker.validate(cfg)

        if num_channels < 1:
            raise ValueError(f"num_channels must be at least 1, got {num_channels}")
        return cfg

    @property
    def requires_grad(self) -> bool:
        return bool(self.cfg["requires_grad"])

    @abstractmethod
    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        """
        Normalize x (N, C, ...) and keep the context of the backward pass

        :param x: input tensor
        :type x: np.ndarray
        :param training: training mode
        :type training: bool
        :return: normalized tensor
        :rtype: np.ndarray
        """

    @abstractmethod
    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """
        Backward pass of the last forward call, affine gradients are kept in self.grads

        :param grad_out: gradient with respect to the output
        :type grad_out: np.ndarray
        :return: gradient with respect to the input
        :rtype: np.ndarray
        """

    @abstractmethod
    def parameters(self) -> Dict[str, np.ndarray]:
        """Affine weights, updated in place by the optimizer"""

    def trainable(self) -> Dict[str, np.ndarray]:
        """Affine weights with their gradients, empty when requires_grad is false"""
        if not self.requires_grad or self.grads is None:
            return {}
        return {"gamma": self.grads.grad_gamma, "beta": self.grads.grad_beta}

    def _context(self) -> NormContext:
        if self._ctx is None:
            raise ValueError("backward called before forward")
        return self._ctx


@AbstractNorm.register_subclass("BN")
class BatchNorm(AbstractNorm):
    """
    Batch normalization with independent eval and requires_grad switches
    """

    def __init__(self, cfg: Dict, num_channels: int) -> None:
        super().__init__(cfg, num_channels)
        self.state = NormState.identity(
            num_channels,
            momentum=self.cfg["momentum"],
            eps=self.cfg["eps"],
            eval=self.cfg["eval"],
            requires_grad=self.cfg["requires_grad"],
        )

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        out, self._ctx = bn_forward(x, self.state, training)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grads = bn_backward(grad_out, self._context())
        return self.grads.grad_x

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"gamma": self.state.gamma, "beta": self.state.beta}


@AbstractNorm.register_subclass("FrozenBN")
class FrozenBatchNorm(BatchNorm):
    """
    Batch normalization with frozen statistics and frozen affine weights
    """

    _EVAL = True
    _REQUIRES_GRAD = False

    def check_conf(self, cfg: Dict, num_channels: int) -> Dict:
        cfg = super().check_conf(cfg, num_channels)
        if cfg["eval"] is not True or cfg["requires_grad"] is not False:
            logging.warning("FrozenBN ignores eval=%s and requires_grad=%s", cfg["eval"], cfg["requires_grad"])
        cfg["eval"] = True
        cfg["requires_grad"] = False
        return cfg


@AbstractNorm.register_subclass("GN")
class GroupNorm(AbstractNorm):
    """
    Group normalization, independent of the batch size
    """

    def __init__(self, cfg: Dict, num_channels: int) -> None:
        super().__init__(cfg, num_channels)
        self.spec = GroupNormSpec(
            num_groups=self.cfg["num_groups"],
            gamma=np.ones(num_channels),
            beta=np.zeros(num_channels),
            eps=self.cfg["eps"],
            requires_grad=self.cfg["requires_grad"],
        )

    def check_conf(self, cfg: Dict, num_channels: int) -> Dict:
        cfg = super().check_conf(cfg, num_channels)
        if num_channels % cfg["num_groups"]:
            raise ValueError(f"{num_channels} channels cannot be split into {cfg['num_groups']} groups")
        return cfg

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        out, self._ctx = gn_forward(x, self.spec)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grads = gn_backward(grad_out, self._context())
        return self.grads.grad_x

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"gamma": self.spec.gamma, "beta": self.spec.beta}


def build_norm(cfg: Dict, num_channels: int) -> AbstractNorm:
    """
    Instantiate a normalization layer from its configuration

    :param cfg: {'type': 'BN' | 'FrozenBN' | 'GN', ...}
    :type cfg: dict
    :param num_channels: number of channels
    :type num_channels: int
    :return: normalization layer
    :rtype: AbstractNorm
    """
    return AbstractNorm(cfg, num_channels)  # type: ignore[abstract]
