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
This module contains the forward and backward passes of batch and group normalization.

Tensors are dense arrays (N, C, ...) with channels on axis 1.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, cast

import numpy as np


@dataclass
class NormState:
    """
    Batch normalization state: running statistics, affine weights and flags

    eval freezes the running statistics, requires_grad enables the affine weight gradients.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    eval: bool = False
    requires_grad: bool = True

    def __post_init__(self) -> None:
        shapes = {np.shape(v) for v in (self.running_mean, self.running_var, self.gamma, self.beta)}
        if len(shapes) != 1:
            raise ValueError(f"norm state vectors must share the same shape, got {shapes}")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if not 0 <= self.momentum <= 1:
            raise ValueError(f"momentum must be in [0, 1], got {self.momentum}")

    @classmethod
    def identity(cls, num_channels: int, **kwargs) -> "NormState":
        """State with E(x) = 0, Var(x) = 1, gamma = 1 and beta = 0"""
        return cls(
            np.zeros(num_channels), np.ones(num_channels), np.ones(num_channels), np.zeros(num_channels), **kwargs
        )

    @property
    def num_channels(self) -> int:
        return len(self.gamma)


@dataclass
class GroupNormSpec:
    """Group normalization parameters"""

    num_groups: int
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    requires_grad: bool = True

    def __post_init__(self) -> None:
        if self.num_groups < 1:
            raise ValueError(f"num_groups must be at least 1, got {self.num_groups}")
        if np.shape(self.gamma) != np.shape(self.beta):
            raise ValueError("gamma and beta must share the same shape")
        if len(self.gamma) % self.num_groups:
            raise ValueError(f"{len(self.gamma)} channels cannot be split into {self.num_groups} groups")
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")


class NormGrads(NamedTuple):
    """Gradients of a normalization layer"""

    grad_x: np.ndarray
    grad_gamma: np.ndarray
    grad_beta: np.ndarray


class NormContext(NamedTuple):
    """Forward intermediates kept for the backward pass"""

    x_hat: np.ndarray
    invstd: np.ndarray
    gamma: np.ndarray
    batch_stats: bool
    requires_grad: bool
    shape: Tuple[int, ...]
    num_groups: int = 0
    # Pre-affine normalized values of the (N, G, M) view, group norm only.
    grouped: Optional[np.ndarray] = None


def _channel_view(values: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape a per-channel vector to broadcast against a (N, C, ...) tensor"""
    return np.asarray(values).reshape((1, -1) + (1,) * (ndim - 2))


def _reduce_axes(ndim: int) -> Tuple[int, ...]:
    return (0,) + tuple(range(2, ndim))


def _invstd(var: np.ndarray, eps: float) -> np.ndarray:
    denominator = var + eps
    if np.any(denominator <= 0):
        raise ValueError("zero variance with eps = 0, normalization is undefined")
    return 1 / np.sqrt(denominator)


def bn_forward(x: np.ndarray, state: NormState, training: bool) -> Tuple[np.ndarray, NormContext]:
    """
    Batch normalization forward pass

    Batch statistics are used, and the running statistics updated with
    (1 - momentum) * running + momentum * batch, only when training and not eval.
    The running variance is updated with the unbiased batch variance.

    :param x: input (N, C, ...)
    :type x: np.ndarray
    :param state: normalization state, updated in place
    :type state: NormState
    :param training: training mode
    :type training: bool
    :return: output with the shape of x and the backward context
    :rtype: Tuple[np.ndarray, NormContext]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[1] != state.num_channels:
        raise ValueError(f"expected a (N, {state.num_channels}, ...) tensor, got shape {x.shape}")

    axes = _reduce_axes(x.ndim)
    batch_stats = training and not state.eval
    if batch_stats:
        count = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        mean, var = state.running_mean, state.running_var

    invstd = _invstd(np.asarray(var), state.eps)
    x_hat = (x - _channel_view(mean, x.ndim)) * _channel_view(invstd, x.ndim)
    out = x_hat * _channel_view(state.gamma, x.ndim) + _channel_view(state.beta, x.ndim)
    ctx = NormContext(x_hat, invstd, np.array(state.gamma, copy=True), batch_stats, state.requires_grad, x.shape)
    return out, ctx


def bn_backward(grad_out: np.ndarray, ctx: NormContext) -> NormGrads:
    """
    Batch normalization backward pass

    :param grad_out: gradient with respect to the output
    :type grad_out: np.ndarray
    :param ctx: context of the matching forward pass
    :type ctx: NormContext
    :return: gradients, zero affine gradients when requires_grad is false
    :rtype: NormGrads
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != ctx.shape or ctx.num_groups:
        raise ValueError(f"gradient of shape {grad_out.shape} does not match the batch norm context")

    ndim = grad_out.ndim
    axes = _reduce_axes(ndim)
    grad_x_hat = grad_out * _channel_view(ctx.gamma, ndim)
    invstd = _channel_view(ctx.invstd, ndim)
    if ctx.batch_stats:
        count = grad_out.size // grad_out.shape[1]
        sum_grad = grad_x_hat.sum(axis=axes, keepdims=True)
        sum_grad_xhat = (grad_x_hat * ctx.x_hat).sum(axis=axes, keepdims=True)
        grad_x = invstd / count * (count * grad_x_hat - sum_grad - ctx.x_hat * sum_grad_xhat)
    else:
        grad_x = grad_x_hat * invstd

    return NormGrads(grad_x, *_affine_grads(grad_out, ctx))


def _affine_grads(grad_out: np.ndarray, ctx: NormContext) -> Tuple[np.ndarray, np.ndarray]:
    axes = _reduce_axes(grad_out.ndim)
    if not ctx.requires_grad:
        return np.zeros_like(ctx.gamma), np.zeros_like(ctx.gamma)
    return (grad_out * ctx.x_hat).sum(axis=axes), grad_out.sum(axis=axes)


def gn_forward(x: np.ndarray, spec: GroupNormSpec) -> Tuple[np.ndarray, NormContext]:
    """
    Group normalization forward pass: per sample and channel group, subtract
    the group mean and divide by sqrt(group var + eps), then apply the
    per-channel affine map

    :param x: input (N, C, ...)
    :type x: np.ndarray
    :param spec: group normalization parameters
    :type spec: GroupNormSpec
    :return: output with the shape of x and the backward context
    :rtype: Tuple[np.ndarray, NormContext]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[1] != len(spec.gamma):
        raise ValueError(f"expected a (N, {len(spec.gamma)}, ...) tensor, got shape {x.shape}")

    grouped = x.reshape(x.shape[0], spec.num_groups, -1)
    mean = grouped.mean(axis=-1, keepdims=True)
    invstd = _invstd(grouped.var(axis=-1, keepdims=True), spec.eps)
    grouped_hat = (grouped - mean) * invstd
    x_hat = grouped_hat.reshape(x.shape)
    out = x_hat * _channel_view(spec.gamma, x.ndim) + _channel_view(spec.beta, x.ndim)
    ctx = NormContext(
        x_hat, invstd, np.array(spec.gamma, copy=True), True, spec.requires_grad, x.shape, spec.num_groups, grouped_hat
    )
    return out, ctx


def gn_backward(grad_out: np.ndarray, ctx: NormContext) -> NormGrads:
    """
    Group normalization backward pass

    :param grad_out: gradient with respect to the output
    :type grad_out: np.ndarray
    :param ctx: context of the matching forward pass
    :type ctx: NormContext
    :return: gradients, zero affine gradients when requires_grad is false
    :rtype: NormGrads
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != ctx.shape or not ctx.num_groups:
        raise ValueError(f"gradient of shape {grad_out.shape} does not match the group norm context")

    grouped_hat = cast(np.ndarray, ctx.grouped)
    grad_x_hat = (grad_out * _channel_view(ctx.gamma, grad_out.ndim)).reshape(grouped_hat.shape)
    count = grouped_hat.shape[-1]
    sum_grad = grad_x_hat.sum(axis=-1, keepdims=True)
    sum_grad_xhat = (grad_x_hat * grouped_hat).sum(axis=-1, keepdims=True)
    grad_x = ctx.invstd / count * (count * grad_x_hat - sum_grad - grouped_hat * sum_grad_xhat)
    return NormGrads(grad_x.reshape(ctx.shape), *_affine_grads(grad_out, ctx))
