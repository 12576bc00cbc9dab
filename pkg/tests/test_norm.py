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
Test norm module
"""

import logging

import numpy as np
import pytest
from json_checker import DictCheckerError

from detcore import norm
from detcore.oracle import numeric_grad, relative_error


def random_state(rng, num_channels, **kwargs):
    return norm.NormState(
        rng.normal(size=num_channels),
        rng.uniform(0.5, 2, size=num_channels),
        rng.uniform(0.5, 2, size=num_channels),
        rng.normal(size=num_channels),
        **kwargs,
    )


class TestBnForward:
    """Test bn_forward function."""

    def test_identity(self, rng):
        state = norm.NormState.identity(3, eps=0, eval=True)
        x = rng.normal(size=(4, 3))
        out, _ = norm.bn_forward(x, state, training=True)
        np.testing.assert_array_equal(out, x)

    def test_eval_formula(self, rng):
        state = random_state(rng, 3, eval=True)
        x = rng.normal(size=(5, 3, 2))
        out, _ = norm.bn_forward(x, state, training=False)
        expected = (x - state.running_mean[None, :, None]) / np.sqrt(state.running_var[None, :, None] + state.eps)
        np.testing.assert_allclose(out, expected * state.gamma[None, :, None] + state.beta[None, :, None])

    @pytest.mark.parametrize("training", [True, False])
    def test_eval_keeps_running_stats(self, rng, training):
        state = random_state(rng, 3, eval=True)
        mean, var = state.running_mean.copy(), state.running_var.copy()
        norm.bn_forward(rng.normal(size=(8, 3)), state, training)
        np.testing.assert_array_equal(state.running_mean, mean)
        np.testing.assert_array_equal(state.running_var, var)

    def test_running_mean_update(self):
        state = norm.NormState.identity(1, momentum=1.0)
        norm.bn_forward(np.array([[1.0], [3.0]]), state, training=True)
        np.testing.assert_array_equal(state.running_mean, [2.0])
        # unbiased batch variance
        np.testing.assert_array_equal(state.running_var, [2.0])

    def test_momentum_blend(self):
        state = norm.NormState.identity(1, momentum=0.1)
        norm.bn_forward(np.array([[1.0], [3.0]]), state, training=True)
        np.testing.assert_allclose(state.running_mean, [0.2])

    def test_inference_does_not_update(self, rng):
        state = norm.NormState.identity(2)
        norm.bn_forward(rng.normal(size=(4, 2)), state, training=False)
        np.testing.assert_array_equal(state.running_mean, [0.0, 0.0])

    def test_single_sample_batch(self):
        state = norm.NormState.identity(2)
        out, _ = norm.bn_forward(np.array([[4.0, -1.0]]), state, training=True)
        np.testing.assert_array_equal(out, [[0.0, 0.0]])

    def test_zero_variance_without_eps(self):
        state = norm.NormState.identity(1, eps=0)
        with pytest.raises(ValueError, match="eps = 0"):
            norm.bn_forward(np.array([[1.0], [1.0]]), state, training=True)

    def test_eval_is_affine(self, rng):
        state = random_state(rng, 3, eval=True)
        x, y = rng.normal(size=(2, 4, 3))
        zero = np.zeros_like(x)

        def forward(value):
            return norm.bn_forward(value, state, training=True)[0]

        np.testing.assert_allclose(forward(x + y) - forward(y), forward(x) - forward(zero), atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="tensor"):
            norm.bn_forward(rng.normal(size=(4, 2)), norm.NormState.identity(3), training=True)

    @pytest.mark.parametrize(
        "kwargs",
        [
            pytest.param({"eps": -1.0}, id="Negative eps"),
            pytest.param({"momentum": 1.5}, id="Momentum above one"),
        ],
    )
    def test_invalid_state(self, kwargs):
        with pytest.raises(ValueError):
            norm.NormState.identity(2, **kwargs)


class TestBnBackward:
    """Test bn_backward function."""

    @pytest.mark.parametrize("training", [True, False])
    def test_finite_difference(self, rng, training):
        state = random_state(rng, 3)
        x = rng.normal(size=(4, 3))
        weights = rng.normal(size=(4, 3))

        def loss(value):
            return float(np.sum(norm.bn_forward(value, state, training)[0] * weights))

        _, ctx = norm.bn_forward(x, state, training)
        grads = norm.bn_backward(weights, ctx)
        assert relative_error(grads.grad_x, numeric_grad(loss, x)) < 1e-4

    def test_gamma_finite_difference(self, rng):
        state = random_state(rng, 3)
        x = rng.normal(size=(4, 3))
        weights = rng.normal(size=(4, 3))

        def loss(gamma):
            perturbed = norm.NormState(state.running_mean, state.running_var, gamma, state.beta)
            return float(np.sum(norm.bn_forward(x, perturbed, training=True)[0] * weights))

        _, ctx = norm.bn_forward(x, state, training=True)
        grads = norm.bn_backward(weights, ctx)
        assert relative_error(grads.grad_gamma, numeric_grad(loss, state.gamma)) < 1e-4

    def test_no_affine_grads(self, rng):
        state = random_state(rng, 3, requires_grad=False)
        _, ctx = norm.bn_forward(rng.normal(size=(4, 3)), state, training=True)
        grads = norm.bn_backward(rng.normal(size=(4, 3)), ctx)
        np.testing.assert_array_equal(grads.grad_gamma, np.zeros(3))
        np.testing.assert_array_equal(grads.grad_beta, np.zeros(3))

    def test_doubled_gamma_doubles_grad_x(self, rng):
        state = random_state(rng, 3, eval=True)
        x, grad_out = rng.normal(size=(2, 4, 3))
        _, ctx = norm.bn_forward(x, state, training=True)
        single = norm.bn_backward(grad_out, ctx).grad_x
        state.gamma = state.gamma * 2
        _, ctx = norm.bn_forward(x, state, training=True)
        np.testing.assert_allclose(norm.bn_backward(grad_out, ctx).grad_x, 2 * single)

    def test_mismatched_context(self, rng):
        _, ctx = norm.bn_forward(rng.normal(size=(4, 3)), norm.NormState.identity(3), training=True)
        with pytest.raises(ValueError, match="does not match"):
            norm.bn_backward(np.zeros((2, 3)), ctx)


class TestGroupNorm:
    """Test gn_forward and gn_backward functions."""

    @staticmethod
    def spec(num_channels, num_groups, eps=1e-5, rng=None):
        gamma = np.ones(num_channels) if rng is None else rng.uniform(0.5, 2, size=num_channels)
        beta = np.zeros(num_channels) if rng is None else rng.normal(size=num_channels)
        return norm.GroupNormSpec(num_groups, gamma, beta, eps)

    def test_two_values(self):
        out, _ = norm.gn_forward(np.array([[1.0, 3.0]]), self.spec(2, 1, eps=0))
        np.testing.assert_array_equal(out, [[-1.0, 1.0]])

    def test_constant_input(self):
        out, _ = norm.gn_forward(np.full((2, 4, 3), 7.0), self.spec(4, 2))
        np.testing.assert_array_equal(out, np.zeros((2, 4, 3)))

    def test_group_statistics(self, rng):
        x = rng.normal(3, 5, size=(3, 8, 5))
        out, _ = norm.gn_forward(x, self.spec(8, 4, eps=0))
        grouped = out.reshape(3, 4, -1)
        assert np.max(np.abs(grouped.mean(axis=-1))) < 1e-5
        assert np.max(np.abs(grouped.var(axis=-1) - 1)) < 1e-4

    def test_shift_invariance(self, rng):
        x = rng.normal(size=(2, 4, 3))
        shifts = np.repeat(rng.normal(size=(2, 2)), 2, axis=1)[:, :, None]
        spec = self.spec(4, 2)
        np.testing.assert_allclose(norm.gn_forward(x + shifts, spec)[0], norm.gn_forward(x, spec)[0], atol=1e-6)

    def test_finite_difference(self, rng):
        spec = self.spec(4, 2, rng=rng)
        x = rng.normal(size=(2, 4, 3))
        weights = rng.normal(size=(2, 4, 3))

        def loss(value):
            return float(np.sum(norm.gn_forward(value, spec)[0] * weights))

        grads = norm.gn_backward(weights, norm.gn_forward(x, spec)[1])
        assert relative_error(grads.grad_x, numeric_grad(loss, x)) < 1e-4

    def test_grad_beta_is_sum(self, rng):
        grad_out = rng.normal(size=(2, 4, 3))
        grads = norm.gn_backward(grad_out, norm.gn_forward(rng.normal(size=(2, 4, 3)), self.spec(4, 2))[1])
        np.testing.assert_allclose(grads.grad_beta, grad_out.sum(axis=(0, 2)))

    def test_zero_grad(self, rng):
        grads = norm.gn_backward(np.zeros((2, 4, 3)), norm.gn_forward(rng.normal(size=(2, 4, 3)), self.spec(4, 2))[1])
        for grad in grads:
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_divisibility(self):
        with pytest.raises(ValueError, match="groups"):
            self.spec(6, 4)


class TestNormLayers:
    """Test normalization layers built from the configuration."""

    @pytest.mark.parametrize(
        ["cfg", "expected"],
        [
            pytest.param({"type": "BN"}, norm.BatchNorm, id="BN"),
            pytest.param({"type": "FrozenBN"}, norm.FrozenBatchNorm, id="FrozenBN"),
            pytest.param({"type": "GN", "num_groups": 2}, norm.GroupNorm, id="GN"),
        ],
    )
    def test_build(self, cfg, expected):
        assert isinstance(norm.build_norm(cfg, 4), expected)

    def test_unknown_type(self):
        with pytest.raises(KeyError):
            norm.build_norm({"type": "SyncBN"}, 4)

    def test_bad_parameter(self):
        with pytest.raises(DictCheckerError):
            norm.build_norm({"type": "BN", "momentum": 2}, 4)

    def test_gn_channels(self):
        with pytest.raises(ValueError, match="groups"):
            norm.build_norm({"type": "GN"}, 16)

    def test_frozen_flags_forced(self, caplog):
        with caplog.at_level(logging.WARNING):
            layer = norm.build_norm({"type": "FrozenBN", "eval": False}, 4)
        assert (layer.cfg["eval"], layer.requires_grad) == (True, False)
        assert "FrozenBN ignores" in caplog.text

    def test_frozen_state_bit_identical(self, rng):
        layer = norm.build_norm({"type": "FrozenBN"}, 3)
        layer.state.running_mean = rng.normal(size=3)
        layer.state.running_var = rng.uniform(0.5, 2, size=3)
        before = {name: np.copy(value) for name, value in vars(layer.state).items()}
        for _ in range(100):
            layer.forward(rng.normal(size=(4, 3)), training=True)
            layer.backward(rng.normal(size=(4, 3)))
            assert layer.trainable() == {}
        for name, value in vars(layer.state).items():
            np.testing.assert_array_equal(value, before[name])

    def test_trainable_bn(self, rng):
        layer = norm.build_norm({"type": "BN"}, 3)
        layer.forward(rng.normal(size=(4, 3)), training=True)
        layer.backward(np.ones((4, 3)))
        assert sorted(layer.trainable()) == ["beta", "gamma"]
        np.testing.assert_array_equal(layer.trainable()["beta"], [4.0, 4.0, 4.0])

    def test_backward_before_forward(self):
        with pytest.raises(ValueError, match="before forward"):
            norm.build_norm({"type": "BN"}, 3).backward(np.zeros((1, 3)))
