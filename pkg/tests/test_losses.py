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
Test losses module
"""

import numpy as np
import pytest
from json_checker import DictCheckerError

from detcore import losses
from detcore.oracle import numeric_grad, relative_error
from tests import common


class TestSmoothL1:
    """Test smooth_l1 function."""

    @pytest.mark.parametrize(
        ["x", "beta", "value", "grad"],
        [
            pytest.param(0.0, 0.3, 0.0, 0.0, id="Zero"),
            pytest.param(0.5, 1.0, 0.125, 0.5, id="Quadratic branch"),
            pytest.param(2.0, 1.0, 1.5, 1.0, id="Linear branch"),
            pytest.param(-2.0, 1.0, 1.5, -1.0, id="Negative linear branch"),
        ],
    )
    def test_values(self, x, beta, value, grad):
        out = losses.smooth_l1(x, beta)
        assert out.value == pytest.approx(value)
        assert float(out.grad) == pytest.approx(grad)
        assert not out.flagged

    @pytest.mark.parametrize("beta", [0.2, 1.0, 1 / 9])
    def test_continuity_at_beta(self, beta):
        below, above = losses.smooth_l1(beta * (1 - 1e-12), beta), losses.smooth_l1(beta * (1 + 1e-12), beta)
        assert abs(below.value - above.value) < 1e-9
        assert abs(float(below.grad) - float(above.grad)) < 1e-9

    def test_l1_limit(self, rng):
        residuals = rng.uniform(-3, 3, size=100)
        residuals = residuals[np.abs(residuals) > 1e-4]
        for x in residuals:
            assert abs(losses.smooth_l1(x, 1e-8).value - abs(x)) < 1e-7
            assert abs(losses.smooth_l1(x, 1e-8).value - losses.l1(x).value) < 1e-7

    def test_invalid_beta(self):
        with pytest.raises(ValueError, match="beta"):
            losses.smooth_l1(1.0, 0.0)

    def test_sums_over_elements(self):
        assert losses.smooth_l1(np.array([0.5, 2.0])).value == pytest.approx(1.625)


class TestL1:
    """Test l1 function."""

    def test_values(self):
        assert losses.l1(0.0).value == 0
        out = losses.l1(-3.0)
        assert out.value == 3
        assert float(out.grad) == -1


class TestBalancedL1:
    """Test balanced_l1 function."""

    def test_zero(self):
        assert losses.balanced_l1(0.0).value == 0

    def test_branches_agree_at_one(self):
        b = np.e**3 - 1
        inner = 0.5 / b * (b + 1) * np.log(b + 1) - 0.5
        outer = 1.5 + 1.5 / b - 0.5
        assert inner == pytest.approx(outer)
        assert losses.balanced_l1(1.0).value == pytest.approx(1.0786, abs=1e-4)
        assert losses.balanced_l1(1 - 1e-12).value == pytest.approx(losses.balanced_l1(1.0).value, abs=1e-9)

    def test_linear_slope(self):
        assert float(losses.balanced_l1(10.0).grad) == pytest.approx(1.5)
        assert float(losses.balanced_l1(-10.0).grad) == pytest.approx(-1.5)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="alpha and gamma"):
            losses.balanced_l1(1.0, alpha=0)


class TestIouLoss:
    """Test iou_loss function."""

    @pytest.mark.parametrize("mode", ["log", "linear"])
    def test_identity(self, mode):
        assert losses.iou_loss(np.array(common.unit_box), np.array(common.unit_box), mode).value == pytest.approx(0)

    def test_log_mode(self):
        pred, target = np.array(common.shifted_box), np.array(common.unit_box)
        assert losses.iou_loss(pred, target, "log").value == pytest.approx(np.log(7))

    def test_linear_mode(self):
        pred, target = np.array(common.shifted_box), np.array(common.unit_box)
        assert losses.iou_loss(pred, target, "linear").value == pytest.approx(6 / 7)

    def test_disjoint_is_floored_and_flagged(self):
        out = losses.iou_loss(np.array([20.0, 20, 30, 30]), np.array(common.unit_box))
        assert out.flagged
        assert out.value == pytest.approx(-np.log(losses.EPS))
        np.testing.assert_array_equal(out.grad, np.zeros(4))

    def test_target_without_area(self):
        with pytest.raises(ValueError):
            losses.iou_loss(np.array(common.unit_box), np.array([3.0, 3, 3, 9]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="log or linear"):
            losses.iou_loss(np.array(common.unit_box), np.array(common.unit_box), "square")


class TestGiouLoss:
    """Test giou_loss function."""

    @pytest.mark.parametrize(
        ["pred", "target", "expected"],
        [
            pytest.param(common.unit_box, common.unit_box, 0.0, id="Identity"),
            pytest.param([2.0, 0, 3, 1], [0.0, 0, 1, 1], 4 / 3, id="Disjoint on a line"),
            pytest.param(common.shifted_box, common.unit_box, 1 - 25 / 175 + 50 / 225, id="Quarter overlap"),
        ],
    )
    def test_values(self, pred, target, expected):
        assert losses.giou_loss(np.array(pred), np.array(target)).value == pytest.approx(expected)


class TestBoundedIouLoss:
    """Test bounded_iou_loss function."""

    def test_identity(self):
        assert losses.bounded_iou_loss(np.array(common.unit_box), np.array(common.unit_box)).value == 0

    def test_double_width(self):
        """Width ratio 2 with the same center: only the width term, 0.5 - beta / 2"""
        out = losses.bounded_iou_loss(np.array([-5.0, 0, 15, 10]), np.array(common.unit_box), beta=0.2)
        assert out.value == pytest.approx(0.4)

    def test_half_width_center_offset(self):
        """Center offset of half the target width: the bound is 0, term 1 - beta / 2"""
        out = losses.bounded_iou_loss(np.array([5.0, 0, 15, 10]), np.array(common.unit_box), beta=0.2)
        assert out.value == pytest.approx(0.9)

    def test_degenerate_prediction_is_flagged(self):
        out = losses.bounded_iou_loss(np.array([5.0, 0, 5, 10]), np.array(common.unit_box))
        assert out.flagged
        assert np.all(np.isfinite(out.grad))


class TestTranslationTowardTarget:
    """Box losses strictly decrease as the prediction slides toward the target."""

    @pytest.mark.parametrize(
        "loss",
        [
            pytest.param(lambda pred, target: losses.iou_loss(pred, target, "log"), id="iou log"),
            pytest.param(lambda pred, target: losses.iou_loss(pred, target, "linear"), id="iou linear"),
            pytest.param(losses.giou_loss, id="giou"),
            pytest.param(losses.bounded_iou_loss, id="bounded_iou"),
        ],
    )
    @pytest.mark.parametrize(
        "direction",
        [
            pytest.param([1.0, 0.0], id="From the right"),
            pytest.param([-1.0, 0.0], id="From the left"),
            pytest.param([0.0, 1.0], id="From below"),
            pytest.param([0.0, -1.0], id="From above"),
        ],
    )
    def test_strictly_decreasing(self, loss, direction):
        target = np.array([10.0, 10.0, 30.0, 30.0])
        # offsets below half the target size keep every loss out of its flat region
        values = [
            float(loss(target + np.tile(direction, 2) * offset, target).value) for offset in np.arange(9.5, -0.5, -0.5)
        ]
        assert all(later < earlier for earlier, later in zip(values, values[1:]))
        assert values[-1] == pytest.approx(0.0)


class TestGradients:
    """Central finite-difference checks of the six losses."""

    @pytest.fixture()
    def box_pairs(self, rng):
        corners = rng.uniform(0, 50, size=(50, 2))
        sizes = rng.uniform(5, 30, size=(50, 2))
        targets = np.hstack([corners, corners + sizes])
        preds = targets + rng.uniform(-0.3, 0.3, size=(50, 4)) * np.hstack([sizes, sizes])
        return preds, targets

    @pytest.mark.parametrize(
        "loss",
        [
            pytest.param(losses.smooth_l1, id="smooth_l1"),
            pytest.param(losses.l1, id="l1"),
            pytest.param(losses.balanced_l1, id="balanced_l1"),
        ],
    )
    def test_residual_losses(self, rng, loss):
        points = rng.uniform(0.05, 3, size=200) * rng.choice([-1, 1], size=200)
        points = points[np.abs(np.abs(points) - 1) > 1e-3]
        analytic = loss(points).grad
        numeric = numeric_grad(lambda x: loss(x).value, points)
        assert relative_error(analytic, numeric) < 1e-4

    @pytest.mark.parametrize(
        "loss",
        [
            pytest.param(losses.iou_loss, id="iou"),
            pytest.param(lambda pred, target: losses.iou_loss(pred, target, "linear"), id="iou linear"),
            pytest.param(losses.giou_loss, id="giou"),
            pytest.param(losses.bounded_iou_loss, id="bounded_iou"),
        ],
    )
    def test_box_losses(self, box_pairs, loss):
        preds, targets = box_pairs
        analytic = loss(preds, targets).grad
        numeric = numeric_grad(lambda point: loss(point, targets).value, preds)
        assert relative_error(analytic, numeric) < 1e-4

    def test_disjoint_giou(self):
        pred, target = np.array([12.0, 3, 20, 9]), np.array(common.unit_box)
        analytic = losses.giou_loss(pred, target).grad
        numeric = numeric_grad(lambda point: losses.giou_loss(point, target).value, pred)
        assert relative_error(analytic, numeric) < 1e-4


class TestWeighted:
    """Test weighted function and loss plugins."""

    def test_identity(self):
        out = losses.smooth_l1(2.0)
        assert losses.weighted(out, 1).value == out.value

    def test_scaling(self):
        out = losses.weighted(losses.smooth_l1(2.0), 2)
        assert out.value == pytest.approx(3.0)
        assert float(out.grad) == pytest.approx(2.0)

    def test_scaled_gradient_matches_finite_differences(self, rng):
        points = rng.uniform(0.05, 3, size=50)
        analytic = losses.weighted(losses.balanced_l1(points), 5).grad
        numeric = numeric_grad(lambda x: 5 * losses.balanced_l1(x).value, points)
        assert relative_error(analytic, numeric) < 1e-4

    def test_invalid_weight(self):
        with pytest.raises(ValueError, match="loss_weight"):
            losses.weighted(losses.l1(1.0), 0)

    @pytest.mark.parametrize(
        ["spec", "expected"],
        [
            pytest.param({"type": "smooth_l1"}, {"type": "smooth_l1", "loss_weight": 1.0, "beta": 1.0}, id="smooth_l1"),
            pytest.param({"type": "l1", "loss_weight": 2}, {"type": "l1", "loss_weight": 2}, id="l1"),
            pytest.param(
                {"type": "balanced_l1"},
                {"type": "balanced_l1", "loss_weight": 1.0, "alpha": 0.5, "gamma": 1.5},
                id="balanced_l1",
            ),
            pytest.param({"type": "iou"}, {"type": "iou", "loss_weight": 1.0, "mode": "log"}, id="iou"),
            pytest.param({"type": "giou"}, {"type": "giou", "loss_weight": 1.0}, id="giou"),
            pytest.param(
                {"type": "bounded_iou"}, {"type": "bounded_iou", "loss_weight": 1.0, "beta": 0.2}, id="bounded_iou"
            ),
        ],
    )
    def test_build_loss_defaults(self, spec, expected):
        assert losses.build_loss(spec).cfg == expected

    def test_plugin_applies_weight(self):
        loss = losses.build_loss({"type": "smooth_l1", "loss_weight": 2})
        assert loss(np.array([2.0]), np.array([0.0])).value == pytest.approx(3.0)

    def test_box_losses_flag(self):
        assert losses.build_loss({"type": "giou"}).on_boxes
        assert not losses.build_loss({"type": "l1"}).on_boxes

    def test_unknown_loss(self):
        with pytest.raises(KeyError):
            losses.build_loss({"type": "focal"})

    def test_invalid_parameter(self):
        with pytest.raises(DictCheckerError):
            losses.build_loss({"type": "smooth_l1", "beta": -1})
