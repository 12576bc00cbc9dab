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
Test anchor module
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detcore import anchor
from detcore.anchor import IGNORE, NEGATIVE, UNBOUNDED
from detcore.geometry import iou_matrix


@st.composite
def float_boxes(draw, max_boxes=12, extent=32.0):
    """Between one and max_boxes boxes with positive area and corners in [0, extent]"""
    num = draw(st.integers(1, max_boxes))
    coords = st.floats(0.0, extent, allow_nan=False, allow_infinity=False)
    sizes = st.floats(1.0, extent, allow_nan=False, allow_infinity=False)
    boxes = []
    for _ in range(num):
        x1, y1, width, height = draw(coords), draw(coords), draw(sizes), draw(sizes)
        boxes.append([x1, y1, x1 + width, y1 + height])
    return np.array(boxes)


class TestBaseAnchors:
    """Test base_anchors function."""

    def test_single(self):
        base = anchor.base_anchors(anchor.AnchorGenSpec(8, [8], [1], 16))
        np.testing.assert_array_equal(base, [[-28, -28, 36, 36]])

    def test_duplicate_ratios(self):
        assert len(anchor.base_anchors(anchor.AnchorGenSpec(8, [8], [1, 1], 16))) == 2

    def test_ratio_is_height_over_width(self):
        box = anchor.base_anchors(anchor.AnchorGenSpec(8, [8], [4], 16))[0]
        assert (box[2] - box[0], box[3] - box[1]) == (32, 128)

    def test_ratios_vary_slowest(self):
        base = anchor.base_anchors(anchor.AnchorGenSpec(16, [1, 2], [0.25, 1], 16))
        widths = base[:, 2] - base[:, 0]
        np.testing.assert_allclose(widths, [32, 64, 16, 32])

    @pytest.mark.parametrize(
        "spec",
        [
            pytest.param(anchor.AnchorGenSpec(0, [1], [1], 8), id="Zero base"),
            pytest.param(anchor.AnchorGenSpec(8, [], [1], 8), id="No scale"),
            pytest.param(anchor.AnchorGenSpec(8, [1], [-1], 8), id="Negative ratio"),
        ],
    )
    def test_invalid(self, spec):
        with pytest.raises(ValueError):
            anchor.base_anchors(spec)


class TestGridAnchors:
    """Test grid_anchors function."""

    @pytest.fixture()
    def base(self):
        return anchor.base_anchors(anchor.AnchorGenSpec(16, [1, 2], [0.5, 1, 2], 16))[:3]

    def test_one_cell(self, base):
        np.testing.assert_array_equal(anchor.grid_anchors(base, 1, 1, 16), base)

    def test_translation(self, base):
        anchors = anchor.grid_anchors(base, 2, 1, 16)
        np.testing.assert_array_equal(anchors[3:], base + [16, 0, 16, 0])

    def test_row_major_order(self, base):
        anchors = anchor.grid_anchors(base, 2, 2, 16)
        # cell (column 0, row 1)
        np.testing.assert_array_equal(anchors[6:9], base + [0, 16, 0, 16])

    def test_cardinality(self, base):
        assert anchor.grid_anchors(base, 16, 16, 8).shape == (768, 4)

    def test_invalid_grid(self, base):
        with pytest.raises(ValueError, match="at least 1x1"):
            anchor.grid_anchors(base, 0, 3, 8)


class TestValidFlags:
    """Test valid_flags function."""

    @pytest.mark.parametrize(
        ["allowed_border", "expected"],
        [
            pytest.param(0, False, id="No border"),
            pytest.param(5, True, id="Border of 5"),
            pytest.param(UNBOUNDED, True, id="Unbounded"),
        ],
    )
    def test_boundary(self, allowed_border, expected):
        assert anchor.valid_flags(np.array([[-5, -5, 10, 10]]), 100, 100, allowed_border)[0] == expected

    def test_unbounded_all_valid(self, rng):
        base = anchor.base_anchors(anchor.AnchorGenSpec(32, [1, 4], [0.5, 1, 2], 8))
        anchors = anchor.grid_anchors(base, 8, 6, 8)
        assert np.all(anchor.valid_flags(anchors, 64, 48, UNBOUNDED))

    def test_monotone_in_border(self):
        base = anchor.base_anchors(anchor.AnchorGenSpec(32, [1, 2], [0.5, 1, 2], 8))
        anchors = anchor.grid_anchors(base, 8, 8, 8)
        previous = np.zeros(len(anchors), dtype=bool)
        for border in [0, 1, 4, 16, 64, UNBOUNDED]:
            flags = anchor.valid_flags(anchors, 64, 64, border)
            assert np.all(flags[previous])
            previous = flags

    def test_negative_border(self):
        with pytest.raises(ValueError, match="non-negative"):
            anchor.valid_flags(np.array([[0, 0, 1, 1]]), 10, 10, -1)


class TestMaxIouAssign:
    """Test max_iou_assign function."""

    @pytest.fixture()
    def gts(self):
        return np.array([[0.0, 0, 10, 10], [50, 50, 60, 60]])

    def test_positive(self, gts):
        # IoU 0.8 with gt 0
        result = anchor.max_iou_assign(np.array([[0.0, 0, 10, 8]]), gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [1])
        np.testing.assert_array_equal(result.pos_gt_index, [0])

    def test_negative(self, gts):
        # IoU 0.2 with gt 0, no low-quality match below min_pos_iou
        result = anchor.max_iou_assign(np.array([[0.0, 0, 10, 2]]), gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [NEGATIVE])

    def test_ignored_between_thresholds(self, gts):
        anchors = np.array([[0.0, 0, 10, 5], [0.0, 0, 10, 9.5]])
        result = anchor.max_iou_assign(anchors, gts, 0.99, 0.3, 1.0)
        np.testing.assert_array_equal(result.gt_inds, [IGNORE, IGNORE])

    def test_low_quality_match(self, gts):
        # best anchor of gt 0 has IoU 0.4
        anchors = np.array([[0.0, 0, 10, 4], [0.0, 0, 10, 2], [100, 100, 110, 110]])
        result = anchor.max_iou_assign(anchors, gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [1, NEGATIVE, NEGATIVE])

    def test_low_quality_lowest_gt_wins(self):
        gts = np.array([[0.0, 0, 10, 4], [0.0, 6, 10, 10]])
        result = anchor.max_iou_assign(np.array([[0.0, 0, 10, 10]]), gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [1])

    def test_no_gt(self):
        anchors = np.array([[0.0, 0, 10, 10], [5, 5, 20, 20]])
        result = anchor.max_iou_assign(anchors, np.zeros((0, 4)), valid=np.array([True, False]))
        np.testing.assert_array_equal(result.gt_inds, [NEGATIVE, IGNORE])

    def test_invalid_anchor_ignored(self, gts):
        anchors = np.array([[0.0, 0, 10, 10], [0.0, 0, 10, 10]])
        result = anchor.max_iou_assign(anchors, gts, valid=np.array([False, True]))
        np.testing.assert_array_equal(result.gt_inds, [IGNORE, 1])

    def test_positive_references_existing_gt(self, rng, gts):
        corners = rng.uniform(0, 60, size=(200, 2))
        anchors = np.hstack([corners, corners + rng.uniform(2, 20, size=(200, 2))])
        result = anchor.max_iou_assign(anchors, gts, 0.5, 0.4, 0.3)
        assert np.all(result.gt_inds[result.pos_mask] <= len(gts))
        assert not np.any(result.pos_mask & result.neg_mask)

    def test_shared_best_anchor_falls_back(self):
        # both ground truths prefer anchor 0 (IoU 7/9), gt 1 also overlaps anchor 1 by 0.5
        gts = np.array([[0.0, 0, 10, 8], [0, 2, 10, 10]])
        anchors = np.array([[0.0, 1, 10, 9], [0, 5, 10, 12]])
        result = anchor.max_iou_assign(anchors, gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [1, 2])

    def test_fallback_below_min_pos_iou(self):
        # the only other anchor of gt 1 overlaps it by 1/7
        gts = np.array([[0.0, 0, 10, 8], [0, 2, 10, 10]])
        anchors = np.array([[0.0, 1, 10, 9], [0, 8, 10, 16]])
        result = anchor.max_iou_assign(anchors, gts, 0.7, 0.3, 0.3)
        np.testing.assert_array_equal(result.gt_inds, [1, NEGATIVE])

    @settings(max_examples=300, deadline=None)
    @given(
        float_boxes(),
        float_boxes(max_boxes=4),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
    )
    def test_assignment_invariants(self, anchors, gts, first_thr, second_thr, min_pos_iou):
        neg_thr, pos_thr = sorted([first_thr, second_thr])
        result = anchor.max_iou_assign(anchors, gts, pos_thr, neg_thr, min_pos_iou)

        # no positive below both the positive threshold and the low-quality bound
        assert np.all(result.max_overlaps[result.pos_mask] >= min(min_pos_iou, pos_thr))

        # a ground truth with a qualifying overlap has a positive, unless other ground truths hold all of them
        overlaps = iou_matrix(gts, anchors)
        for gt_index in range(len(gts)):
            qualifying = (overlaps[gt_index] > 0) & (overlaps[gt_index] >= min_pos_iou)
            if not qualifying.any() or np.any(result.gt_inds == gt_index + 1):
                continue
            assert np.all(result.pos_mask[qualifying])

    @settings(max_examples=200, deadline=None)
    @given(float_boxes(), float_boxes(max_boxes=1), st.floats(0.0, 1.0))
    def test_single_gt_always_matched(self, anchors, gts, min_pos_iou):
        result = anchor.max_iou_assign(anchors, gts, 0.7, 0.3, min_pos_iou)
        overlaps = iou_matrix(gts, anchors)[0]
        if np.any((overlaps > 0) & (overlaps >= min_pos_iou)):
            assert np.any(result.gt_inds == 1)

    def test_thresholds_order(self, gts):
        with pytest.raises(ValueError, match="pos_thr"):
            anchor.max_iou_assign(np.zeros((1, 4)), gts, 0.3, 0.7)


class TestRandomSample:
    """Test random_sample function."""

    @staticmethod
    def assignment(num_pos, num_neg, num_ignored=0):
        gt_inds = np.concatenate([np.ones(num_pos), np.zeros(num_neg), np.full(num_ignored, IGNORE)]).astype(int)
        return anchor.AssignResult(1, gt_inds, np.zeros(len(gt_inds)))

    def test_fill_to_num(self, rng):
        result = anchor.random_sample(self.assignment(10, 500), anchor.SamplerSpec(256, 0.5, UNBOUNDED), rng)
        assert (len(result.pos_indices), len(result.neg_indices)) == (10, 246)

    def test_negative_cap(self, rng):
        result = anchor.random_sample(self.assignment(10, 500), anchor.SamplerSpec(256, 0.5, 3), rng)
        assert (len(result.pos_indices), len(result.neg_indices)) == (10, 30)

    def test_no_positive_floor(self, rng):
        result = anchor.random_sample(self.assignment(0, 500), anchor.SamplerSpec(256, 0.5, 3), rng)
        assert len(result.pos_indices) == 0
        assert len(result.neg_indices) <= 3

    def test_positive_fraction(self, rng):
        result = anchor.random_sample(self.assignment(300, 500), anchor.SamplerSpec(256, 0.5), rng)
        assert (len(result.pos_indices), len(result.neg_indices)) == (128, 128)

    def test_indices_sorted_disjoint_and_labelled(self, rng):
        assign = self.assignment(40, 60, 20)
        result = anchor.random_sample(assign, anchor.SamplerSpec(64, 0.25), rng)
        assert np.all(np.diff(result.pos_indices) > 0)
        assert np.all(np.diff(result.neg_indices) > 0)
        assert np.all(assign.pos_mask[result.pos_indices])
        assert np.all(assign.neg_mask[result.neg_indices])

    def test_deterministic(self):
        assign = self.assignment(40, 60)
        first = anchor.random_sample(assign, anchor.SamplerSpec(32), np.random.default_rng(1))
        second = anchor.random_sample(assign, anchor.SamplerSpec(32), np.random.default_rng(1))
        np.testing.assert_array_equal(first.neg_indices, second.neg_indices)

    @pytest.mark.parametrize("neg_pos_ub", [3, 5])
    def test_bound_on_random_scenarios(self, neg_pos_ub):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            assign = self.assignment(int(rng.integers(0, 20)), int(rng.integers(0, 300)), int(rng.integers(0, 10)))
            spec = anchor.SamplerSpec(int(rng.integers(1, 256)), float(rng.uniform(0.1, 1)), neg_pos_ub)
            result = anchor.random_sample(assign, spec, rng)
            assert len(result.neg_indices) <= neg_pos_ub * max(1, len(result.pos_indices))

    @pytest.mark.parametrize(
        ["spec", "message"],
        [
            pytest.param(anchor.SamplerSpec(0), "num", id="Zero num"),
            pytest.param(anchor.SamplerSpec(8, 0.0), "pos_fraction", id="Zero fraction"),
            pytest.param(anchor.SamplerSpec(8, 0.5, 0), "neg_pos_ub", id="Zero bound"),
        ],
    )
    def test_invalid_spec(self, rng, spec, message):
        with pytest.raises(ValueError, match=message):
            anchor.random_sample(self.assignment(1, 1), spec, rng)
