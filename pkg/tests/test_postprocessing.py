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
Test postprocessing module
"""

import math

import numpy as np
import pytest

from detcore.oracle import brute_force_nms, random_detections
from detcore.postprocessing import Detections, nms, score_order, soft_nms, topk_filter


@pytest.fixture()
def overlapping_dets():
    """A (score .9), B (IoU with A of 0.8, score .8) and C (disjoint, score .7)"""
    return Detections(
        np.array([[0.0, 0, 10, 10], [0.0, 0, 10, 8], [50.0, 50, 60, 60]]),
        np.array([0.9, 0.8, 0.7]),
        np.zeros(3, dtype=int),
    )


class TestDetections:
    """Test Detections container."""

    @pytest.mark.parametrize(
        ["scores", "class_ids", "message"],
        [
            pytest.param([1.5], [0], "scores", id="Score above one"),
            pytest.param([np.nan], [0], "scores", id="NaN score"),
            pytest.param([0.5], [-1], "class ids", id="Negative class"),
            pytest.param([0.5, 0.2], [0], "same length", id="Length mismatch"),
        ],
    )
    def test_invalid(self, scores, class_ids, message):
        with pytest.raises(ValueError, match=message):
            Detections(np.array([[0.0, 0, 1, 1]]), np.array(scores), np.array(class_ids))

    def test_select_keeps_order(self, overlapping_dets):
        selected = overlapping_dets.select([2, 0])
        np.testing.assert_array_equal(selected.scores, [0.7, 0.9])

    def test_records(self, overlapping_dets):
        records = overlapping_dets.to_records(4)
        assert records[1] == {"image_id": 4, "bbox": [0.0, 0.0, 10.0, 8.0], "score": 0.8, "category_id": 0}
        grouped = Detections.from_records(records)
        np.testing.assert_array_equal(grouped[4].boxes, overlapping_dets.boxes)

    def test_empty(self):
        assert len(Detections.empty()) == 0


class TestNms:
    """Test nms function."""

    def test_single(self):
        dets = Detections(np.array([[0.0, 0, 4, 4]]), np.array([0.3]), np.array([1]))
        np.testing.assert_array_equal(nms(dets), [0])

    def test_suppression(self, overlapping_dets):
        np.testing.assert_array_equal(nms(overlapping_dets, 0.5), [0, 2])

    def test_class_wise(self):
        dets = Detections(np.array([[0.0, 0, 4, 4], [0.0, 0, 4, 4]]), np.array([0.3, 0.6]), np.array([0, 1]))
        np.testing.assert_array_equal(nms(dets), [1, 0])
        np.testing.assert_array_equal(nms(dets, class_agnostic=True), [1])

    def test_ties_by_lower_index(self):
        dets = Detections(np.array([[0.0, 0, 4, 4], [20.0, 0, 24, 4]]), np.array([0.5, 0.5]), np.array([0, 0]))
        np.testing.assert_array_equal(nms(dets), [0, 1])

    def test_empty(self):
        assert len(nms(Detections.empty())) == 0

    @pytest.mark.parametrize("iou_thr", [0.0, 1.0])
    def test_invalid_threshold(self, overlapping_dets, iou_thr):
        with pytest.raises(ValueError, match="iou_thr"):
            nms(overlapping_dets, iou_thr)

    @pytest.mark.parametrize("iou_thr", [0.3, 0.5, 0.7])
    def test_brute_force_equivalence(self, rng, iou_thr):
        for _ in range(50):
            dets = random_detections(rng)
            kept = nms(dets, iou_thr)
            assert kept.tolist() == brute_force_nms(dets, iou_thr)
            assert nms(dets.select(kept), iou_thr).tolist() == list(range(len(kept)))


class TestSoftNms:
    """Test soft_nms function."""

    def test_disjoint_unchanged(self):
        boxes = np.array([[0.0, 0, 4, 4], [10.0, 0, 14, 4], [20.0, 0, 24, 4]])
        dets = Detections(boxes, np.array([0.2, 0.9, 0.5]), np.zeros(3))
        kept, scores = soft_nms(dets)
        np.testing.assert_array_equal(kept, [1, 2, 0])
        np.testing.assert_array_equal(scores, [0.9, 0.5, 0.2])

    @pytest.mark.parametrize(
        ["method", "expected"],
        [
            pytest.param("linear", 0.8 * 0.2, id="Linear"),
            pytest.param("gaussian", 0.8 * math.exp(-1.28), id="Gaussian"),
        ],
    )
    def test_decay(self, overlapping_dets, method, expected):
        kept, scores = soft_nms(overlapping_dets.select([0, 1]), method, iou_thr=0.5, sigma=0.5)
        np.testing.assert_array_equal(kept, [0, 1])
        assert scores[1] == pytest.approx(expected)

    def test_decay_examples(self, overlapping_dets):
        _, linear = soft_nms(overlapping_dets.select([0, 1]), "linear")
        _, gaussian = soft_nms(overlapping_dets.select([0, 1]), "gaussian")
        assert linear[1] == pytest.approx(0.16)
        assert gaussian[1] == pytest.approx(0.2224, abs=1e-4)

    def test_linear_threshold_one_is_identity(self, rng):
        dets = random_detections(rng)
        kept, scores = soft_nms(dets, "linear", iou_thr=1.0, score_thr=0.0)
        np.testing.assert_array_equal(kept, score_order(dets.scores))
        np.testing.assert_array_equal(scores, dets.scores[kept])

    def test_never_increases(self, rng):
        for _ in range(20):
            dets = random_detections(rng)
            kept, scores = soft_nms(dets, "gaussian")
            assert np.all(scores <= dets.scores[kept])
            assert np.all(np.diff(scores) <= 0)

    def test_below_score_thr_dropped(self, overlapping_dets):
        kept, _ = soft_nms(overlapping_dets.select([0, 1]), "linear", score_thr=0.2)
        np.testing.assert_array_equal(kept, [0])

    def test_other_class_untouched(self):
        dets = Detections(np.array([[0.0, 0, 10, 10], [0.0, 0, 10, 8]]), np.array([0.9, 0.8]), np.array([0, 1]))
        _, scores = soft_nms(dets)
        np.testing.assert_array_equal(scores, [0.9, 0.8])

    @pytest.mark.parametrize(
        ["kwargs", "message"],
        [
            pytest.param({"method": "cubic"}, "method", id="Unknown method"),
            pytest.param({"sigma": 0}, "sigma", id="Zero sigma"),
        ],
    )
    def test_invalid(self, overlapping_dets, kwargs, message):
        with pytest.raises(ValueError, match=message):
            soft_nms(overlapping_dets, **kwargs)


class TestTopkFilter:
    """Test topk_filter function."""

    @pytest.fixture()
    def dets(self):
        return Detections(np.tile([0.0, 0, 1, 1], (3, 1)), np.array([0.9, 0.5, 0.1]), np.zeros(3))

    @pytest.mark.parametrize(
        ["score_thr", "k", "expected"],
        [
            pytest.param(0.2, 0, [], id="k of zero"),
            pytest.param(0.2, 5, [0, 1], id="Filter then truncate"),
            pytest.param(0.0, 2, [0, 1], id="Exactly k"),
        ],
    )
    def test_topk(self, dets, score_thr, k, expected):
        assert topk_filter(dets, score_thr, k).tolist() == expected

    def test_negative_k(self, dets):
        with pytest.raises(ValueError, match="non-negative"):
            topk_filter(dets, 0.0, -1)
