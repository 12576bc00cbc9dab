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
Test model module
"""

import numpy as np
import pytest

from detcore.check_configuration import check_conf
from detcore.img_tools import create_sample
from detcore.metrics import IOU_THRESHOLDS, EvalResult
from detcore.postprocessing import Detections
from detcore.refdet import AR_TOP_K, DetectorModel, batches, ground_truth


@pytest.fixture()
def model(small_cfg):
    return DetectorModel(small_cfg)


@pytest.fixture()
def labelled_sample():
    return create_sample(np.zeros((32, 32)), np.array([[2.0, 2.0, 12.0, 20.0], [16.0, 4.0, 30.0, 10.0]]), [1, 0], 5)


class TestPrepare:
    """Test DetectorModel.prepare method."""

    def test_value_policy(self, model, labelled_sample):
        # 32 x 32 images to the short edge 64 of the default policy
        prepared = model.prepare(labelled_sample)
        assert (prepared.sizes["col"], prepared.sizes["row"]) == (64, 64)
        np.testing.assert_allclose(prepared["boxes"].data, labelled_sample["boxes"].data * 2)

    def test_range_policy_multiple_of_stride(self, small_user_cfg, labelled_sample):
        small_user_cfg["scale_policy"] = {"mode": "range", "long_edge": 64, "short_edges": [20, 50]}
        model = DetectorModel(check_conf(small_user_cfg))
        for _ in range(10):
            prepared = model.prepare(labelled_sample)
            assert prepared.sizes["col"] % 8 == 0
            assert prepared.sizes["col"] == prepared.sizes["row"]
            assert 24 <= prepared.sizes["col"] <= 56

    def test_labels_kept(self, model, labelled_sample):
        np.testing.assert_array_equal(model.prepare(labelled_sample)["labels"].data, [1, 0])


class TestSteps:
    """Test train_step and val_step methods."""

    def test_train_step(self, model, small_samples):
        loss = model.train_step(small_samples[:2], 0.01)
        assert np.isfinite(loss)
        assert loss > 0

    def test_val_step_deterministic(self, model, small_samples):
        assert model.val_step(small_samples) == model.val_step(small_samples)

    def test_val_step_leaves_weights(self, model, small_samples):
        before = {name: value.copy() for name, value in model.detector.parameters().items()}
        model.val_step(small_samples)
        for name, value in model.detector.parameters().items():
            np.testing.assert_array_equal(value, before[name])


class TestEvaluation:
    """Test detect and evaluate methods."""

    def test_detect_keys(self, model, small_samples):
        dets = model.detect(small_samples)
        assert sorted(dets) == [0, 1, 2, 3]
        assert all(isinstance(found, Detections) for found in dets.values())

    def test_evaluate_detection(self, model, small_samples):
        result = model.evaluate(small_samples)
        assert isinstance(result, EvalResult)
        assert 0.0 <= result.map <= 1.0
        assert list(result.ap_per_threshold) == [float(thr) for thr in IOU_THRESHOLDS]
        assert result.ar_at_k is None

    def test_evaluate_proposal(self, small_user_cfg, small_samples):
        small_user_cfg["model"]["task"] = "proposal"
        result = DetectorModel(check_conf(small_user_cfg)).evaluate(small_samples)
        assert result.k == AR_TOP_K
        assert 0.0 <= result.ar_at_k <= 1.0

    def test_perfect_detector(self, model, small_samples, mocker):
        def perfect(sample, max_per_img=None):
            truth = ground_truth(sample)
            return Detections(truth.boxes, np.ones(len(truth.boxes)), truth.class_ids)

        mocker.patch.object(model.detector, "infer", side_effect=perfect)
        result = model.evaluate(small_samples)
        assert result.map == pytest.approx(1.0)


class TestHelpers:
    """Test ground_truth and batches functions."""

    def test_ground_truth(self, labelled_sample):
        truth = ground_truth(labelled_sample)
        np.testing.assert_array_equal(truth.class_ids, [1, 0])
        np.testing.assert_array_equal(ground_truth(labelled_sample, "proposal").class_ids, [0, 0])

    @pytest.mark.parametrize(["num", "size", "expected"], [(4, 2, [2, 2]), (5, 2, [2, 2, 1]), (3, 8, [3])])
    def test_batches(self, num, size, expected):
        assert [len(batch) for batch in batches(list(range(num)), size)] == expected

    def test_batch_size(self):
        with pytest.raises(ValueError, match="at least 1"):
            batches([1], 0)
