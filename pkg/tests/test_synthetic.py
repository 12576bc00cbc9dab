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
Test synthetic dataset module
"""

import numpy as np
import pytest

from detcore.refdet import SQUARE, WIDE, gen_dataset, gen_image, label_from_box, load_dataset, save_dataset


class TestLabelFromBox:
    """Test label_from_box function."""

    @pytest.mark.parametrize(
        ["box", "expected"],
        [
            pytest.param([0, 0, 10, 10], SQUARE, id="Square"),
            pytest.param([0, 0, 11, 10], SQUARE, id="Almost square"),
            pytest.param([0, 0, 13, 10], WIDE, id="Ratio 1.3"),
            pytest.param([0, 0, 20, 10], WIDE, id="Wide"),
        ],
    )
    def test_label(self, box, expected):
        assert label_from_box(np.array(box, dtype=float)) == expected


class TestGenDataset:
    """Test gen_dataset function."""

    def test_deterministic(self):
        first = gen_dataset(5, 32, 3, np.random.default_rng(11))
        second = gen_dataset(5, 32, 3, np.random.default_rng(11))
        for left, right in zip(first, second):
            assert left.identical(right)

    def test_image_ids(self, rng):
        assert [sample.attrs["image_id"] for sample in gen_dataset(4, 32, 2, rng)] == [0, 1, 2, 3]

    @pytest.mark.parametrize("img_size", [16, 32, 64])
    def test_annotations(self, rng, img_size):
        for sample in gen_dataset(20, img_size, 3, rng):
            boxes = sample["boxes"].data
            assert 1 <= len(boxes) <= 3
            assert np.all(boxes[:, :2] >= 0)
            assert np.all(boxes[:, 2:] <= img_size)
            assert np.all(boxes[:, 2:] > boxes[:, :2])
            assert [label_from_box(box) for box in boxes] == sample["labels"].data.tolist()

    def test_intensities(self, rng):
        pixels = gen_image(rng, 32, 2)["im"].data
        assert pixels.shape == (32, 32)
        assert pixels.min() >= 0 and pixels.max() <= 1

    def test_objects_brighter_than_background(self, rng):
        sample = gen_image(rng, 64, 1)
        x1, y1, x2, y2 = sample["boxes"].data[0].astype(int)
        background = np.ones(sample["im"].shape, dtype=bool)
        background[y1:y2, x1:x2] = False
        assert sample["im"].data[y1:y2, x1:x2].mean() > 0.5
        assert sample["im"].data[background].mean() < 0.3

    @pytest.mark.parametrize(
        ["n_images", "img_size", "max_objects"],
        [
            pytest.param(0, 32, 2, id="No image"),
            pytest.param(4, 8, 2, id="Image too small"),
            pytest.param(4, 32, 0, id="No object"),
        ],
    )
    def test_invalid(self, rng, n_images, img_size, max_objects):
        with pytest.raises(ValueError, match="invalid dataset parameters"):
            gen_dataset(n_images, img_size, max_objects, rng)


class TestSaveLoad:
    """Test save_dataset and load_dataset functions."""

    def test_files(self, tmp_path, small_samples):
        save_dataset(small_samples, str(tmp_path))
        assert (tmp_path / "annotations.json").exists()
        assert sorted(path.name for path in tmp_path.glob("*.pgm")) == [f"{i:05d}.pgm" for i in range(4)]

    def test_reload(self, tmp_path, small_samples):
        save_dataset(small_samples, str(tmp_path))
        loaded = load_dataset(str(tmp_path))
        for original, reloaded in zip(small_samples, loaded):
            assert reloaded.attrs["image_id"] == original.attrs["image_id"]
            np.testing.assert_array_equal(reloaded["boxes"].data, original["boxes"].data)
            np.testing.assert_array_equal(reloaded["labels"].data, original["labels"].data)
            np.testing.assert_allclose(reloaded["im"].data, original["im"].data, atol=0.5 / 255 + 1e-12)
