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
This module contains functions associated to anchor generation and anchor validity.
"""

import math
from typing import NamedTuple, Sequence

import numpy as np

from ..geometry import as_boxes

# Bound meaning "no limit" for allowed_border and neg_pos_ub.
UNBOUNDED = math.inf


class AnchorGenSpec(NamedTuple):
    """
    Anchor generator parameters

    ratio is height / width.
    """

    base_size: float
    scales: Sequence[float]
    ratios: Sequence[float]
    stride: int

    @property
    def num_base_anchors(self) -> int:
        return len(self.scales) * len(self.ratios)


def check_spec(spec: AnchorGenSpec) -> None:
    """
    Check that every anchor generator parameter is strictly positive

    :param spec: anchor generator parameters
    :type spec: AnchorGenSpec
    :raises ValueError: on an empty or non-positive parameter
    """
    if spec.base_size <= 0 or spec.stride <= 0:
        raise ValueError(f"base_size and stride must be strictly positive, got {spec.base_size} and {spec.stride}")
    if not spec.scales or not spec.ratios:
        raise ValueError("scales and ratios must not be empty")
    if any(scale <= 0 for scale in spec.scales) or any(ratio <= 0 for ratio in spec.ratios):
        raise ValueError("scales and ratios must be strictly positive")


def base_anchors(spec: AnchorGenSpec) -> np.ndarray:
    """
    Anchors of a single feature cell, centered at (base_size / 2, base_size / 2)

    For each (ratio, scale): w = base_size * scale / sqrt(ratio) and
    h = base_size * scale * sqrt(ratio). Ratios vary slowest.

    :param spec: anchor generator parameters
    :type spec: AnchorGenSpec
    :return: base anchors (len(ratios) * len(scales), 4)
    :rtype: np.ndarray
    """
    check_spec(spec)
    center = spec.base_size / 2
    ratios = np.sqrt(np.asarray(spec.ratios, dtype=np.float64))
    scales = np.asarray(spec.scales, dtype=np.float64)
    widths = (spec.base_size * scales[None, :] / ratios[:, None]).ravel()
    heights = (spec.base_size * scales[None, :] * ratios[:, None]).ravel()
    return np.stack(
        [center - 0.5 * widths, center - 0.5 * heights, center + 0.5 * widths, center + 0.5 * heights], axis=-1
    )


def grid_anchors(base: np.ndarray, feat_w: int, feat_h: int, stride: float) -> np.ndarray:
    """
    Tile base anchors over a feature grid

    Anchor of cell (i, j) (column i, row j) and base anchor a sits at
    index (j * feat_w + i) * len(base) + a.

    :param base: base anchors (A, 4)
    :type base: np.ndarray
    :param feat_w: number of feature columns
    :type feat_w: int
    :param feat_h: number of feature rows
    :type feat_h: int
    :param stride: pixels per feature cell
    :type stride: float
    :return: anchors (feat_h * feat_w * A, 4)
    :rtype: np.ndarray
    """
    if feat_w < 1 or feat_h < 1:
        raise ValueError(f"feature grid must be at least 1x1, got {feat_w}x{feat_h}")
    base = as_boxes(base)
    shift_x, shift_y = np.meshgrid(np.arange(feat_w) * stride, np.arange(feat_h) * stride)
    shifts = np.stack([shift_x.ravel(), shift_y.ravel(), shift_x.ravel(), shift_y.ravel()], axis=-1)
    return (shifts[:, None, :] + base[None, :, :]).reshape(-1, 4)


def valid_flags(anchors: np.ndarray, img_w: float, img_h: float, allowed_border: float = 0) -> np.ndarray:
    """
    Flag anchors lying inside the image enlarged by allowed_border on every side

    :param anchors: anchors (N, 4)
    :type anchors: np.ndarray
    :param img_w: image width
    :type img_w: float
    :param img_h: image height
    :type img_h: float
    :param allowed_border: non-negative slack in pixels, or UNBOUNDED
    :type allowed_border: float
    :return: boolean flags (N,)
    :rtype: np.ndarray
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image size must be positive, got {img_w}x{img_h}")
    if allowed_border < 0:
        raise ValueError(f"allowed_border must be non-negative, got {allowed_border}")
    anchors = as_boxes(anchors)
    if math.isinf(allowed_border):
        return np.ones(len(anchors), dtype=bool)
    return (
        (anchors[:, 0] >= -allowed_border)
        & (anchors[:, 1] >= -allowed_border)
        & (anchors[:, 2] <= img_w + allowed_border)
        & (anchors[:, 3] <= img_h + allowed_border)
    )
