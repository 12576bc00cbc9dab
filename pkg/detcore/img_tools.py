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
This module contains functions associated to image samples: creation, scale policies and rescaling.

A sample is a xarray.Dataset with the variables:

    - im : 2D (row, col) grayscale intensities in [0, 1]
    - boxes : 2D (object, coord) boxes as [x1, y1, x2, y2]
    - labels : 1D (object) class ids
"""

from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
import xarray as xr
from scipy.ndimage import zoom

from .geometry import as_boxes, clip

COORDS = ["x1", "y1", "x2", "y2"]


class ScalePolicy(NamedTuple):
    """
    Multi-scale training policy

    value mode picks the short edge from the list short_edges, range mode
    picks an integer in [short_edges[0], short_edges[1]].
    """

    mode: str
    long_edge: int
    short_edges: Sequence[int]


def check_scale_policy(policy: ScalePolicy) -> None:
    """
    Check a scale policy

    :param policy: scale policy
    :type policy: ScalePolicy
    :raises ValueError: on an invalid policy
    """
    if policy.long_edge <= 0:
        raise ValueError(f"long_edge must be strictly positive, got {policy.long_edge}")
    if policy.mode == "value":
        if not policy.short_edges:
            raise ValueError("value mode needs a non-empty list of short edges")
    elif policy.mode == "range":
        if len(policy.short_edges) != 2 or policy.short_edges[0] > policy.short_edges[1]:
            raise ValueError(f"range mode needs [min, max] with min <= max, got {list(policy.short_edges)}")
    else:
        raise ValueError(f"scale policy mode must be value or range, got {policy.mode}")
    if any(edge <= 0 for edge in policy.short_edges):
        raise ValueError("short edges must be strictly positive")


def sample_scale(policy: ScalePolicy, rng: np.random.Generator) -> Tuple[int, int]:
    """
    Draw a (long, short) target scale

    :param policy: scale policy
    :type policy: ScalePolicy
    :param rng: random generator
    :type rng: np.random.Generator
    :return: long edge cap and short edge target
    :rtype: Tuple[int, int]
    """
    check_scale_policy(policy)
    if policy.mode == "value":
        short = int(policy.short_edges[rng.integers(len(policy.short_edges))])
    else:
        short = int(rng.integers(policy.short_edges[0], policy.short_edges[1] + 1))
    return int(policy.long_edge), short


def resize_factor(img_w: float, img_h: float, long_cap: float, short_target: float) -> float:
    """
    Aspect-preserving scale factor fitting the image in long_cap x short_target

    :param img_w: image width
    :type img_w: float
    :param img_h: image height
    :type img_h: float
    :param long_cap: maximum long edge
    :type long_cap: float
    :param short_target: maximum short edge
    :type short_target: float
    :return: min(long_cap / long side, short_target / short side)
    :rtype: float
    """
    if min(img_w, img_h, long_cap, short_target) <= 0:
        raise ValueError("image size and target scale must be strictly positive")
    return min(long_cap / max(img_w, img_h), short_target / min(img_w, img_h))


def round_half_up(value: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """Round to the nearest integer, halves up"""
    rounded = np.floor(np.asarray(value, dtype=np.float64) + 0.5).astype(np.int64)
    return int(rounded) if rounded.ndim == 0 else rounded


def resized_shape(img_w: int, img_h: int, factor: float) -> Tuple[int, int]:
    """Width and height after resizing by factor, at least one pixel each"""
    return max(1, round_half_up(img_w * factor)), max(1, round_half_up(img_h * factor))  # type: ignore[type-var]


def create_sample(pixels: np.ndarray, boxes: np.ndarray, labels: Sequence[int], image_id: int = 0) -> xr.Dataset:
    """
    Build a sample dataset

    :param pixels: grayscale image (row, col)
    :type pixels: np.ndarray
    :param boxes: boxes (object, 4) lying inside the image
    :type boxes: np.ndarray
    :param labels: class id of each box
    :type labels: Sequence[int]
    :param image_id: image identifier
    :type image_id: int
    :return: sample dataset
    :rtype: xr.Dataset
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    boxes = as_boxes(boxes)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(boxes) != len(labels):
        raise ValueError(f"{len(boxes)} boxes but {len(labels)} labels")
    height, width = pixels.shape
    if np.any(boxes[:, :2] < 0) or np.any(boxes[:, 2] > width) or np.any(boxes[:, 3] > height):
        raise ValueError("every box must lie inside the image")
    return xr.Dataset(
        {"im": (["row", "col"], pixels), "boxes": (["object", "coord"], boxes), "labels": (["object"], labels)},
        coords={"row": np.arange(height), "col": np.arange(width), "coord": COORDS, "object": np.arange(len(boxes))},
        attrs={"image_id": int(image_id)},
    )


def sample_size(sample: xr.Dataset) -> Tuple[int, int]:
    """Width and height of a sample"""
    return sample.sizes["col"], sample.sizes["row"]


def rescale_sample(sample: xr.Dataset, factor: float, stride: int = 1) -> xr.Dataset:
    """
    Resize a sample by factor (bilinear), then zero-pad right and bottom to a multiple of stride

    Sizes are rounded half up, boxes are scaled by the effective per-axis factor.

    :param sample: sample dataset
    :type sample: xr.Dataset
    :param factor: scale factor
    :type factor: float
    :param stride: output sizes are multiples of stride
    :type stride: int
    :return: rescaled sample
    :rtype: xr.Dataset
    """
    if factor <= 0 or stride < 1:
        raise ValueError(f"factor must be strictly positive and stride at least 1, got {factor} and {stride}")
    width, height = sample_size(sample)
    new_w, new_h = resized_shape(width, height, factor)
    pixels = sample["im"].data
    if (new_w, new_h) != (width, height):
        pixels = zoom(pixels, (new_h / height, new_w / width), order=1, grid_mode=True, mode="nearest")
        pixels = np.clip(pixels[:new_h, :new_w], 0.0, 1.0)

    pad_w = -new_w % stride
    pad_h = -new_h % stride
    pixels = np.pad(pixels, ((0, pad_h), (0, pad_w)))

    boxes = sample["boxes"].data * np.array([new_w / width, new_h / height] * 2)
    if len(boxes):
        boxes = clip(boxes, new_w, new_h)
    return create_sample(pixels, boxes, sample["labels"].data, sample.attrs.get("image_id", 0))


def pad_to_stride(sample: xr.Dataset, stride: int) -> xr.Dataset:
    """Zero-pad a sample to a multiple of stride without resizing"""
    return rescale_sample(sample, 1.0, stride)
