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
This module contains functions associated to axis-aligned bounding boxes.

Boxes follow the continuous corner convention ``(x1, y1, x2, y2)``:
width is ``x2 - x1`` and height is ``y2 - y1``, without the legacy "+1".
Every function accepts a single box (shape ``(4,)``) or a stack of boxes
(shape ``(N, 4)``).
"""

from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

# Log-size deltas are clamped to this bound when decoding network outputs.
DEFAULT_MAX_RATIO = abs(np.log(16.0 / 1000.0))

BoxLike = Union["Box", Sequence[float], np.ndarray]


class Box(NamedTuple):
    """Axis-aligned rectangle in continuous image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1


def as_boxes(boxes: BoxLike) -> np.ndarray:
    """
    Convert boxes to a float64 array of shape (N, 4) and check validity

    :param boxes: one box or a stack of boxes
    :type boxes: Box, sequence or np.ndarray
    :return: boxes as a 2D array
    :rtype: np.ndarray
    :raises ValueError: if a coordinate is not finite or a box is inverted
    """
    array = np.asarray(boxes, dtype=np.float64)
    if array.size == 0:
        return array.reshape(0, 4)
    array = np.atleast_2d(array)
    if array.shape[-1] != 4:
        raise ValueError(f"boxes must have 4 coordinates, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("box coordinates must be finite")
    if np.any(array[:, 2] < array[:, 0]) or np.any(array[:, 3] < array[:, 1]):
        raise ValueError("boxes must satisfy x2 >= x1 and y2 >= y1")
    return array


def area(boxes: BoxLike) -> Union[float, np.ndarray]:
    """
    Area of one box or of each box of a stack

    :param boxes: one box (4,) or boxes (N, 4)
    :type boxes: Box, sequence or np.ndarray
    :return: area, scalar for a single box
    :rtype: float or np.ndarray
    """
    single = np.ndim(boxes) == 1
    array = as_boxes(boxes)
    areas = (array[:, 2] - array[:, 0]) * (array[:, 3] - array[:, 1])
    return float(areas[0]) if single else areas


def _pairwise_overlaps(boxes_a: np.ndarray, boxes_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Intersection and union areas for every pair of two box stacks

    :return: intersection and union, both of shape (N, M)
    :rtype: Tuple[np.ndarray, np.ndarray]
    """
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])

    lower = np.maximum(boxes_a[:, None, :2], boxes_b[None, :, :2])
    upper = np.minimum(boxes_a[:, None, 2:], boxes_b[None, :, 2:])
    inter_w = upper[..., 0] - lower[..., 0]
    inter_h = upper[..., 1] - lower[..., 1]
    inter = np.maximum(inter_w, 0.0) * np.maximum(inter_h, 0.0)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter, union


def _enclosing_area(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Area of the smallest box enclosing each pair, shape (N, M)"""
    enc_w = np.maximum(boxes_a[:, None, 2], boxes_b[None, :, 2]) - np.minimum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    enc_h = np.maximum(boxes_a[:, None, 3], boxes_b[None, :, 3]) - np.minimum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    return enc_w * enc_h


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """Element-wise division returning 0 where the denominator is 0"""
    out = np.zeros(np.broadcast(numerator, denominator).shape, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def iou_matrix(boxes_a: BoxLike, boxes_b: BoxLike) -> np.ndarray:
    """
    Intersection over union of every pair (A[i], B[j])

    :param boxes_a: boxes (N, 4)
    :type boxes_a: np.ndarray
    :param boxes_b: boxes (M, 4)
    :type boxes_b: np.ndarray
    :return: IoU matrix of shape (N, M), 0 where the union is empty
    :rtype: np.ndarray
    """
    array_a = as_boxes(boxes_a)
    array_b = as_boxes(boxes_b)
    inter, union = _pairwise_overlaps(array_a, array_b)
    return _safe_divide(inter, union)


def iou(box_a: BoxLike, box_b: BoxLike) -> float:
    """
    Intersection over union of two boxes

    :param box_a: first box
    :type box_a: Box
    :param box_b: second box
    :type box_b: Box
    :return: IoU in [0, 1]
    :rtype: float
    """
    return float(iou_matrix(box_a, box_b)[0, 0])


def aligned_iou(boxes_a: BoxLike, boxes_b: BoxLike) -> np.ndarray:
    """
    IoU of the element-wise pairs (A[i], B[i])

    :param boxes_a: boxes (N, 4)
    :type boxes_a: np.ndarray
    :param boxes_b: boxes (N, 4)
    :type boxes_b: np.ndarray
    :return: IoU vector of shape (N,)
    :rtype: np.ndarray
    """
    array_a = as_boxes(boxes_a)
    array_b = as_boxes(boxes_b)
    if array_a.shape != array_b.shape:
        raise ValueError(f"aligned boxes must share the same shape, got {array_a.shape} and {array_b.shape}")
    area_a = (array_a[:, 2] - array_a[:, 0]) * (array_a[:, 3] - array_a[:, 1])
    area_b = (array_b[:, 2] - array_b[:, 0]) * (array_b[:, 3] - array_b[:, 1])
    inter_w = np.minimum(array_a[:, 2], array_b[:, 2]) - np.maximum(array_a[:, 0], array_b[:, 0])
    inter_h = np.minimum(array_a[:, 3], array_b[:, 3]) - np.maximum(array_a[:, 1], array_b[:, 1])
    inter = np.maximum(inter_w, 0.0) * np.maximum(inter_h, 0.0)
    return _safe_divide(inter, area_a + area_b - inter)


def giou_matrix(boxes_a: BoxLike, boxes_b: BoxLike) -> np.ndarray:
    """
    Generalized IoU of every pair: iou - (area(C) - union) / area(C),
    with C the smallest enclosing box. Pairs whose enclosing box is empty get 0.

    :param boxes_a: boxes (N, 4)
    :type boxes_a: np.ndarray
    :param boxes_b: boxes (M, 4)
    :type boxes_b: np.ndarray
    :return: GIoU matrix of shape (N, M), values in [-1, 1]
    :rtype: np.ndarray
    """
    array_a = as_boxes(boxes_a)
    array_b = as_boxes(boxes_b)
    inter, union = _pairwise_overlaps(array_a, array_b)
    enclosing = _enclosing_area(array_a, array_b)
    return _safe_divide(inter, union) - _safe_divide(enclosing - union, enclosing)


def giou(box_a: BoxLike, box_b: BoxLike) -> float:
    """
    Generalized IoU of two boxes

    :param box_a: first box
    :type box_a: Box
    :param box_b: second box
    :type box_b: Box
    :return: GIoU in [-1, 1]
    :rtype: float
    """
    return float(giou_matrix(box_a, box_b)[0, 0])


def clip(boxes: BoxLike, img_w: float, img_h: float) -> np.ndarray:
    """
    Clamp box coordinates to the image frame [0, img_w] x [0, img_h]

    :param boxes: one box or boxes (N, 4)
    :type boxes: np.ndarray
    :param img_w: image width
    :type img_w: float
    :param img_h: image height
    :type img_h: float
    :return: clipped boxes, same shape as the input
    :rtype: np.ndarray
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image size must be positive, got {img_w}x{img_h}")
    single = np.ndim(boxes) == 1
    array = as_boxes(boxes).copy()
    array[:, 0::2] = np.clip(array[:, 0::2], 0, img_w)
    array[:, 1::2] = np.clip(array[:, 1::2], 0, img_h)
    return array[0] if single else array


def _centers_and_sizes(array: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    widths = array[:, 2] - array[:, 0]
    heights = array[:, 3] - array[:, 1]
    return array[:, 0] + 0.5 * widths, array[:, 1] + 0.5 * heights, widths, heights


def encode_delta(
    anchors: BoxLike,
    gts: BoxLike,
    means: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    stds: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
) -> np.ndarray:
    """
    Encode ground truth boxes as deltas relative to anchors

    dx = (gx - ax) / aw, dy = (gy - ay) / ah, dw = ln(gw / aw), dh = ln(gh / ah),
    then (delta - means) / stds.

    :param anchors: anchors (N, 4) with positive width and height
    :type anchors: np.ndarray
    :param gts: ground truth boxes (N, 4) with positive width and height
    :type gts: np.ndarray
    :param means: target means
    :type means: Sequence[float]
    :param stds: target stds, strictly positive
    :type stds: Sequence[float]
    :return: deltas, same shape as the input
    :rtype: np.ndarray
    """
    single = np.ndim(anchors) == 1
    means_, stds_ = _check_target_stats(means, stds)
    anchor_array = as_boxes(anchors)
    gt_array = as_boxes(gts)
    if anchor_array.shape != gt_array.shape:
        raise ValueError(f"anchors and gts must share the same shape, got {anchor_array.shape} and {gt_array.shape}")

    a_x, a_y, a_w, a_h = _centers_and_sizes(anchor_array)
    g_x, g_y, g_w, g_h = _centers_and_sizes(gt_array)
    if np.any(a_w <= 0) or np.any(a_h <= 0):
        raise ValueError("anchors must have positive width and height")
    if np.any(g_w <= 0) or np.any(g_h <= 0):
        raise ValueError("ground truth boxes must have positive width and height")

    deltas = np.stack([(g_x - a_x) / a_w, (g_y - a_y) / a_h, np.log(g_w / a_w), np.log(g_h / a_h)], axis=-1)
    deltas = (deltas - means_) / stds_
    return deltas[0] if single else deltas


def decode_delta(
    anchors: BoxLike,
    deltas: np.ndarray,
    means: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    stds: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    clip_shape: Optional[Tuple[float, float]] = None,
    max_ratio: Optional[float] = None,
) -> np.ndarray:
    """
    Apply deltas to anchors, inverse of encode_delta

    :param anchors: anchors (N, 4) with positive width and height
    :type anchors: np.ndarray
    :param deltas: normalized deltas (N, 4)
    :type deltas: np.ndarray
    :param means: target means
    :type means: Sequence[float]
    :param stds: target stds
    :type stds: Sequence[float]
    :param clip_shape: optional (width, height) to clip the decoded boxes to
    :type clip_shape: Tuple[float, float]
    :param max_ratio: optional bound on the absolute log-size deltas
    :type max_ratio: float
    :return: decoded boxes, same shape as the input
    :rtype: np.ndarray
    """
    single = np.ndim(anchors) == 1
    means_, stds_ = _check_target_stats(means, stds)
    anchor_array = as_boxes(anchors)
    delta_array = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    if delta_array.shape != anchor_array.shape:
        raise ValueError(
            f"deltas and anchors must share the same shape, got {delta_array.shape} and {anchor_array.shape}"
        )
    if not np.all(np.isfinite(delta_array)):
        raise ValueError("deltas must be finite")

    a_x, a_y, a_w, a_h = _centers_and_sizes(anchor_array)
    if np.any(a_w <= 0) or np.any(a_h <= 0):
        raise ValueError("anchors must have positive width and height")

    denorm = delta_array * stds_ + means_
    d_w, d_h = denorm[:, 2], denorm[:, 3]
    if max_ratio is not None:
        d_w = np.clip(d_w, -max_ratio, max_ratio)
        d_h = np.clip(d_h, -max_ratio, max_ratio)

    center_x = a_x + denorm[:, 0] * a_w
    center_y = a_y + denorm[:, 1] * a_h
    width = a_w * np.exp(d_w)
    height = a_h * np.exp(d_h)
    boxes = np.stack(
        [center_x - 0.5 * width, center_y - 0.5 * height, center_x + 0.5 * width, center_y + 0.5 * height], axis=-1
    )
    if clip_shape is not None:
        boxes = clip(boxes, clip_shape[0], clip_shape[1])
    return boxes[0] if single else boxes


def _check_target_stats(means: Sequence[float], stds: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Check target normalization vectors"""
    means_ = np.asarray(means, dtype=np.float64)
    stds_ = np.asarray(stds, dtype=np.float64)
    if means_.shape != (4,) or stds_.shape != (4,):
        raise ValueError("target means and stds must contain four values")
    if np.any(stds_ <= 0):
        raise ValueError(f"target stds must be strictly positive, got {list(stds_)}")
    return means_, stds_
