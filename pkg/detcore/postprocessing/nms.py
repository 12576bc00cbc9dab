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
This module contains functions associated to detection suppression: hard NMS, Soft-NMS and top-k filtering.
"""

import logging
from typing import Tuple

import numpy as np
from numba import njit

from ..geometry import iou_matrix
from .detections import Detections


def score_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, lower index first on ties"""
    return np.argsort(-np.asarray(scores), kind="stable")


@njit(cache=True)
def _greedy_suppression(boxes: np.ndarray, class_ids: np.ndarray, iou_thr: float) -> np.ndarray:
    """
    Greedy suppression over boxes already sorted by descending score

    :param boxes: sorted boxes (N, 4)
    :type boxes: np.ndarray
    :param class_ids: class of each box, all equal for class-agnostic suppression
    :type class_ids: np.ndarray
    :param iou_thr: a box is removed when its IoU with a kept box is above this threshold
    :type iou_thr: float
    :return: keep flags (N,)
    :rtype: np.ndarray
    """
    num = boxes.shape[0]
    keep = np.ones(num, dtype=np.bool_)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    for i in range(num):
        if not keep[i]:
            continue
        for j in range(i + 1, num):
            if not keep[j] or class_ids[j] != class_ids[i]:
                continue
            inter_w = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            inter_h = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            inter = max(inter_w, 0.0) * max(inter_h, 0.0)
            union = areas[i] + areas[j] - inter
            iou = inter / union if union > 0 else 0.0
            if iou > iou_thr:
                keep[j] = False
    return keep


def nms(dets: Detections, iou_thr: float = 0.5, class_agnostic: bool = False) -> np.ndarray:
    """
    Greedy non-maximum suppression, class by class unless class_agnostic

    :param dets: detections
    :type dets: Detections
    :param iou_thr: IoU threshold in (0, 1)
    :type iou_thr: float
    :param class_agnostic: suppress across classes
    :type class_agnostic: bool
    :return: kept indices sorted by descending score, lower index first on ties
    :rtype: np.ndarray
    """
    if not 0 < iou_thr < 1:
        raise ValueError(f"nms iou_thr must be in (0, 1), got {iou_thr}")
    if len(dets) == 0:
        return np.zeros(0, dtype=np.int64)
    order = score_order(dets.scores)
    class_ids = np.zeros(len(dets), dtype=np.int64) if class_agnostic else dets.class_ids[order]
    keep = _greedy_suppression(np.ascontiguousarray(dets.boxes[order]), class_ids, float(iou_thr))
    return order[keep]


def soft_nms(
    dets: Detections,
    method: str = "linear",
    iou_thr: float = 0.5,
    sigma: float = 0.5,
    score_thr: float = 1e-3,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Soft non-maximum suppression

    The highest scoring remaining detection is kept, then every remaining
    detection of the same class has its score decayed:

    - linear: s * (1 - iou) when iou > iou_thr
    - gaussian: s * exp(-iou**2 / sigma)

    Detections whose score falls below score_thr are dropped.

    :param dets: detections
    :type dets: Detections
    :param method: linear or gaussian
    :type method: str
    :param iou_thr: linear decay threshold
    :type iou_thr: float
    :param sigma: gaussian decay parameter
    :type sigma: float
    :param score_thr: minimum score kept
    :type score_thr: float
    :return: kept indices in selection order and their decayed scores
    :rtype: Tuple[np.ndarray, np.ndarray]
    """
    if method not in ("linear", "gaussian"):
        raise ValueError(f"soft_nms method must be linear or gaussian, got {method}")
    if sigma <= 0:
        raise ValueError(f"soft_nms sigma must be strictly positive, got {sigma}")

    scores = dets.scores.copy()
    remaining = np.flatnonzero(scores >= score_thr)
    kept, kept_scores = [], []
    while len(remaining):
        # argmax keeps the first maximum, remaining is sorted by index
        best = remaining[np.argmax(scores[remaining])]
        kept.append(best)
        kept_scores.append(scores[best])
        remaining = remaining[remaining != best]
        if not len(remaining):
            break

        same_class = dets.class_ids[remaining] == dets.class_ids[best]
        ious = iou_matrix(dets.boxes[best], dets.boxes[remaining])[0]
        if method == "linear":
            decay = np.where(ious > iou_thr, 1 - ious, 1.0)
        else:
            decay = np.exp(-(ious**2) / sigma)
        scores[remaining] = np.where(same_class, scores[remaining] * decay, scores[remaining])
        remaining = remaining[scores[remaining] >= score_thr]

    logging.debug("soft_nms kept %d of %d detections", len(kept), len(dets))
    return np.asarray(kept, dtype=np.int64), np.asarray(kept_scores, dtype=np.float64)


def topk_filter(dets: Detections, score_thr: float, k: int) -> np.ndarray:
    """
    Keep the k highest scores among detections scoring at least score_thr

    :param dets: detections
    :type dets: Detections
    :param score_thr: minimum score
    :type score_thr: float
    :param k: maximum number of detections, non-negative
    :type k: int
    :return: indices by descending score, lower index first on ties
    :rtype: np.ndarray
    """
    if k < 0:
        raise ValueError(f"topk_filter k must be non-negative, got {k}")
    order = score_order(dets.scores)
    order = order[dets.scores[order] >= score_thr]
    return order[:k]
