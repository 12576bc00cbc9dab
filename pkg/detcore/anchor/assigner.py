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
This module contains the max-IoU anchor assigner.
"""

from typing import NamedTuple, Optional

import numpy as np

from ..geometry import iou_matrix

IGNORE = -1
NEGATIVE = 0


class AssignResult(NamedTuple):
    """
    Per-anchor assignment.

    gt_inds holds IGNORE (-1), NEGATIVE (0) or k + 1 for an anchor positive on ground truth k.
    max_overlaps holds the best IoU of each anchor with any ground truth.
    """

    num_gts: int
    gt_inds: np.ndarray
    max_overlaps: np.ndarray

    @property
    def pos_mask(self) -> np.ndarray:
        return self.gt_inds > 0

    @property
    def neg_mask(self) -> np.ndarray:
        return self.gt_inds == NEGATIVE

    @property
    def pos_gt_index(self) -> np.ndarray:
        """Ground truth index of each positive anchor, in anchor order"""
        return self.gt_inds[self.pos_mask] - 1


def max_iou_assign(
    anchors: np.ndarray,
    gts: np.ndarray,
    pos_thr: float = 0.7,
    neg_thr: float = 0.3,
    min_pos_iou: float = 0.3,
    valid: Optional[np.ndarray] = None,
) -> AssignResult:
    """
    Assign each anchor to a ground truth, to the background or to nothing

    - max IoU < neg_thr: NEGATIVE
    - max IoU >= pos_thr: positive on its best ground truth (lowest index on ties)
    - otherwise IGNORE

    Then every ground truth whose best overlap is at least min_pos_iou claims its
    best anchor (lowest anchor index on ties). When two ground truths claim the
    same anchor the lowest ground truth index wins. A ground truth left without any
    positive then takes its best anchor not positive for another ground truth, when
    that overlap is at least min_pos_iou (lowest anchor index on ties).
    Anchors flagged invalid stay IGNORE and take part in no match.

    :param anchors: anchors (N, 4)
    :type anchors: np.ndarray
    :param gts: ground truth boxes (G, 4)
    :type gts: np.ndarray
    :param pos_thr: positive IoU threshold
    :type pos_thr: float
    :param neg_thr: negative IoU threshold, at most pos_thr
    :type neg_thr: float
    :param min_pos_iou: minimum IoU of a low-quality match
    :type min_pos_iou: float
    :param valid: optional boolean validity flags (N,)
    :type valid: np.ndarray
    :return: assignment
    :rtype: AssignResult
    """
    if pos_thr < neg_thr:
        raise ValueError(f"pos_thr ({pos_thr}) must be greater than or equal to neg_thr ({neg_thr})")

    overlaps = iou_matrix(gts, anchors)
    num_gts, num_anchors = overlaps.shape
    valid = np.ones(num_anchors, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != (num_anchors,):
        raise ValueError(f"valid flags must have shape ({num_anchors},), got {valid.shape}")

    gt_inds = np.full(num_anchors, IGNORE, dtype=np.int64)
    max_overlaps = np.zeros(num_anchors)
    if num_anchors == 0:
        return AssignResult(num_gts, gt_inds, max_overlaps)
    if num_gts == 0:
        gt_inds[valid] = NEGATIVE
        return AssignResult(num_gts, gt_inds, max_overlaps)

    overlaps[:, ~valid] = -1.0
    argmax_overlaps = overlaps.argmax(axis=0)
    max_overlaps = np.maximum(overlaps.max(axis=0), 0.0)

    gt_inds[valid & (max_overlaps < neg_thr)] = NEGATIVE
    positive = valid & (max_overlaps >= pos_thr)
    gt_inds[positive] = argmax_overlaps[positive] + 1

    gt_max_overlaps = overlaps.max(axis=1)
    gt_argmax_overlaps = overlaps.argmax(axis=1)
    qualifies = (gt_max_overlaps > 0) & (gt_max_overlaps >= min_pos_iou)
    for gt_index in range(num_gts - 1, -1, -1):
        if qualifies[gt_index]:
            gt_inds[gt_argmax_overlaps[gt_index]] = gt_index + 1

    # ground truths that lost their best anchor fall back to their best unclaimed one
    for gt_index in np.flatnonzero(qualifies):
        if np.any(gt_inds == gt_index + 1):
            continue
        candidates = np.where(gt_inds > 0, -1.0, overlaps[gt_index])
        best = int(candidates.argmax())
        if candidates[best] > 0 and candidates[best] >= min_pos_iou:
            gt_inds[best] = gt_index + 1

    return AssignResult(num_gts, gt_inds, max_overlaps)
