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
This module contains functions associated to COCO-style evaluation: AP over IoU thresholds, mAP and AR@k.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..geometry import as_boxes, iou_matrix
from ..postprocessing import Detections, score_order

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)


class GroundTruth(NamedTuple):
    """Ground truth boxes (G, 4) and class ids (G,) of one image"""

    boxes: np.ndarray
    class_ids: np.ndarray


@dataclass
class EvalResult:
    """
    AP per IoU threshold, their mean, and optionally AR@k
    """

    ap_per_threshold: Dict[float, float]
    map: float
    ar_at_k: Optional[float] = None
    k: Optional[int] = None
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def ap50(self) -> float:
        return self.ap_per_threshold.get(0.5, float("nan"))

    def to_dict(self) -> Dict:
        return {
            "ap_per_threshold": {f"{thr:.2f}": float(ap) for thr, ap in self.ap_per_threshold.items()},
            "map": float(self.map),
            "ap50": float(self.ap50),
            "ar_at_k": None if self.ar_at_k is None else float(self.ar_at_k),
            "k": self.k,
        }

    def table_row(self, label: str = "") -> str:
        """One-line summary: label, mAP, AP@0.5, AP@0.75 and AR@k when available"""
        ap75 = self.ap_per_threshold.get(0.75, float("nan"))
        row = f"{label} mAP={self.map:.4f} AP50={self.ap50:.4f} AP75={ap75:.4f}"
        if self.ar_at_k is not None:
            row += f" AR@{self.k}={self.ar_at_k:.4f}"
        return row.strip()


Scene = Union[Mapping[int, Detections], Sequence[Detections]]
Truth = Union[Mapping[int, GroundTruth], Sequence[GroundTruth]]


def _by_image(items: Union[Mapping, Sequence]) -> Dict:
    return dict(items) if isinstance(items, Mapping) else dict(enumerate(items))


def match_detections(det_boxes: np.ndarray, det_scores: np.ndarray, gt_boxes: np.ndarray, iou_thr: float) -> np.ndarray:
    """
    Greedy matching of one image and one class

    Detections are taken by descending score, each one matches the unmatched
    ground truth of highest IoU, at least iou_thr, lowest index on ties.

    :param det_boxes: detection boxes (D, 4)
    :type det_boxes: np.ndarray
    :param det_scores: detection scores (D,)
    :type det_scores: np.ndarray
    :param gt_boxes: ground truth boxes (G, 4)
    :type gt_boxes: np.ndarray
    :param iou_thr: IoU threshold
    :type iou_thr: float
    :return: true positive flags (D,) in input order
    :rtype: np.ndarray
    """
    det_boxes = as_boxes(det_boxes)
    true_positive = np.zeros(len(det_boxes), dtype=bool)
    if len(det_boxes) == 0 or len(as_boxes(gt_boxes)) == 0:
        return true_positive
    ious = iou_matrix(det_boxes, gt_boxes)
    unmatched = np.ones(ious.shape[1], dtype=bool)
    for det_index in score_order(det_scores):
        candidates = np.where(unmatched & (ious[det_index] >= iou_thr), ious[det_index], -1.0)
        best = int(np.argmax(candidates))
        if candidates[best] >= 0:
            unmatched[best] = False
            true_positive[det_index] = True
    return true_positive


def average_precision(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """
    101-point interpolated average precision

    For each recall threshold r in {0, 0.01, ..., 1}, the precision is the
    maximum precision at recall >= r, 0 when r is never reached.

    :param recalls: non-decreasing recalls
    :type recalls: np.ndarray
    :param precisions: precisions
    :type precisions: np.ndarray
    :return: average precision
    :rtype: float
    """
    recalls = np.asarray(recalls, dtype=np.float64)
    precisions = np.asarray(precisions, dtype=np.float64)
    if len(recalls) == 0:
        return 0.0
    if np.any(np.diff(recalls) < 0):
        raise ValueError("recalls must be non-decreasing")
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    positions = np.searchsorted(recalls, RECALL_THRESHOLDS, side="left")
    reached = positions < len(recalls)
    interpolated = np.zeros(len(RECALL_THRESHOLDS))
    interpolated[reached] = envelope[positions[reached]]
    return float(np.mean(interpolated))


def _class_ap(dets: Dict[int, Detections], gts: Dict[int, GroundTruth], class_id: int, iou_thr: float) -> float:
    """AP of one class at one IoU threshold over all images"""
    num_gts = 0
    scores: List[np.ndarray] = []
    flags: List[np.ndarray] = []
    for image_id in sorted(set(gts) | set(dets)):
        truth = gts.get(image_id)
        gt_boxes = np.zeros((0, 4)) if truth is None else as_boxes(truth.boxes)[np.asarray(truth.class_ids) == class_id]
        num_gts += len(gt_boxes)
        found = dets.get(image_id)
        if found is None:
            continue
        mask = found.class_ids == class_id
        scores.append(found.scores[mask])
        flags.append(match_detections(found.boxes[mask], found.scores[mask], gt_boxes, iou_thr))

    if num_gts == 0 or not scores:
        return 0.0
    all_scores = np.concatenate(scores)
    if len(all_scores) == 0:
        return 0.0
    order = score_order(all_scores)
    true_positive = np.concatenate(flags)[order]
    cum_tp = np.cumsum(true_positive)
    cum_fp = np.cumsum(~true_positive)
    return average_precision(cum_tp / num_gts, cum_tp / (cum_tp + cum_fp))


def eval_map(dets: Scene, gts: Truth, thresholds: Sequence[float] = tuple(IOU_THRESHOLDS)) -> EvalResult:
    """
    COCO-style mAP: per class and threshold AP, averaged over the classes
    present in the ground truth, then over thresholds

    :param dets: detections per image id
    :type dets: Mapping[int, Detections] or sequence
    :param gts: ground truth per image id
    :type gts: Mapping[int, GroundTruth] or sequence
    :param thresholds: IoU thresholds
    :type thresholds: Sequence[float]
    :return: evaluation result
    :rtype: EvalResult
    """
    dets_ = _by_image(dets)
    gts_ = _by_image(gts)
    classes = sorted({int(c) for truth in gts_.values() for c in np.asarray(truth.class_ids)})
    if not classes:
        logging.warning("Evaluation without any ground truth, mAP set to 0")

    ap_per_threshold = {}
    for thr in thresholds:
        class_aps = [_class_ap(dets_, gts_, class_id, thr) for class_id in classes]
        ap_per_threshold[float(thr)] = float(np.mean(class_aps)) if class_aps else 0.0
    return EvalResult(ap_per_threshold, float(np.mean(list(ap_per_threshold.values()))))


def eval_ar(proposals: Scene, gts: Truth, k: int, thresholds: Sequence[float] = tuple(IOU_THRESHOLDS)) -> float:
    """
    Average recall of the top-k proposals of each image, class-agnostic,
    averaged over IoU thresholds

    :param proposals: proposals per image id
    :type proposals: Mapping[int, Detections] or sequence
    :param gts: ground truth per image id
    :type gts: Mapping[int, GroundTruth] or sequence
    :param k: number of proposals kept per image, at least 1
    :type k: int
    :param thresholds: IoU thresholds
    :type thresholds: Sequence[float]
    :return: average recall, 0 without ground truth
    :rtype: float
    """
    if k < 1:
        raise ValueError(f"AR k must be at least 1, got {k}")
    proposals_ = _by_image(proposals)
    gts_ = _by_image(gts)
    num_gts = sum(len(as_boxes(truth.boxes)) for truth in gts_.values())
    if num_gts == 0:
        logging.warning("AR@%d computed without any ground truth, set to 0", k)
        return 0.0

    recalls = []
    for thr in thresholds:
        matched = 0
        for image_id, truth in gts_.items():
            found = proposals_.get(image_id)
            if found is None or len(found) == 0:
                continue
            top = score_order(found.scores)[:k]
            matched += int(np.sum(match_detections(found.boxes[top], found.scores[top], truth.boxes, thr)))
        recalls.append(matched / num_gts)
    return float(np.mean(recalls))
