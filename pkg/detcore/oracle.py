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
This module contains brute-force reference implementations and the comparison suites run by the oracle command.
"""

import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .geometry import giou, iou
from .losses import balanced_l1, bounded_iou_loss, giou_loss, iou_loss, l1, smooth_l1
from .metrics import IOU_THRESHOLDS, RECALL_THRESHOLDS, GroundTruth, eval_map
from .postprocessing import Detections, nms

SUITES = ("iou", "nms", "grad", "map")
GRID_SIZE = 64
FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
MAP_TOLERANCE = 1e-9


class OracleResult(NamedTuple):
    """Outcome of one suite"""

    suite: str
    passed: int
    failed: int
    max_error: float

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def summary(self) -> str:
        return f"{self.suite}: {self.passed} passed, {self.failed} failed, max error {self.max_error:.3e}"


def pixel_iou(box_a: Sequence[int], box_b: Sequence[int], grid: int = GRID_SIZE) -> float:
    """
    IoU of two integer boxes by counting the pixels of their masks on a grid

    :param box_a: integer box [x1, y1, x2, y2], x2 and y2 excluded
    :type box_a: Sequence[int]
    :param box_b: integer box
    :type box_b: Sequence[int]
    :param grid: grid size
    :type grid: int
    :return: IoU
    :rtype: float
    """
    mask_a = np.zeros((grid, grid), dtype=bool)
    mask_b = np.zeros((grid, grid), dtype=bool)
    mask_a[box_a[1] : box_a[3], box_a[0] : box_a[2]] = True
    mask_b[box_b[1] : box_b[3], box_b[0] : box_b[2]] = True
    union = np.count_nonzero(mask_a | mask_b)
    return float(np.count_nonzero(mask_a & mask_b)) / union if union else 0.0


def enclosing_giou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """GIoU from the hand formula: IoU - (enclosing area - union) / enclosing area"""
    width = max(0.0, min(box_a[2], box_b[2]) - max(box_a[0], box_b[0]))
    height = max(0.0, min(box_a[3], box_b[3]) - max(box_a[1], box_b[1]))
    inter = width * height
    area_a = (box_a[2] - box_a[0]) * (box_a[3] - box_a[1])
    area_b = (box_b[2] - box_b[0]) * (box_b[3] - box_b[1])
    union = area_a + area_b - inter
    enclosing_w = max(box_a[2], box_b[2]) - min(box_a[0], box_b[0])
    enclosing_h = max(box_a[3], box_b[3]) - min(box_a[1], box_b[1])
    enclosing = enclosing_w * enclosing_h
    return inter / union - (enclosing - union) / enclosing


def random_int_boxes(rng: np.random.Generator, num: int, grid: int = GRID_SIZE) -> np.ndarray:
    """Integer boxes with positive area inside a grid x grid image"""
    corners = np.sort(rng.integers(0, grid + 1, size=(num, 2, 2)), axis=1)
    # forbid empty boxes
    corners[:, 1] = np.maximum(corners[:, 1], corners[:, 0] + 1)
    corners = np.minimum(corners, grid)
    corners[:, 0] = np.minimum(corners[:, 0], corners[:, 1] - 1)
    return np.stack([corners[:, 0, 0], corners[:, 0, 1], corners[:, 1, 0], corners[:, 1, 1]], axis=-1)


def check_iou(
    rng: np.random.Generator, num_pairs: int = 1000, iou_fn: Callable[[np.ndarray, np.ndarray], float] = iou
) -> OracleResult:
    """
    Compare iou_fn with the pixel-counting IoU (exact equality) and giou with the hand formula (1e-9)

    :param rng: random generator
    :type rng: np.random.Generator
    :param num_pairs: number of random box pairs
    :type num_pairs: int
    :param iou_fn: IoU implementation under test
    :type iou_fn: Callable
    :return: suite result
    :rtype: OracleResult
    """
    boxes_a = random_int_boxes(rng, num_pairs)
    boxes_b = random_int_boxes(rng, num_pairs)
    failed, max_error = 0, 0.0
    for box_a, box_b in zip(boxes_a, boxes_b):
        iou_error = abs(iou_fn(box_a, box_b) - pixel_iou(box_a, box_b))
        giou_error = abs(giou(box_a, box_b) - enclosing_giou(box_a.tolist(), box_b.tolist()))
        max_error = max(max_error, iou_error, giou_error)
        if iou_error != 0 or giou_error > MAP_TOLERANCE:
            failed += 1
    return OracleResult("iou", num_pairs - failed, failed, max_error)


def brute_force_nms(dets: Detections, iou_thr: float, class_agnostic: bool = False) -> List[int]:
    """
    Quadratic NMS: take detections by descending score (lower index first on ties) and keep
    a detection when no kept detection of its class overlaps it above iou_thr

    :param dets: detections
    :type dets: Detections
    :param iou_thr: IoU threshold
    :type iou_thr: float
    :param class_agnostic: ignore the classes
    :type class_agnostic: bool
    :return: kept indices in keeping order
    :rtype: List[int]
    """
    order = sorted(range(len(dets)), key=lambda index: (-dets.scores[index], index))
    kept: List[int] = []
    for index in order:
        if all(
            iou(dets.boxes[index], dets.boxes[other]) <= iou_thr
            for other in kept
            if class_agnostic or dets.class_ids[other] == dets.class_ids[index]
        ):
            kept.append(index)
    return kept


def random_detections(rng: np.random.Generator, max_boxes: int = 100, num_classes: int = 3) -> Detections:
    """Random detections in a 100 x 100 image with distinct scores"""
    num = int(rng.integers(0, max_boxes + 1))
    corners = rng.uniform(0, 100, size=(num, 2))
    sizes = rng.uniform(1, 30, size=(num, 2))
    boxes = np.hstack([corners, corners + sizes])
    return Detections(boxes, rng.permutation(num) / max(num, 1), rng.integers(0, num_classes, size=num))


def check_nms(rng: np.random.Generator, num_instances: int = 500, iou_thr: float = 0.5) -> OracleResult:
    """
    Compare nms with brute_force_nms and check that nms is idempotent

    :param rng: random generator
    :type rng: np.random.Generator
    :param num_instances: number of random instances
    :type num_instances: int
    :param iou_thr: IoU threshold
    :type iou_thr: float
    :return: suite result
    :rtype: OracleResult
    """
    failed = 0
    for _ in range(num_instances):
        dets = random_detections(rng)
        keep = nms(dets, iou_thr)
        kept = dets.select(keep)
        if list(keep) != brute_force_nms(dets, iou_thr) or len(nms(kept, iou_thr)) != len(kept):
            failed += 1
    return OracleResult("nms", num_instances - failed, failed, 0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, floor)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def numeric_grad(func: Callable[[np.ndarray], float], point: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """
    Central finite differences of a scalar function

    :param func: function of an array
    :type func: Callable
    :param point: evaluation point
    :type point: np.ndarray
    :param step: difference step
    :type step: float
    :return: gradient, same shape as point
    :rtype: np.ndarray
    """
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat_point = point.reshape(-1)
    flat_grad = grad.reshape(-1)
    for index in range(flat_point.size):
        saved = flat_point[index]
        flat_point[index] = saved + step
        upper = func(point)
        flat_point[index] = saved - step
        lower = func(point)
        flat_point[index] = saved
        flat_grad[index] = (upper - lower) / (2 * step)
    return grad


def _residual_points(rng: np.random.Generator, num: int, kinks: Sequence[float]) -> np.ndarray:
    """Residuals in [-3, 3] away from the non-differentiable points"""
    points = rng.uniform(-3, 3, size=num)
    for kink in kinks:
        close = np.abs(np.abs(points) - kink) < 1e-3
        points[close] += np.sign(points[close]) * 2e-3
    return points


def _box_pairs(rng: np.random.Generator, num: int) -> tuple:
    """Target boxes and overlapping predictions"""
    corners = rng.uniform(0, 50, size=(num, 2))
    sizes = rng.uniform(5, 30, size=(num, 2))
    targets = np.hstack([corners, corners + sizes])
    preds = targets + rng.uniform(-0.3, 0.3, size=(num, 4)) * np.hstack([sizes, sizes])
    preds[:, 2:] = np.maximum(preds[:, 2:], preds[:, :2] + 1)
    return preds, targets


def loss_functions() -> Dict[str, Callable[[np.ndarray, np.ndarray], tuple]]:
    """The six regression losses as functions of (prediction, target)"""
    return {
        "smooth_l1": lambda pred, target: smooth_l1(pred - target, 1.0),
        "l1": lambda pred, target: l1(pred - target),
        "balanced_l1": lambda pred, target: balanced_l1(pred - target),
        "iou": iou_loss,
        "giou": giou_loss,
        "bounded_iou": bounded_iou_loss,
    }


def check_grad(rng: np.random.Generator, num_points: int = 200, tolerance: float = GRAD_TOLERANCE) -> OracleResult:
    """
    Central finite-difference check of the six regression losses, plus smooth_l1 continuity
    at |x| = beta and its L1 limit for a vanishing beta

    :param rng: random generator
    :type rng: np.random.Generator
    :param num_points: random points per loss
    :type num_points: int
    :param tolerance: maximum relative error
    :type tolerance: float
    :return: suite result
    :rtype: OracleResult
    """
    passed, failed, max_error = 0, 0, 0.0
    for name, loss in loss_functions().items():
        if name in ("smooth_l1", "l1", "balanced_l1"):
            preds = _residual_points(rng, num_points, (0.0, 1.0)).reshape(-1, 1)
            targets = np.zeros_like(preds)
        else:
            preds, targets = _box_pairs(rng, num_points)
        worst = 0.0
        for pred, target in zip(preds, targets):
            analytic = loss(pred, target).grad
            numeric = numeric_grad(lambda point, target=target: loss(point, target).value, pred)
            worst = max(worst, relative_error(analytic, numeric))
        logging.info("Gradient check of %s: max relative error %.3e", name, worst)
        max_error = max(max_error, worst)
        if worst < tolerance:
            passed += 1
        else:
            failed += 1

    for beta in (0.2, 1.0, 1 / 9):
        below, above = smooth_l1(beta * (1 - 1e-12), beta), smooth_l1(beta * (1 + 1e-12), beta)
        gap = max(abs(below.value - above.value), float(np.abs(below.grad - above.grad)))
        max_error = max(max_error, gap)
        passed, failed = (passed + 1, failed) if gap < 1e-9 else (passed, failed + 1)

    residuals = _residual_points(rng, 100, ())
    residuals[np.abs(residuals) <= 1e-4] = 1e-3
    limit = max(abs(smooth_l1(x, 1e-8).value - abs(x)) for x in residuals)
    passed, failed = (passed + 1, failed) if limit < 1e-7 else (passed, failed + 1)
    return OracleResult("grad", passed, failed, max_error)


def reference_map(
    dets: Dict[int, Detections], gts: Dict[int, GroundTruth], thresholds: Sequence[float] = tuple(IOU_THRESHOLDS)
) -> float:
    """
    Loop-based mAP: greedy matching by descending score and 101-point interpolated precision

    :param dets: detections per image id
    :type dets: Dict[int, Detections]
    :param gts: ground truth per image id
    :type gts: Dict[int, GroundTruth]
    :param thresholds: IoU thresholds
    :type thresholds: Sequence[float]
    :return: mAP
    :rtype: float
    """
    classes = sorted({int(c) for truth in gts.values() for c in truth.class_ids})
    if not classes:
        return 0.0
    per_threshold = []
    for thr in thresholds:
        class_aps = []
        for class_id in classes:
            num_gts = sum(int(np.sum(np.asarray(truth.class_ids) == class_id)) for truth in gts.values())
            records = []
            for image_id, found in dets.items():
                truth = gts.get(image_id)
                gt_boxes = [] if truth is None else [b for b, c in zip(truth.boxes, truth.class_ids) if c == class_id]
                candidates = [(s, b) for b, s, c in zip(found.boxes, found.scores, found.class_ids) if c == class_id]
                candidates.sort(key=lambda item: -item[0])
                matched = [False] * len(gt_boxes)
                for score, box in candidates:
                    best, best_iou = -1, -1.0
                    for index, gt_box in enumerate(gt_boxes):
                        overlap = iou(box, gt_box)
                        if not matched[index] and overlap >= thr and overlap > best_iou:
                            best, best_iou = index, overlap
                    if best >= 0:
                        matched[best] = True
                    records.append((score, best >= 0))
            if num_gts == 0 or not records:
                class_aps.append(0.0)
                continue
            records.sort(key=lambda item: -item[0])
            true_pos = false_pos = 0
            recalls, precisions = [], []
            for _, hit in records:
                true_pos += hit
                false_pos += not hit
                recalls.append(true_pos / num_gts)
                precisions.append(true_pos / (true_pos + false_pos))
            total = 0.0
            for level in RECALL_THRESHOLDS:
                reachable = [p for r, p in zip(recalls, precisions) if r >= level]
                total += max(reachable) if reachable else 0.0
            class_aps.append(total / len(RECALL_THRESHOLDS))
        per_threshold.append(sum(class_aps) / len(class_aps))
    return sum(per_threshold) / len(per_threshold)


def random_scene(rng: np.random.Generator, num_classes: int = 3) -> tuple:
    """A few images with ground truth and noisy detections, scores all distinct"""
    dets, gts = {}, {}
    num_images = int(rng.integers(1, 4))
    scores = iter(rng.permutation(1000)[:200] / 1000)
    for image_id in range(num_images):
        gt_boxes = random_int_boxes(rng, int(rng.integers(0, 5))).astype(np.float64)
        gt_classes = rng.integers(0, num_classes, size=len(gt_boxes))
        jittered = gt_boxes + rng.uniform(-4, 4, size=gt_boxes.shape)
        jittered[:, 2:] = np.maximum(jittered[:, 2:], jittered[:, :2] + 1)
        spurious = random_int_boxes(rng, int(rng.integers(0, 4))).astype(np.float64)
        boxes = np.vstack([jittered, spurious])
        classes = np.concatenate([gt_classes, rng.integers(0, num_classes, size=len(spurious))])
        dets[image_id] = Detections(boxes, np.array([next(scores) for _ in boxes]), classes)
        gts[image_id] = GroundTruth(gt_boxes, gt_classes)
    return dets, gts


def check_map(rng: np.random.Generator, num_scenes: int = 200) -> OracleResult:
    """
    Compare eval_map with reference_map on random scenes

    :param rng: random generator
    :type rng: np.random.Generator
    :param num_scenes: number of random scenes
    :type num_scenes: int
    :return: suite result
    :rtype: OracleResult
    """
    failed, max_error = 0, 0.0
    for _ in range(num_scenes):
        dets, gts = random_scene(rng)
        error = abs(eval_map(dets, gts).map - reference_map(dets, gts))
        max_error = max(max_error, error)
        failed += error > MAP_TOLERANCE
    return OracleResult("map", num_scenes - failed, failed, max_error)


def run_suite(suite: str, seed: int = 0, iou_fn: Optional[Callable] = None) -> OracleResult:
    """
    Run one oracle suite

    :param suite: one of iou, nms, grad, map
    :type suite: str
    :param seed: random seed
    :type seed: int
    :param iou_fn: IoU implementation checked by the iou suite
    :type iou_fn: Callable
    :return: suite result
    :rtype: OracleResult
    """
    rng = np.random.default_rng(seed)
    if suite == "iou":
        return check_iou(rng, iou_fn=iou if iou_fn is None else iou_fn)
    if suite == "nms":
        return check_nms(rng)
    if suite == "grad":
        return check_grad(rng)
    if suite == "map":
        return check_map(rng)
    raise ValueError(f"unknown oracle suite {suite}, expected one of {', '.join(SUITES)}")
