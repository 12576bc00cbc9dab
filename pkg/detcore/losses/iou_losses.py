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
This module contains the IoU-based regression losses: IoU, GIoU and Bounded IoU.

They consume corner boxes (N, 4), sum over boxes and return the gradient with
respect to the predicted corners.
"""

import logging
from typing import Dict, NamedTuple, Tuple

import numpy as np
from json_checker import And, Checker, Or

from ..geometry import as_boxes
from .losses import EPS, AbstractLoss, LossOut
from .residual import smooth_l1


class _Overlap(NamedTuple):
    """Intersection, union and their gradients with respect to the predicted corners"""

    inter: np.ndarray
    union: np.ndarray
    d_inter: np.ndarray
    d_union: np.ndarray


def _pair(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Check a prediction/target pair and return them as (N, 4) arrays"""
    single = np.ndim(pred) == 1
    pred_ = as_boxes(pred)
    target_ = as_boxes(target)
    if pred_.shape != target_.shape:
        raise ValueError(f"prediction and target must share the same shape, got {pred_.shape} and {target_.shape}")
    if np.any(target_[:, 2] <= target_[:, 0]) or np.any(target_[:, 3] <= target_[:, 1]):
        raise ValueError("target boxes must have a positive area")
    return pred_, target_, single


def _overlap(pred: np.ndarray, target: np.ndarray) -> _Overlap:
    """
    Intersection and union of aligned pairs with their analytic derivatives

    :param pred: predicted boxes (N, 4)
    :type pred: np.ndarray
    :param target: target boxes (N, 4)
    :type target: np.ndarray
    :return: overlap terms
    :rtype: _Overlap
    """
    p_w = pred[:, 2] - pred[:, 0]
    p_h = pred[:, 3] - pred[:, 1]
    t_w = target[:, 2] - target[:, 0]
    t_h = target[:, 3] - target[:, 1]

    inter_w = np.minimum(pred[:, 2], target[:, 2]) - np.maximum(pred[:, 0], target[:, 0])
    inter_h = np.minimum(pred[:, 3], target[:, 3]) - np.maximum(pred[:, 1], target[:, 1])
    pos_w = np.maximum(inter_w, 0.0)
    pos_h = np.maximum(inter_h, 0.0)
    inter = pos_w * pos_h
    union = p_w * p_h + t_w * t_h - inter

    # The predicted corner drives the intersection edge only when it is the inner one.
    active_w = (inter_w > 0).astype(np.float64)
    active_h = (inter_h > 0).astype(np.float64)
    d_inter = np.stack(
        [
            -1.0 * (pred[:, 0] > target[:, 0]) * active_w * pos_h,
            -1.0 * (pred[:, 1] > target[:, 1]) * active_h * pos_w,
            1.0 * (pred[:, 2] < target[:, 2]) * active_w * pos_h,
            1.0 * (pred[:, 3] < target[:, 3]) * active_h * pos_w,
        ],
        axis=-1,
    )
    d_area = np.stack([-p_h, -p_w, p_h, p_w], axis=-1)
    return _Overlap(inter, union, d_inter, d_area - d_inter)


def _iou_and_grad(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, _Overlap]:
    overlap = _overlap(pred, target)
    union = overlap.union[:, None]
    ious = overlap.inter / overlap.union
    d_iou = (overlap.d_inter * union - overlap.inter[:, None] * overlap.d_union) / union**2
    return ious, d_iou, overlap


def iou_loss(pred: np.ndarray, target: np.ndarray, mode: str = "log") -> LossOut:
    """
    IoU loss: -ln(iou) in log mode, 1 - iou in linear mode

    In log mode the IoU is floored at EPS, the loss is then flagged and
    its gradient is zero on the floored pairs.

    :param pred: predicted boxes (4,) or (N, 4)
    :type pred: np.ndarray
    :param target: target boxes with positive area, same shape as pred
    :type target: np.ndarray
    :param mode: log or linear
    :type mode: str
    :return: summed value and gradient with respect to pred corners
    :rtype: LossOut
    """
    if mode not in ("log", "linear"):
        raise ValueError(f"iou_loss mode must be log or linear, got {mode}")
    pred_, target_, single = _pair(pred, target)
    ious, d_iou, _ = _iou_and_grad(pred_, target_)

    flagged = False
    if mode == "linear":
        values = 1 - ious
        grad = -d_iou
    else:
        floored = ious < EPS
        flagged = bool(np.any(floored))
        if flagged:
            logging.warning("iou_loss: %d pair(s) with IoU below %g, eps floor used", int(np.sum(floored)), EPS)
        clamped = np.maximum(ious, EPS)
        values = -np.log(clamped)
        grad = np.where(floored[:, None], 0.0, -d_iou / clamped[:, None])
    return LossOut(float(np.sum(values)), grad[0] if single else grad, flagged)


def giou_loss(pred: np.ndarray, target: np.ndarray) -> LossOut:
    """
    GIoU loss: 1 - giou, in [0, 2]

    :param pred: predicted boxes (4,) or (N, 4)
    :type pred: np.ndarray
    :param target: target boxes with positive area, same shape as pred
    :type target: np.ndarray
    :return: summed value and gradient with respect to pred corners
    :rtype: LossOut
    """
    pred_, target_, single = _pair(pred, target)
    ious, d_iou, overlap = _iou_and_grad(pred_, target_)

    enc_w = np.maximum(pred_[:, 2], target_[:, 2]) - np.minimum(pred_[:, 0], target_[:, 0])
    enc_h = np.maximum(pred_[:, 3], target_[:, 3]) - np.minimum(pred_[:, 1], target_[:, 1])
    enclosing = enc_w * enc_h
    d_enclosing = np.stack(
        [
            -1.0 * (pred_[:, 0] < target_[:, 0]) * enc_h,
            -1.0 * (pred_[:, 1] < target_[:, 1]) * enc_w,
            1.0 * (pred_[:, 2] > target_[:, 2]) * enc_h,
            1.0 * (pred_[:, 3] > target_[:, 3]) * enc_w,
        ],
        axis=-1,
    )

    # giou = iou - 1 + union / enclosing
    gious = ious - 1 + overlap.union / enclosing
    d_giou = (
        d_iou
        + (overlap.d_union * enclosing[:, None] - overlap.union[:, None] * d_enclosing) / enclosing[:, None] ** 2
    )
    grad = -d_giou
    return LossOut(float(np.sum(1 - gious)), grad[0] if single else grad)


def _center_term(delta: np.ndarray, size: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Smooth L1 of 1 - max(0, (w_t - 2|d|) / (w_t + 2|d|)) and its derivative along d"""
    abs_delta = np.abs(delta)
    ratio = (size - 2 * abs_delta) / (size + 2 * abs_delta)
    bounded = np.maximum(ratio, 0.0)
    d_bounded = np.where(ratio > 0, -4 * size / (size + 2 * abs_delta) ** 2, 0.0) * np.sign(delta)
    return _smooth_l1_values(1 - bounded, beta), -smooth_l1(1 - bounded, beta).grad * d_bounded


def _size_term(pred_size: np.ndarray, size: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Smooth L1 of 1 - min(w / w_t, w_t / w) and its derivative along w"""
    shrink = pred_size < size
    ratio = np.where(shrink, pred_size / size, size / pred_size)
    d_ratio = np.where(shrink, 1 / size, -size / pred_size**2)
    return _smooth_l1_values(1 - ratio, beta), -smooth_l1(1 - ratio, beta).grad * d_ratio


def _smooth_l1_values(x: np.ndarray, beta: float) -> np.ndarray:
    abs_x = np.abs(x)
    return np.where(abs_x < beta, 0.5 * x**2 / beta, abs_x - 0.5 * beta)


def bounded_iou_loss(pred: np.ndarray, target: np.ndarray, beta: float = 0.2) -> LossOut:
    """
    Bounded IoU loss

    Each coordinate gets an IoU upper bound: for the centers
    max(0, (w_t - 2|dc|) / (w_t + 2|dc|)), for the sizes min(w / w_t, w_t / w).
    Smooth L1 is applied to 1 - bound and summed over the four coordinates.
    Non-positive predicted sizes are floored at EPS and the loss is flagged.

    :param pred: predicted boxes (4,) or (N, 4)
    :type pred: np.ndarray
    :param target: target boxes with positive area, same shape as pred
    :type target: np.ndarray
    :param beta: smooth L1 threshold
    :type beta: float
    :return: summed value and gradient with respect to pred corners
    :rtype: LossOut
    """
    if beta <= 0:
        raise ValueError(f"bounded_iou_loss beta must be strictly positive, got {beta}")
    pred_, target_, single = _pair(pred, target)

    p_cx = (pred_[:, 0] + pred_[:, 2]) / 2
    p_cy = (pred_[:, 1] + pred_[:, 3]) / 2
    p_w = pred_[:, 2] - pred_[:, 0]
    p_h = pred_[:, 3] - pred_[:, 1]
    t_cx = (target_[:, 0] + target_[:, 2]) / 2
    t_cy = (target_[:, 1] + target_[:, 3]) / 2
    t_w = target_[:, 2] - target_[:, 0]
    t_h = target_[:, 3] - target_[:, 1]

    floored = (p_w < EPS) | (p_h < EPS)
    flagged = bool(np.any(floored))
    if flagged:
        logging.warning("bounded_iou_loss: %d box(es) with non-positive size, eps floor used", int(np.sum(floored)))
    p_w_safe = np.maximum(p_w, EPS)
    p_h_safe = np.maximum(p_h, EPS)

    loss_cx, g_cx = _center_term(p_cx - t_cx, t_w, beta)
    loss_cy, g_cy = _center_term(p_cy - t_cy, t_h, beta)
    loss_w, g_w = _size_term(p_w_safe, t_w, beta)
    loss_h, g_h = _size_term(p_h_safe, t_h, beta)
    g_w = np.where(p_w < EPS, 0.0, g_w)
    g_h = np.where(p_h < EPS, 0.0, g_h)

    # cx = (x1 + x2) / 2 and w = x2 - x1
    grad = np.stack([0.5 * g_cx - g_w, 0.5 * g_cy - g_h, 0.5 * g_cx + g_w, 0.5 * g_cy + g_h], axis=-1)
    value = float(np.sum(loss_cx + loss_cy + loss_w + loss_h))
    return LossOut(value, grad[0] if single else grad, flagged)


@AbstractLoss.register_subclass("iou")
class IoULoss(AbstractLoss):
    """
    IoU regression loss
    """

    on_boxes = True
    _MODE = "log"

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the iou loss configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)
        cfg.setdefault("mode", self._MODE)

        schema = {
            "type": And(str, lambda x: x == "iou"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
            "mode": And(str, lambda x: x in ["log", "linear"]),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return iou_loss(pred, target, self.cfg["mode"])


@AbstractLoss.register_subclass("giou")
class GIoULoss(AbstractLoss):
    """
    GIoU regression loss
    """

    on_boxes = True

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the giou loss configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)

        schema = {
            "type": And(str, lambda x: x == "giou"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return giou_loss(pred, target)


@AbstractLoss.register_subclass("bounded_iou")
class BoundedIoULoss(AbstractLoss):
    """
    Bounded IoU regression loss
    """

    on_boxes = True
    _BETA = 0.2

    def check_conf(self, cfg: Dict) -> Dict:
        """
        Check the bounded_iou loss configuration

        :param cfg: loss configuration
        :type cfg: dict
        :return: cfg: completed configuration
        :rtype: cfg: dict
        """
        cfg.setdefault("loss_weight", self._LOSS_WEIGHT)
        cfg.setdefault("beta", self._BETA)

        schema = {
            "type": And(str, lambda x: x == "bounded_iou"),
            "loss_weight": And(Or(int, float), lambda x: x > 0),
            "beta": And(Or(int, float), lambda x: x > 0),
        }
        checker = Checker(schema)
        checker.validate(cfg)
        return cfg

    def compute(self, pred: np.ndarray, target: np.ndarray) -> LossOut:
        return bounded_iou_loss(pred, target, self.cfg["beta"])
