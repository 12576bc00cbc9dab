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
This module contains the tiny single-stage anchor-based detector trained with manual gradients.

The backbone is a fixed average pooling: every anchor footprint of base_size pixels
is flattened into a feature vector, normalized by the configured norm layer, then
fed to linear classification and regression heads.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import xarray as xr
from scipy.special import expit

from ..anchor import AnchorGenSpec, SamplerSpec, base_anchors, grid_anchors, max_iou_assign, random_sample, valid_flags
from ..geometry import DEFAULT_MAX_RATIO, decode_delta, encode_delta
from ..img_tools import sample_size
from ..losses import AbstractLoss, LossOut, build_loss
from ..norm import AbstractNorm, build_norm
from ..postprocessing import Detections, nms, topk_filter


class ForwardOut(NamedTuple):
    """Per-anchor outputs of a batch, anchors of all images concatenated in image order"""

    scores: np.ndarray
    deltas: np.ndarray
    logits: np.ndarray
    # (K, D + 1) normalized features with the bias column, K = cells of all images
    features: np.ndarray
    cells: List[int]


class ImageTargets(NamedTuple):
    """Training targets of one image"""

    anchors: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    pos_gt_boxes: np.ndarray
    cls_targets: np.ndarray


class TinyDetector:
    """
    TinyDetector class: fixed pooling backbone, normalized features and linear dense heads
    """

    def __init__(self, cfg: Dict) -> None:
        """
        :param cfg: checked configuration with the model, anchors, loss, norm and optimizer sections
        :type cfg: dict
        :return: None
        """
        model_cfg = cfg["model"]
        anchors_cfg = cfg["anchors"]
        self.cfg = cfg
        self.task = model_cfg["task"]
        self.num_classes = 1 if self.task == "proposal" else int(model_cfg["num_classes"])
        self.pool = int(model_cfg["pool"])
        self.anchor_spec = AnchorGenSpec(
            anchors_cfg["base_size"], anchors_cfg["scales"], anchors_cfg["ratios"], anchors_cfg["stride"]
        )
        self.stride = int(self.anchor_spec.stride)
        if self.stride % self.pool or self.anchor_spec.base_size % self.pool:
            raise ValueError(f"stride and base_size must be multiples of the pooling size {self.pool}")
        self.window = int(self.anchor_spec.base_size // self.pool)
        self.feature_dim = self.window**2
        self.num_base = self.anchor_spec.num_base_anchors
        self.base = base_anchors(self.anchor_spec)

        self.means = np.asarray(model_cfg["target_means"], dtype=np.float64)
        self.stds = np.asarray(model_cfg["target_stds"], dtype=np.float64)
        self.sampler = SamplerSpec(anchors_cfg["num"], anchors_cfg["pos_fraction"], anchors_cfg["neg_pos_ub"])

        loss_spec = dict(cfg["loss"])
        if loss_spec["type"] == "smooth_l1" and anchors_cfg.get("smoothl1_beta") is not None:
            loss_spec["beta"] = anchors_cfg["smoothl1_beta"]
        self.loss: AbstractLoss = build_loss(loss_spec)
        self.norm: AbstractNorm = build_norm(cfg["norm"], self.feature_dim)

        rng = np.random.default_rng(cfg["seed"])
        init_std = model_cfg["init_std"]
        self.cls_w = rng.normal(0.0, init_std, size=(self.num_base, self.num_classes, self.feature_dim + 1))
        self.reg_w = rng.normal(0.0, init_std, size=(self.num_base, 4, self.feature_dim + 1))
        self.cls_w[..., -1] = 0.0
        self.reg_w[..., -1] = 0.0
        self.velocity: Dict[str, np.ndarray] = {}

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays, updated in place"""
        params = {"cls_w": self.cls_w, "reg_w": self.reg_w}
        if self.norm.requires_grad:
            params.update({f"norm.{name}": value for name, value in self.norm.parameters().items()})
        return params

    def anchors(self, img_w: int, img_h: int) -> np.ndarray:
        """
        Anchors of an image, in grid order

        :param img_w: image width, multiple of the stride
        :type img_w: int
        :param img_h: image height, multiple of the stride
        :type img_h: int
        :return: anchors (cells * anchors per cell, 4)
        :rtype: np.ndarray
        """
        if img_w % self.stride or img_h % self.stride:
            raise ValueError(f"image size {img_w}x{img_h} is not divisible by the stride {self.stride}")
        return grid_anchors(self.base, img_w // self.stride, img_h // self.stride, self.stride)

    def cell_features(self, sample: xr.Dataset) -> np.ndarray:
        """
        Raw features of every feature cell: the pooled anchor footprint, zero-padded at the border

        :param sample: image sample
        :type sample: xr.Dataset
        :return: features (cells, window * window)
        :rtype: np.ndarray
        """
        img_w, img_h = sample_size(sample)
        if img_w % self.stride or img_h % self.stride:
            raise ValueError(f"image size {img_w}x{img_h} is not divisible by the stride {self.stride}")
        pixels = sample["im"].data
        pooled = pixels.reshape(img_h // self.pool, self.pool, img_w // self.pool, self.pool).mean(axis=(1, 3))
        pooled = np.pad(pooled, ((0, self.window), (0, self.window)))
        step = self.stride // self.pool
        windows = np.lib.stride_tricks.sliding_window_view(pooled, (self.window, self.window))
        windows = windows[: img_h // self.stride * step : step, : img_w // self.stride * step : step]
        return windows.reshape(-1, self.feature_dim)

    def forward(self, samples: List[xr.Dataset], training: bool = False) -> ForwardOut:
        """
        Forward a batch of samples

        :param samples: image samples
        :type samples: List[xr.Dataset]
        :param training: training mode of the norm layer
        :type training: bool
        :return: sigmoid scores (anchors, classes), raw deltas (anchors, 4) and intermediates
        :rtype: ForwardOut
        """
        raw = [self.cell_features(sample) for sample in samples]
        cells = [len(features) for features in raw]
        normalized = self.norm.forward(np.concatenate(raw), training)
        features = np.hstack([normalized, np.ones((len(normalized), 1))])
        logits = np.einsum("kd,acd->kac", features, self.cls_w).reshape(-1, self.num_classes)
        deltas = np.einsum("kd,aed->kae", features, self.reg_w).reshape(-1, 4)
        return ForwardOut(expit(logits), deltas, logits, features, cells)

    def image_targets(self, sample: xr.Dataset, rng: np.random.Generator) -> ImageTargets:
        """
        Assign and sample the anchors of one image

        :param sample: image sample
        :type sample: xr.Dataset
        :param rng: sampling generator
        :type rng: np.random.Generator
        :return: targets
        :rtype: ImageTargets
        """
        anchors_cfg = self.cfg["anchors"]
        img_w, img_h = sample_size(sample)
        anchors = self.anchors(img_w, img_h)
        gt_boxes = sample["boxes"].data
        gt_labels = sample["labels"].data
        valid = valid_flags(anchors, img_w, img_h, anchors_cfg["allowed_border"])
        assign = max_iou_assign(
            anchors,
            gt_boxes,
            anchors_cfg["pos_iou_thr"],
            anchors_cfg["neg_iou_thr"],
            anchors_cfg["min_pos_iou"],
            valid,
        )
        sampling = random_sample(assign, self.sampler, rng)
        gt_index = assign.gt_inds[sampling.pos_indices] - 1

        cls_targets = np.zeros((len(anchors), self.num_classes))
        if self.task == "proposal":
            cls_targets[sampling.pos_indices, 0] = 1.0
        else:
            cls_targets[sampling.pos_indices, gt_labels[gt_index]] = 1.0
        return ImageTargets(
            anchors, sampling.pos_indices, sampling.neg_indices, gt_boxes[gt_index].reshape(-1, 4), cls_targets
        )

    def _regression(self, anchors: np.ndarray, deltas: np.ndarray, gt_boxes: np.ndarray) -> LossOut:
        """Unweighted regression loss of positive anchors, gradient with respect to the deltas"""
        if not self.loss.on_boxes:
            return self.loss.compute(deltas, encode_delta(anchors, gt_boxes, self.means, self.stds))

        boxes = decode_delta(anchors, deltas, self.means, self.stds)
        out = self.loss.compute(boxes, gt_boxes)
        grad_boxes = np.reshape(out.grad, (-1, 4))
        widths = anchors[:, 2] - anchors[:, 0]
        heights = anchors[:, 3] - anchors[:, 1]
        box_w = boxes[:, 2] - boxes[:, 0]
        box_h = boxes[:, 3] - boxes[:, 1]
        # x1, x2 = cx -/+ w / 2 with cx = ax + (d0 * s0 + m0) * aw and w = aw * exp(d2 * s2 + m2)
        grad = np.stack(
            [
                self.stds[0] * widths * (grad_boxes[:, 0] + grad_boxes[:, 2]),
                self.stds[1] * heights * (grad_boxes[:, 1] + grad_boxes[:, 3]),
                self.stds[2] * box_w / 2 * (grad_boxes[:, 2] - grad_boxes[:, 0]),
                self.stds[3] * box_h / 2 * (grad_boxes[:, 3] - grad_boxes[:, 1]),
            ],
            axis=-1,
        )
        return LossOut(out.value, grad, out.flagged)

    def loss_and_grads(
        self, samples: List[xr.Dataset], rng: np.random.Generator, training: bool = True
    ) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
        """
        Total loss of a batch and its gradient with respect to every trainable array

        Classification: binary cross-entropy averaged over sampled anchors.
        Regression: weighted loss of positive anchors divided by max(1, positives).

        :param samples: image samples
        :type samples: List[xr.Dataset]
        :param rng: sampling generator
        :type rng: np.random.Generator
        :param training: training mode of the norm layer
        :type training: bool
        :return: loss, gradients keyed like parameters(), loss terms
        :rtype: Tuple[float, Dict[str, np.ndarray], Dict[str, float]]
        """
        out = self.forward(samples, training)
        targets = [self.image_targets(sample, rng) for sample in samples]

        offset = 0
        sampled, positives, pos_gts, pos_anchors = [], [], [], []
        cls_targets = []
        for target in targets:
            sampled.append(np.concatenate([target.pos, target.neg]) + offset)
            positives.append(target.pos + offset)
            pos_gts.append(target.pos_gt_boxes)
            pos_anchors.append(target.anchors[target.pos])
            cls_targets.append(target.cls_targets)
            offset += len(target.anchors)
        sampled_idx = np.concatenate(sampled).astype(np.int64)
        pos_idx = np.concatenate(positives).astype(np.int64)
        cls_target = np.concatenate(cls_targets)

        grad_logits = np.zeros_like(out.logits)
        grad_deltas = np.zeros_like(out.deltas)
        num_sampled = max(1, len(sampled_idx))
        logits = out.logits[sampled_idx]
        labels = cls_target[sampled_idx]
        # binary cross-entropy with logits: softplus(z) - t * z
        cls_loss = float(np.sum(np.logaddexp(0.0, logits) - labels * logits)) / num_sampled
        grad_logits[sampled_idx] = (out.scores[sampled_idx] - labels) / num_sampled

        reg_loss = 0.0
        if len(pos_idx) == 0:
            logging.warning("No positive anchor sampled, classification-only step")
        else:
            reg = self._regression(np.concatenate(pos_anchors), out.deltas[pos_idx], np.concatenate(pos_gts))
            scale = self.loss.loss_weight / len(pos_idx)
            reg_loss = reg.value * scale
            grad_deltas[pos_idx] = reg.grad * scale

        grads = self._backward(out, grad_logits, grad_deltas)
        return cls_loss + reg_loss, grads, {"loss_cls": cls_loss, "loss_reg": reg_loss}

    def _backward(self, out: ForwardOut, grad_logits: np.ndarray, grad_deltas: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of the heads and of the norm layer affine weights"""
        cells = len(out.features)
        grad_logits = grad_logits.reshape(cells, self.num_base, self.num_classes)
        grad_deltas = grad_deltas.reshape(cells, self.num_base, 4)
        grads = {
            "cls_w": np.einsum("kac,kd->acd", grad_logits, out.features),
            "reg_w": np.einsum("kae,kd->aed", grad_deltas, out.features),
        }
        grad_features = np.einsum("kac,acd->kd", grad_logits, self.cls_w) + np.einsum(
            "kae,aed->kd", grad_deltas, self.reg_w
        )
        self.norm.backward(grad_features[:, :-1])
        grads.update({f"norm.{name}": value for name, value in self.norm.trainable().items()})
        return grads

    def sgd_step(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        """
        SGD with momentum and weight decay: v = m * v + g + wd * w, then w -= lr * v

        :param grads: gradients keyed like parameters()
        :type grads: dict
        :param lr: learning rate
        :type lr: float
        :return: None
        """
        momentum = self.cfg["optimizer"]["momentum"]
        weight_decay = self.cfg["optimizer"]["weight_decay"]
        for name, param in self.parameters().items():
            if name not in grads:
                continue
            update = grads[name] + weight_decay * param
            velocity = self.velocity.get(name)
            velocity = update if velocity is None else momentum * velocity + update
            self.velocity[name] = velocity
            param -= lr * velocity

    def train_step(self, samples: List[xr.Dataset], lr: float, rng: np.random.Generator) -> float:
        """
        One optimizer step on a batch

        :param samples: image samples
        :type samples: List[xr.Dataset]
        :param lr: learning rate
        :type lr: float
        :param rng: sampling generator
        :type rng: np.random.Generator
        :return: total loss before the step
        :rtype: float
        """
        loss, grads, _ = self.loss_and_grads(samples, rng)
        self.sgd_step(grads, lr)
        return loss

    def infer(
        self,
        sample: xr.Dataset,
        score_thr: Optional[float] = None,
        nms_thr: Optional[float] = None,
        max_per_img: Optional[int] = None,
    ) -> Detections:
        """
        Detect objects in one image: decode, clip, filter scores, per-class NMS, keep the best

        :param sample: image sample
        :type sample: xr.Dataset
        :param score_thr: minimum score, model.score_thr by default
        :type score_thr: float
        :param nms_thr: NMS IoU threshold, model.nms_thr by default
        :type nms_thr: float
        :param max_per_img: maximum number of detections, model.max_per_img by default
        :type max_per_img: int
        :return: detections
        :rtype: Detections
        """
        model_cfg = self.cfg["model"]
        score_thr = model_cfg["score_thr"] if score_thr is None else score_thr
        nms_thr = model_cfg["nms_thr"] if nms_thr is None else nms_thr
        max_per_img = model_cfg["max_per_img"] if max_per_img is None else max_per_img

        img_w, img_h = sample_size(sample)
        anchors = self.anchors(img_w, img_h)
        out = self.forward([sample], training=False)
        valid = valid_flags(anchors, img_w, img_h, self.cfg["anchors"]["allowed_border"])
        boxes = decode_delta(
            anchors, out.deltas, self.means, self.stds, clip_shape=(img_w, img_h), max_ratio=DEFAULT_MAX_RATIO
        )

        anchor_idx, class_ids = np.nonzero((out.scores >= score_thr) & valid[:, None])
        candidates = Detections(boxes[anchor_idx], out.scores[anchor_idx, class_ids], class_ids)
        kept = candidates.select(nms(candidates, nms_thr, class_agnostic=self.task == "proposal"))
        return kept.select(topk_filter(kept, score_thr, max_per_img))
