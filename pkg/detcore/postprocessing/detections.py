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
This module contains the detection container and its JSON record conversion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Union

import numpy as np

from ..geometry import as_boxes


@dataclass(frozen=True)
class Detections:
    """
    Detections of one image: boxes (N, 4), scores (N,) in [0, 1] and class ids (N,)
    """

    boxes: np.ndarray
    scores: np.ndarray
    class_ids: np.ndarray

    def __post_init__(self) -> None:
        boxes = as_boxes(self.boxes)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        if not len(boxes) == len(scores) == len(class_ids):
            raise ValueError(
                f"boxes, scores and class_ids must have the same length, got {len(boxes)}, {len(scores)} "
                f"and {len(class_ids)}"
            )
        if not np.all(np.isfinite(scores)) or np.any(scores < 0) or np.any(scores > 1):
            raise ValueError("detection scores must be finite and in [0, 1]")
        if np.any(class_ids < 0):
            raise ValueError("class ids must be non-negative")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "class_ids", class_ids)

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def empty(cls) -> Detections:
        return cls(np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64))

    def select(self, indices: Union[np.ndarray, List[int]]) -> Detections:
        """
        Detections at the given indices, in the given order

        :param indices: indices or boolean mask
        :type indices: np.ndarray
        :return: selected detections
        :rtype: Detections
        """
        indices = np.asarray(indices)
        if indices.dtype != bool:
            indices = indices.astype(np.int64)
        return Detections(self.boxes[indices], self.scores[indices], self.class_ids[indices])

    def with_scores(self, scores: np.ndarray) -> Detections:
        return Detections(self.boxes, scores, self.class_ids)

    def to_records(self, image_id: int) -> List[Dict]:
        """
        Detections as JSON records {image_id, bbox: [x1, y1, x2, y2], score, category_id}

        :param image_id: image identifier
        :type image_id: int
        :return: records
        :rtype: List[Dict]
        """
        return [
            {"image_id": int(image_id), "bbox": [float(v) for v in box], "score": float(score), "category_id": int(cls)}
            for box, score, cls in zip(self.boxes, self.scores, self.class_ids)
        ]

    @staticmethod
    def from_records(records: List[Dict]) -> Dict[int, Detections]:
        """
        Group JSON detection records by image

        :param records: records as written by to_records
        :type records: List[Dict]
        :return: detections per image id
        :rtype: Dict[int, Detections]
        """
        grouped: Dict[int, List[Dict]] = {}
        for record in records:
            grouped.setdefault(int(record["image_id"]), []).append(record)
        return {
            image_id: Detections(
                np.array([r["bbox"] for r in group], dtype=np.float64).reshape(-1, 4),
                np.array([r["score"] for r in group]),
                np.array([r["category_id"] for r in group], dtype=np.int64),
            )
            for image_id, group in grouped.items()
        }
