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
This module contains the synthetic shapes dataset: bright squares and wide
rectangles on a noisy dark background.
"""

import json
import logging
import os
from typing import Dict, List

import numpy as np
import rasterio
import xarray as xr
from pandora.common import mkdir_p

from ..img_tools import create_sample

SQUARE = 0
WIDE = 1
CLASS_NAMES = {SQUARE: "square", WIDE: "wide"}

_MAX_ATTEMPTS = 100
# Empty pixels kept between two objects.
_GAP = 2


def label_from_box(box: np.ndarray) -> int:
    """
    Class of a box from its aspect ratio: square when |w / h - 1| < 0.2, wide otherwise

    :param box: box [x1, y1, x2, y2]
    :type box: np.ndarray
    :return: class id
    :rtype: int
    """
    width, height = box[2] - box[0], box[3] - box[1]
    return SQUARE if abs(width / height - 1) < 0.2 else WIDE


def _draw_size(rng: np.random.Generator, img_size: int) -> tuple:
    """Width and height of a random square or wide rectangle"""
    if rng.random() < 0.5:
        side = int(rng.integers(round(0.34 * img_size), round(0.5 * img_size) + 1))
        return side, side
    height = int(rng.integers(round(0.25 * img_size), round(0.34 * img_size) + 1))
    width = min(int(round(height * rng.uniform(1.5, 2.0))), img_size - 1)
    return width, height


def _overlaps(box: np.ndarray, others: List[np.ndarray]) -> bool:
    return any(
        box[0] < other[2] + _GAP and other[0] < box[2] + _GAP and box[1] < other[3] + _GAP and other[1] < box[3] + _GAP
        for other in others
    )


def gen_image(rng: np.random.Generator, img_size: int, max_objects: int, image_id: int = 0) -> xr.Dataset:
    """
    Draw one synthetic image with 1 to max_objects non-overlapping filled rectangles

    :param rng: random generator
    :type rng: np.random.Generator
    :param img_size: image width and height
    :type img_size: int
    :param max_objects: maximum number of objects
    :type max_objects: int
    :param image_id: image identifier
    :type image_id: int
    :return: sample dataset
    :rtype: xr.Dataset
    """
    pixels = np.clip(rng.normal(0.1, 0.05, size=(img_size, img_size)), 0.0, 1.0)
    wanted = int(rng.integers(1, max_objects + 1))
    boxes: List[np.ndarray] = []
    for _ in range(_MAX_ATTEMPTS):
        if len(boxes) == wanted:
            break
        width, height = _draw_size(rng, img_size)
        x1 = int(rng.integers(0, img_size - width + 1))
        y1 = int(rng.integers(0, img_size - height + 1))
        box = np.array([x1, y1, x1 + width, y1 + height], dtype=np.float64)
        if _overlaps(box, boxes):
            continue
        intensity = rng.uniform(0.6, 1.0)
        pixels[y1 : y1 + height, x1 : x1 + width] = np.clip(
            intensity + rng.normal(0.0, 0.03, size=(height, width)), 0.0, 1.0
        )
        boxes.append(box)

    labels = [label_from_box(box) for box in boxes]
    return create_sample(pixels, np.array(boxes).reshape(-1, 4), labels, image_id)


def gen_dataset(n_images: int, img_size: int, max_objects: int, rng: np.random.Generator) -> List[xr.Dataset]:
    """
    Draw a synthetic dataset, deterministic for a seeded generator

    :param n_images: number of images
    :type n_images: int
    :param img_size: image width and height, at least 16
    :type img_size: int
    :param max_objects: maximum number of objects per image, at least 1
    :type max_objects: int
    :param rng: random generator
    :type rng: np.random.Generator
    :return: samples with image ids 0 to n_images - 1
    :rtype: List[xr.Dataset]
    """
    if n_images < 1 or img_size < 16 or max_objects < 1:
        raise ValueError(
            f"invalid dataset parameters: n_images={n_images}, img_size={img_size}, max_objects={max_objects}"
        )
    return [gen_image(rng, img_size, max_objects, image_id) for image_id in range(n_images)]


def save_dataset(samples: List[xr.Dataset], output: str) -> None:
    """
    Save samples as 8-bit portable graymap images and one annotations.json file

    annotations.json holds a list of {image_id, file_name, width, height, boxes, labels}.

    :param samples: samples to save
    :type samples: List[xr.Dataset]
    :param output: output directory
    :type output: str
    :return: None
    """
    mkdir_p(output)
    annotations = []
    for sample in samples:
        image_id = int(sample.attrs["image_id"])
        file_name = f"{image_id:05d}.pgm"
        height, width = sample["im"].shape
        with rasterio.open(
            os.path.join(output, file_name), "w", driver="PNM", width=width, height=height, count=1, dtype="uint8"
        ) as destination:
            destination.write(np.round(sample["im"].data * 255).astype(np.uint8), 1)
        annotations.append(
            {
                "image_id": image_id,
                "file_name": file_name,
                "width": int(width),
                "height": int(height),
                "boxes": sample["boxes"].data.tolist(),
                "labels": sample["labels"].data.tolist(),
            }
        )
    with open(os.path.join(output, "annotations.json"), "w", encoding="utf8") as file_:
        json.dump(annotations, file_, indent=2)
    logging.info("Synthetic dataset of %d images saved in %s", len(samples), output)


def load_dataset(path: str) -> List[xr.Dataset]:
    """
    Load samples saved by save_dataset, intensities come back quantized to 1/255

    :param path: dataset directory
    :type path: str
    :return: samples
    :rtype: List[xr.Dataset]
    """
    with open(os.path.join(path, "annotations.json"), "r", encoding="utf8") as file_:
        annotations: List[Dict] = json.load(file_)
    samples = []
    for record in annotations:
        with rasterio.open(os.path.join(path, record["file_name"])) as source:
            pixels = source.read(1).astype(np.float64) / 255
        samples.append(
            create_sample(pixels, np.array(record["boxes"]).reshape(-1, 4), record["labels"], record["image_id"])
        )
    return samples
