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
This module contains common constants present in detcore's tests.
"""

# Small synthetic problem trained in a few seconds: 32 x 32 images, 16 x 16 anchors, 16 features.
small_configuration = {
    "model": {"pool": 4},
    "data": {"train_images": 4, "val_images": 2, "img_size": 32, "max_objects": 2, "batch_size": 2},
    "optimizer": {"lr": 0.01},
    "lr_schedule": {"steps": [1], "factor": 0.1, "warmup_iters": 0},
    "workflow": [["train", 1], ["val", 1]],
    "max_epochs": 2,
    "hooks": [
        {"type": "logger", "interval": 1, "priority": 90},
        {"type": "eval", "interval": 1, "priority": 70},
    ],
    "anchors": {"base_size": 16, "num": 32},
    "seed": 3,
}

default_configuration_path = "./data_samples/json_conf_files/a_basic_pipeline.json"

# One box and the boxes of the reference IoU / GIoU cases
unit_box = [0.0, 0.0, 10.0, 10.0]
shifted_box = [5.0, 5.0, 15.0, 15.0]
