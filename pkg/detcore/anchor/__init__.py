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
Init file for anchor module
"""

from .anchor_generator import UNBOUNDED, AnchorGenSpec, base_anchors, grid_anchors, valid_flags
from .assigner import IGNORE, NEGATIVE, AssignResult, max_iou_assign
from .sampler import SamplerSpec, SamplingResult, random_sample
