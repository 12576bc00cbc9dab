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
""" Module with global test fixtures. """

from copy import deepcopy

import numpy as np
import pytest

from detcore.check_configuration import check_conf
from detcore.refdet import gen_dataset
from tests import common


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def small_user_cfg():
    return deepcopy(common.small_configuration)


@pytest.fixture()
def small_cfg(small_user_cfg):
    """Checked small configuration"""
    return check_conf(small_user_cfg)


@pytest.fixture()
def default_cfg():
    return check_conf({})


@pytest.fixture()
def small_samples(small_cfg):
    """Four 32 x 32 synthetic samples"""
    data = small_cfg["data"]
    return gen_dataset(4, data["img_size"], data["max_objects"], np.random.default_rng(7))
