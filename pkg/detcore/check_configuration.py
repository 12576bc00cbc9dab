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
This module contains functions allowing to check the configuration given to the detcore pipeline.
"""

import copy
import math
from typing import Any, Dict, List

from json_checker import And, Checker, Or
from json_checker.core.exceptions import CheckerError
from pandora.check_configuration import concat_conf, update_conf

from .anchor import UNBOUNDED
from .img_tools import ScalePolicy, check_scale_policy
from .losses import build_loss
from .norm import build_norm
from .pipeline import LrSchedule, Priority, check_workflow

# Sections whose content is owned by a plugin or is a list, not merged with the defaults key by key.
_REPLACED_SECTIONS = ("loss", "workflow", "hooks")
# Keys accepting the string "inf" for UNBOUNDED.
_UNBOUNDED_KEYS = ("allowed_border", "neg_pos_ub")
HOOK_TYPES = ("logger", "eval", "checkpoint")


class ConfigurationError(ValueError):
    """
    Invalid configuration, path is the dotted path of the faulty field
    """

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def check_unknown_keys(reference: Dict, user_cfg: Dict, prefix: str = "") -> None:
    """
    Reject the keys of user_cfg missing from reference, recursively on nested sections

    :param reference: configuration holding every allowed key
    :type reference: dict
    :param user_cfg: user configuration
    :type user_cfg: dict
    :param prefix: dotted path of the checked section
    :type prefix: str
    :raises ConfigurationError: on the first unknown key, sorted by name
    """
    for key in sorted(user_cfg):
        path = f"{prefix}{key}"
        if key not in reference:
            raise ConfigurationError(path, "unknown configuration key")
        if path in _REPLACED_SECTIONS:
            continue
        if isinstance(reference[key], dict):
            if not isinstance(user_cfg[key], dict):
                raise ConfigurationError(path, "expected a section")
            check_unknown_keys(reference[key], user_cfg[key], f"{path}.")


def parse_unbounded(value: Any) -> Any:
    """Convert the "inf" string to UNBOUNDED, other values are returned unchanged"""
    if isinstance(value, str) and value in ("inf", "np.inf"):
        return UNBOUNDED
    return value


def _validate(section: str, schema: Dict, cfg: Dict) -> None:
    """Validate one section against its json-checker schema"""
    try:
        Checker(schema).validate(cfg)
    except CheckerError as error:
        raise ConfigurationError(section, str(error)) from error


def _number(predicate=lambda x: True):
    return And(Or(int, float), lambda x: not isinstance(x, bool) and predicate(x))


def check_model_section(cfg: Dict) -> None:
    """
    Check the model section

    :param cfg: complete configuration
    :type cfg: dict
    """
    schema = {
        "type": And(str, lambda x: x == "tiny_detector"),
        "task": And(str, lambda x: x in ("detection", "proposal")),
        "pool": And(int, lambda x: x >= 1),
        "num_classes": And(int, lambda x: x >= 1),
        "score_thr": _number(lambda x: 0 <= x <= 1),
        "nms_thr": _number(lambda x: 0 < x < 1),
        "max_per_img": And(int, lambda x: x >= 0),
        "init_std": _number(lambda x: x >= 0),
        "target_means": And(list, lambda x: len(x) == 4),
        "target_stds": And(list, lambda x: len(x) == 4 and all(std > 0 for std in x)),
    }
    _validate("model", schema, cfg["model"])
    anchors = cfg["anchors"]
    if anchors["stride"] % cfg["model"]["pool"] or anchors["base_size"] % cfg["model"]["pool"]:
        raise ConfigurationError("model.pool", "anchors stride and base_size must be multiples of the pooling size")


def check_data_section(cfg: Dict) -> None:
    schema = {
        "train_images": And(int, lambda x: x >= 1),
        "val_images": And(int, lambda x: x >= 1),
        "img_size": And(int, lambda x: x >= 16),
        "max_objects": And(int, lambda x: x >= 1),
        "batch_size": And(int, lambda x: x >= 1),
    }
    _validate("data", schema, cfg["data"])


def check_optimizer_section(cfg: Dict) -> None:
    """
    Check the optimizer and lr_schedule sections

    :param cfg: complete configuration
    :type cfg: dict
    """
    schema = {
        "lr": _number(lambda x: x > 0),
        "momentum": _number(lambda x: 0 <= x < 1),
        "weight_decay": _number(lambda x: x >= 0),
    }
    _validate("optimizer", schema, cfg["optimizer"])
    schema = {
        "steps": [And(int, lambda x: x >= 0)],
        "factor": _number(lambda x: x > 0),
        "warmup_iters": And(int, lambda x: x >= 0),
    }
    _validate("lr_schedule", schema, cfg["lr_schedule"])
    try:
        LrSchedule(cfg["optimizer"]["lr"], tuple(cfg["lr_schedule"]["steps"]), cfg["lr_schedule"]["factor"])
    except ValueError as error:
        raise ConfigurationError("lr_schedule", str(error)) from error


def check_workflow_section(cfg: Dict) -> None:
    """
    Check the workflow, max_epochs, seed and hooks entries

    :param cfg: complete configuration
    :type cfg: dict
    """
    if not isinstance(cfg["workflow"], list) or not all(
        isinstance(item, list) and len(item) == 2 for item in cfg["workflow"]
    ):
        raise ConfigurationError("workflow", "expected a list of [phase, epochs]")
    try:
        check_workflow(cfg["workflow"])
    except (TypeError, ValueError) as error:
        raise ConfigurationError("workflow", str(error)) from error
    if not isinstance(cfg["max_epochs"], int) or cfg["max_epochs"] < 0:
        raise ConfigurationError("max_epochs", "expected a non-negative integer")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigurationError("seed", "expected a non-negative integer")

    if not isinstance(cfg["hooks"], list):
        raise ConfigurationError("hooks", "expected a list")
    schema = {
        "type": And(str, lambda x: x in HOOK_TYPES),
        "interval": And(int, lambda x: x >= 1),
        "priority": And(int, lambda x: Priority.HIGHEST <= x <= Priority.LOWEST),
    }
    names: List[str] = []
    for index, hook in enumerate(cfg["hooks"]):
        if not isinstance(hook, dict):
            raise ConfigurationError(f"hooks.{index}", "expected a section")
        _validate(f"hooks.{index}", schema, hook)
        if hook["type"] in names:
            raise ConfigurationError(f"hooks.{index}.type", f"hook {hook['type']} given twice")
        names.append(hook["type"])


def check_loss_section(cfg: Dict) -> Dict:
    """
    Check the loss section with its loss plugin and fill its defaults

    :param cfg: complete configuration
    :type cfg: dict
    :return: completed loss section
    :rtype: dict
    """
    loss_cfg = cfg["loss"]
    if not isinstance(loss_cfg, dict) or "type" not in loss_cfg:
        raise ConfigurationError("loss.type", "missing loss type")
    try:
        return build_loss(loss_cfg).cfg
    except KeyError as error:
        raise ConfigurationError("loss.type", f"unknown loss {loss_cfg['type']}") from error
    except CheckerError as error:
        raise ConfigurationError("loss", str(error)) from error


def check_anchors_section(cfg: Dict) -> None:
    """
    Check the anchors section, "inf" strings are already converted

    :param cfg: complete configuration
    :type cfg: dict
    """
    unbounded_or_non_negative = _number(lambda x: x >= 0)
    schema = {
        "base_size": _number(lambda x: x > 0),
        "scales": And(list, lambda x: len(x) > 0 and all(v > 0 for v in x)),
        "ratios": And(list, lambda x: len(x) > 0 and all(v > 0 for v in x)),
        "stride": And(int, lambda x: x >= 1),
        "pos_iou_thr": _number(lambda x: 0 <= x <= 1),
        "neg_iou_thr": _number(lambda x: 0 <= x <= 1),
        "min_pos_iou": _number(lambda x: 0 <= x <= 1),
        "allowed_border": unbounded_or_non_negative,
        "num": And(int, lambda x: x >= 1),
        "pos_fraction": _number(lambda x: 0 < x <= 1),
        "neg_pos_ub": _number(lambda x: x > 0),
        "smoothl1_beta": Or(None, _number(lambda x: x > 0)),
    }
    _validate("anchors", schema, cfg["anchors"])
    if cfg["anchors"]["neg_iou_thr"] > cfg["anchors"]["pos_iou_thr"]:
        raise ConfigurationError("anchors.neg_iou_thr", "must not exceed anchors.pos_iou_thr")


def check_scale_policy_section(cfg: Dict) -> None:
    policy = cfg["scale_policy"]
    schema = {
        "mode": And(str, lambda x: x in ("value", "range")),
        "long_edge": And(int, lambda x: x >= 1),
        "short_edges": [And(int, lambda x: x >= 1)],
    }
    _validate("scale_policy", schema, policy)
    try:
        check_scale_policy(ScalePolicy(policy["mode"], policy["long_edge"], tuple(policy["short_edges"])))
    except ValueError as error:
        raise ConfigurationError("scale_policy", str(error)) from error


def check_norm_section(cfg: Dict) -> Dict:
    """
    Check the norm section with its norm plugin

    :param cfg: complete configuration
    :type cfg: dict
    :return: completed norm section
    :rtype: dict
    """
    window = int(cfg["anchors"]["base_size"] // cfg["model"]["pool"])
    try:
        return build_norm(cfg["norm"], window**2).cfg
    except KeyError as error:
        raise ConfigurationError("norm.type", f"unknown norm {cfg['norm'].get('type')}") from error
    except CheckerError as error:
        raise ConfigurationError("norm", str(error)) from error
    except ValueError as error:
        raise ConfigurationError("norm", str(error)) from error


def check_conf(user_cfg: Dict) -> Dict:
    """
    Complete and check if the dictionary is correct

    :param user_cfg: user configuration
    :type user_cfg: dict
    :return: cfg: global configuration
    :rtype: cfg: dict
    :raises ConfigurationError: with the dotted path of the first faulty field
    """
    check_unknown_keys(default_configuration, user_cfg)

    merged = {key: value for key, value in default_configuration.items() if key not in _REPLACED_SECTIONS}
    merged = copy.deepcopy(merged)
    cfg = update_conf(merged, {key: value for key, value in user_cfg.items() if key not in _REPLACED_SECTIONS})
    replaced = {key: copy.deepcopy(user_cfg.get(key, default_configuration[key])) for key in _REPLACED_SECTIONS}
    cfg = concat_conf([cfg, replaced])
    for key in _UNBOUNDED_KEYS:
        cfg["anchors"][key] = parse_unbounded(cfg["anchors"][key])

    check_model_section(cfg)
    check_data_section(cfg)
    check_optimizer_section(cfg)
    check_workflow_section(cfg)
    check_anchors_section(cfg)
    check_scale_policy_section(cfg)
    cfg["loss"] = check_loss_section(cfg)
    cfg["norm"] = check_norm_section(cfg)
    return cfg


def serializable(cfg: Dict) -> Dict:
    """Copy of a checked configuration with UNBOUNDED written back as "inf"""
    out = copy.deepcopy(cfg)
    for key in _UNBOUNDED_KEYS:
        if isinstance(out["anchors"][key], float) and math.isinf(out["anchors"][key]):
            out["anchors"][key] = "inf"
    return out


default_configuration: Dict[str, Any] = {
    "model": {
        "type": "tiny_detector",
        "task": "detection",
        "pool": 4,
        "num_classes": 2,
        "score_thr": 0.05,
        "nms_thr": 0.5,
        "max_per_img": 100,
        "init_std": 0.01,
        "target_means": [0.0, 0.0, 0.0, 0.0],
        "target_stds": [0.1, 0.1, 0.2, 0.2],
    },
    "data": {"train_images": 64, "val_images": 16, "img_size": 64, "max_objects": 3, "batch_size": 4},
    "optimizer": {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0001},
    "lr_schedule": {"steps": [20, 27], "factor": 0.1, "warmup_iters": 20},
    "workflow": [["train", 1], ["val", 1]],
    "max_epochs": 30,
    "hooks": [
        {"type": "logger", "interval": 10, "priority": int(Priority.VERY_LOW)},
        {"type": "eval", "interval": 1, "priority": int(Priority.LOW)},
        {"type": "checkpoint", "interval": 10, "priority": int(Priority.NORMAL)},
    ],
    "loss": {"type": "smooth_l1", "loss_weight": 1.0, "beta": 1.0},
    "anchors": {
        "base_size": 32,
        "scales": [1.0],
        "ratios": [1.0],
        "stride": 8,
        "pos_iou_thr": 0.5,
        "neg_iou_thr": 0.4,
        "min_pos_iou": 0.3,
        "allowed_border": 0,
        "num": 64,
        "pos_fraction": 0.5,
        "neg_pos_ub": "inf",
        "smoothl1_beta": None,
    },
    "scale_policy": {"mode": "value", "long_edge": 64, "short_edges": [64]},
    "norm": {"type": "BN", "eval": False, "requires_grad": True, "momentum": 0.1, "eps": 1e-5, "num_groups": 32},
    "seed": 0,
}
