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
This module contains the ablation harnesses: regression loss grid, RPN hyper-parameters and training scales.

Every cell trains one model from the same seed and reports one ReportRow.
"""

import copy
import logging
import math
import multiprocessing
import os
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from . import run
from .anchor import UNBOUNDED
from .report import ReportRow

LOSS_TYPES = ("smooth_l1", "l1", "balanced_l1", "iou", "giou", "bounded_iou")
LOSS_WEIGHTS = (1, 2, 5, 10)
# (smoothl1_beta denominator, allowed_border, neg_pos_ub)
RPN_ROWS: Tuple[Tuple[int, float, float], ...] = (
    (5, 0, UNBOUNDED),
    (9, 0, UNBOUNDED),
    (15, 0, UNBOUNDED),
    (9, UNBOUNDED, UNBOUNDED),
    (9, UNBOUNDED, 3),
    (9, UNBOUNDED, 5),
)
THREADS_ENV = "DETCORE_THREADS"


class StudyCell(NamedTuple):
    """One configuration of a study and the metric it reports"""

    label: str
    metric: str
    cfg: Dict
    # "ap50" or "ar"
    measure: str = "ap50"


def format_bound(value: float) -> str:
    """Text of a bound, "inf" when unbounded"""
    return "inf" if math.isinf(value) else f"{value:g}"


def _study_cfg(cfg: Dict) -> Dict:
    """Copy of cfg without the evaluation and checkpoint hooks, a cell evaluates once at the end"""
    cell_cfg = copy.deepcopy(cfg)
    cell_cfg["hooks"] = [hook for hook in cell_cfg["hooks"] if hook["type"] == "logger"]
    return cell_cfg


def run_cell(cell: StudyCell) -> ReportRow:
    """
    Train and evaluate one cell, a failure is logged and reported as NaN

    :param cell: study cell
    :type cell: StudyCell
    :return: report row
    :rtype: ReportRow
    """
    try:
        _, model, val_samples = run(cell.cfg)
        result = model.evaluate(val_samples)
        value = result.ar_at_k if cell.measure == "ar" else result.ap50
    except Exception as error:  # pylint: disable=broad-except
        logging.error("Study cell %s %s failed: %s", cell.label, cell.metric, error)
        return ReportRow(cell.label, cell.metric, float("nan"))
    return ReportRow(cell.label, cell.metric, float(value))  # type: ignore[arg-type]


def cell_processes(num_cells: int, processes: Optional[int] = None) -> int:
    """Worker count: processes, else DETCORE_THREADS, else the CPU count, capped by the number of cells"""
    if processes is None:
        processes = int(os.environ.get(THREADS_ENV, os.cpu_count() or 1))
    return max(1, min(processes, num_cells))


def run_cells(cells: Sequence[StudyCell], processes: Optional[int] = None) -> List[ReportRow]:
    """
    Run the cells, in parallel when more than one worker is allowed; rows keep the cell order

    :param cells: study cells
    :type cells: Sequence[StudyCell]
    :param processes: worker count
    :type processes: int
    :return: report rows
    :rtype: List[ReportRow]
    """
    workers = cell_processes(len(cells), processes)
    logging.info("Running %d study cells on %d worker(s)", len(cells), workers)
    if workers == 1:
        return [run_cell(cell) for cell in cells]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(run_cell, cells)


def grid_loss_cells(
    cfg: Dict, losses: Sequence[str] = LOSS_TYPES, weights: Sequence[float] = LOSS_WEIGHTS
) -> List[StudyCell]:
    """
    One detection cell per (loss, loss weight), rows are losses and columns lw=<weight>

    :param cfg: checked configuration
    :type cfg: dict
    :param losses: regression loss types
    :type losses: Sequence[str]
    :param weights: loss weights
    :type weights: Sequence[float]
    :return: cells
    :rtype: List[StudyCell]
    """
    if not losses or not weights:
        raise ValueError("the loss grid needs at least one loss and one weight")
    cells = []
    for loss_type in losses:
        for weight in weights:
            cell_cfg = _study_cfg(cfg)
            cell_cfg["loss"] = {"type": loss_type, "loss_weight": weight}
            cells.append(StudyCell(loss_type, f"lw={weight:g}", cell_cfg))
    return cells


def rpn_study_cells(cfg: Dict) -> List[StudyCell]:
    """
    The six RPN rows on the proposal task, smooth_l1 regression, reporting AR@1000

    :param cfg: checked configuration
    :type cfg: dict
    :return: cells
    :rtype: List[StudyCell]
    """
    cells = []
    for beta_denominator, allowed_border, neg_pos_ub in RPN_ROWS:
        cell_cfg = _study_cfg(cfg)
        cell_cfg["model"]["task"] = "proposal"
        cell_cfg["loss"] = {"type": "smooth_l1", "loss_weight": cfg["loss"].get("loss_weight", 1.0)}
        cell_cfg["anchors"].update(
            {"smoothl1_beta": 1 / beta_denominator, "allowed_border": allowed_border, "neg_pos_ub": neg_pos_ub}
        )
        label = (
            f"smoothl1_beta=1/{beta_denominator} allowed_border={format_bound(allowed_border)} "
            f"neg_pos_ub={format_bound(neg_pos_ub)}"
        )
        cells.append(StudyCell(label, "AR@1000", cell_cfg, "ar"))
    return cells


def scale_study_cells(cfg: Dict, spread: int = 16, step: int = 8) -> List[StudyCell]:
    """
    Single scale, value mode and range mode with the same bounds around the dataset image size

    :param cfg: checked configuration
    :type cfg: dict
    :param spread: half width of the scale interval in pixels
    :type spread: int
    :param step: interval of the value mode list
    :type step: int
    :return: cells
    :rtype: List[StudyCell]
    """
    size = cfg["data"]["img_size"]
    low, high = max(cfg["anchors"]["stride"], size - spread), size + spread
    policies = [
        (f"single {size}", {"mode": "value", "long_edge": high, "short_edges": [size]}),
        (
            f"value [{low}:{high}:{step}]",
            {"mode": "value", "long_edge": high, "short_edges": list(range(low, high + 1, step))},
        ),
        (f"range [{low}:{high}]", {"mode": "range", "long_edge": high, "short_edges": [low, high]}),
    ]
    cells = []
    for label, policy in policies:
        cell_cfg = _study_cfg(cfg)
        cell_cfg["scale_policy"] = policy
        cells.append(StudyCell(label, "AP50", cell_cfg))
    return cells
