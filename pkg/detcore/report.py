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
This module contains the report rows of the study harnesses and their CSV and text renderings.
"""

import csv
import io
from typing import Dict, Iterable, List, NamedTuple

import numpy as np
import xarray as xr

COLUMNS = ("label", "metric", "value")


class ReportRow(NamedTuple):
    """One metric value of one configuration"""

    label: str
    metric: str
    value: float


def format_value(value: float) -> str:
    """Lossless text of a float, "inf" and "nan" included"""
    return repr(float(value))


def to_csv(rows: Iterable[ReportRow]) -> str:
    """
    Render rows as CSV with a label,metric,value header

    :param rows: report rows
    :type rows: Iterable[ReportRow]
    :return: CSV text
    :rtype: str
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([row.label, row.metric, format_value(row.value)])
    return buffer.getvalue()


def from_csv(text: str) -> List[ReportRow]:
    """
    Parse CSV written by to_csv

    :param text: CSV text
    :type text: str
    :return: report rows
    :rtype: List[ReportRow]
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != COLUMNS:
        raise ValueError(f"report CSV must start with the header {','.join(COLUMNS)}")
    return [ReportRow(label, metric, float(value)) for label, metric, value in reader]


def write_csv(rows: Iterable[ReportRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as file_:
        file_.write(to_csv(rows))


def read_csv(path: str) -> List[ReportRow]:
    with open(path, encoding="utf-8") as file_:
        return from_csv(file_.read())


def pivot(rows: Iterable[ReportRow]) -> xr.DataArray:
    """
    Rows as a (label, metric) table, labels and metrics in first-seen order, missing cells NaN

    :param rows: report rows
    :type rows: Iterable[ReportRow]
    :return: table
    :rtype: xr.DataArray
    """
    labels: Dict[str, int] = {}
    metrics: Dict[str, int] = {}
    cells = []
    for row in rows:
        labels.setdefault(row.label, len(labels))
        metrics.setdefault(row.metric, len(metrics))
        cells.append((labels[row.label], metrics[row.metric], row.value))
    values = np.full((len(labels), len(metrics)), np.nan)
    for i, j, value in cells:
        values[i, j] = value
    return xr.DataArray(values, coords={"label": list(labels), "metric": list(metrics)}, dims=("label", "metric"))


def render_table(rows: Iterable[ReportRow], title: str = "", precision: int = 4) -> str:
    """
    Aligned text table, one line per label and one column per metric

    :param rows: report rows
    :type rows: Iterable[ReportRow]
    :param title: optional first line
    :type title: str
    :param precision: decimals of the values
    :type precision: int
    :return: table text
    :rtype: str
    """
    table = pivot(rows)
    header = [""] + [str(metric) for metric in table.coords["metric"].values]
    lines = [header]
    for label in table.coords["label"].values:
        values = table.sel(label=label).values
        lines.append([str(label)] + ["-" if np.isnan(value) else f"{value:.{precision}f}" for value in values])
    widths = [max(len(line[col]) for line in lines) for col in range(len(header))]
    text = [
        "  ".join(
            cell.ljust(width) if col == 0 else cell.rjust(width) for col, (cell, width) in enumerate(zip(line, widths))
        )
        for line in lines
    ]
    if title:
        text.insert(0, title)
    return "\n".join(line.rstrip() for line in text) + "\n"
