"""
helpers.py
Helper functions shared by the gapkit modules.
This module contains the small array utilities used for validation,
the tie-aware ranking kernel behind the retrieval metrics, and the
formatting helpers used when metric reports are turned into tables.
"""

import math
from typing import Optional

import numpy as np
import pandas as pd

UNDEFINED = float("nan")

# Decimal places used in the human-readable tables; ranks are integers.
REPORT_DECIMALS = {"itr": 2, "tir": 2, "tmr": 0, "imr": 0, "fid": 2, "recall": 2}


def _as_array(value) -> np.ndarray:
    """
    Return the float64 array behind an EmbeddingMatrix or an array-like.

    Args:
        value (EmbeddingMatrix | array-like): rows to extract.
    Returns:
        np.ndarray: the data as a float64 array (no copy when possible).
    """
    data = getattr(value, "data", value)
    return np.asarray(data, dtype=np.float64)


def _first_bad_row(data: np.ndarray) -> Optional[int]:
    """Index of the first row holding NaN or Inf, or None."""
    finite_rows = np.isfinite(data).all(axis=1)
    if finite_rows.all():
        return None
    return int(np.flatnonzero(~finite_rows)[0])


def _frozen_copy(data: np.ndarray) -> np.ndarray:
    """C-ordered float64 copy with the writeable flag cleared."""
    frozen = np.array(data, dtype=np.float64, order="C", copy=True)
    frozen.flags.writeable = False
    return frozen


def _masked_similarity(Z: np.ndarray) -> np.ndarray:
    """
    S = Z Z^T with the diagonal set to -inf so an item never retrieves itself.

    Args:
        Z (np.ndarray): stacked (2n x d) corpus.
    Returns:
        np.ndarray: (2n x 2n) similarity matrix.
    """
    similarity = Z @ Z.T
    np.fill_diagonal(similarity, -np.inf)
    return similarity


def _tie_aware_rank(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    1-based rank of a target column within each row of `scores`.

    Items are ordered by descending score; equal scores are ordered by
    ascending column index. Masked entries (-inf) fall behind every finite one.

    Args:
        scores (np.ndarray): (q x m) similarity of q queries to m items.
        targets (np.ndarray): q column indices, one per query.
    Returns:
        np.ndarray: q integer ranks in [1, m].
    """
    rows = np.arange(scores.shape[0])
    target_scores = scores[rows, targets][:, None]
    columns = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target_scores) | (
        (scores == target_scores) & (columns < targets[:, None])
    )
    return ahead.sum(axis=1) + 1


def _ratio(numerator: int, denominator: int) -> float:
    """numerator / denominator with +inf for x/0 (x > 0) and NaN for 0/0."""
    if denominator == 0:
        return math.inf if numerator > 0 else UNDEFINED
    return numerator / denominator


def _encode_float(value: Optional[float]):
    """JSON-safe float: +inf -> "+inf", NaN -> "undefined"."""
    if value is None:
        return None
    if math.isnan(value):
        return "undefined"
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return float(value)


def _decode_float(value) -> Optional[float]:
    if value is None:
        return None
    if value == "undefined":
        return UNDEFINED
    if value in ("+inf", "-inf"):
        return float(value.replace("+", ""))
    return float(value)


def _format_cell(metric: str, value) -> str:
    """Round a metric value the way the tables print it."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "undefined" if value is not None else ""
    if isinstance(value, float) and math.isinf(value):
        return "+inf"
    decimals = REPORT_DECIMALS.get(metric.split("@")[0].lower(), 4)
    if decimals == 0:
        return f"{int(round(value))}"
    return f"{value:.{decimals}f}"


def _format_frame(data_frame: pd.DataFrame) -> pd.DataFrame:
    """
    Apply _format_cell to every column of a metric table.

    The column name (or its last level for MultiIndex columns) selects the rounding.

    Args:
        data_frame (pd.DataFrame): numeric metric table.
    Returns:
        pd.DataFrame: the same table as strings.
    """
    formatted = data_frame.copy().astype(object)
    for column in data_frame.columns:
        metric = column[-1] if isinstance(column, tuple) else column
        formatted[column] = data_frame[column].map(
            lambda value, metric=str(metric): _format_cell(metric, value)
        )
    return formatted


def _report_summary(builder, data_frame: pd.DataFrame) -> list[str]:
    """
    Header block written above every exported table.

    Args:
        builder: the ReportBuilder whose table is being exported.
        data_frame (pd.DataFrame): the table being exported.
    Returns:
        list[str]: summary lines.
    """
    datasets = sorted({report.dataset for report in builder.reports})
    methods = [report.method for report in builder.reports]
    output = [
        " Modality Gap Summary",
        f"{'-'*30}",
        f"• Datasets: {', '.join(datasets)}",
        f"• Methods: {', '.join(dict.fromkeys(methods))}",
        f"• Table: {data_frame.attrs.get('title', 'metrics')}",
    ]
    note = data_frame.attrs.get("note")
    if note:
        output.append(f"• Note: {note}")
    return output
