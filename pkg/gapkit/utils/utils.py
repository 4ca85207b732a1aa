"""
utils.py
Utility functions for writing gapkit artifacts.
"""

import hashlib
import json
import logging
from functools import wraps
from pathlib import Path

import pandas as pd

from gapkit.helpers import _format_frame, _report_summary

logger = logging.getLogger(__name__)

DIGEST_CHUNK = 1 << 20


def export_table(stem: str):
    """
    Decorator to save the table returned by a ReportBuilder method.

    The decorated method's DataFrame is written as `<stem>.csv` (full
    precision) and `<stem>.txt` (summary header plus the rounded table)
    inside the builder's output directory. Nothing is written when the
    builder has no output directory.
    Args:
        stem (str): file name without extension.
    Returns:
        callable: decorator returning the wrapped method.
    """

    def decorator(func):
        @wraps(func)
        def wrapper(builder, *args, **kwargs):
            data_frame = func(builder, *args, **kwargs)
            if builder.out_dir is None:
                return data_frame

            out_dir = Path(builder.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = out_dir / f"{stem}.csv"
            data_frame.to_csv(csv_path)
            logger.info("saved CSV to %s", csv_path)

            summary_lines = _report_summary(builder, data_frame)
            text_path = out_dir / f"{stem}.txt"
            with open(text_path, "w", encoding="utf-8") as file:
                for line in summary_lines:
                    file.write(line + "\n")
                file.write("\n")
                file.write(_format_frame(data_frame).to_string() + "\n")
            logger.info("saved table to %s", text_path)
            return data_frame

        return wrapper

    return decorator


def write_json(path, record) -> Path:
    """Write `record` with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(record, indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    logger.info("saved JSON to %s", path)
    return path


def write_csv(data_frame: pd.DataFrame, path, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data_frame.to_csv(path, index=index)
    logger.info("saved CSV to %s", path)
    return path


def file_digest(path) -> str:
    """'sha256:<hex>' digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(DIGEST_CHUNK), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"
