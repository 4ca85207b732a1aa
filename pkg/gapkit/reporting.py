"""
reporting.py
Comparison tables built from MetricReport records.

Every table has one row per dataset (encoder) and two-level columns
(method, metric), so ORIG, OT, SPEC{k} and PCA{k} line up side by side.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd

from gapkit.errors import ReportError
from gapkit.gap_metrics import MetricReport
from gapkit.helpers import _format_frame, _report_summary
from gapkit.utils import export_table

logger = logging.getLogger(__name__)

RANK_NOTE = (
    "TMR = mean rank of the first text under image queries; "
    "IMR = mean rank of the first image under text queries"
)


def _heterogeneity_cells(report: MetricReport) -> dict:
    if report.heterogeneity is None:
        return {}
    return {"ITR": report.heterogeneity.itr, "TIR": report.heterogeneity.tir}


def _rank_cells(report: MetricReport) -> dict:
    if report.ranks is None:
        return {}
    return {"TMR": report.ranks.tmr, "IMR": report.ranks.imr}


def _fid_cells(report: MetricReport) -> dict:
    return {} if report.fid is None else {"FID": report.fid}


def _recall_cells(report: MetricReport) -> dict:
    if report.recall is None:
        return {}
    return {f"Recall@{k}": report.recall[k] for k in sorted(report.recall)}


def _distance_cells(report: MetricReport) -> dict:
    stats = report.distance_stats
    if stats is None:
        return {}
    cells = {"Paired mean": stats.paired_mean, "Cross mean": stats.cross_mean}
    for name in sorted(stats.p_values):
        cells[f"p {name}"] = stats.p_values[name]
    return cells


def _centroid_cells(report: MetricReport) -> dict:
    cells = {}
    if report.centroid_gap is not None:
        cells["Centroid gap"] = report.centroid_gap
    if report.mean_squared_gap is not None:
        cells["Mean squared gap"] = report.mean_squared_gap
    return cells


CELL_GROUPS = (
    _heterogeneity_cells,
    _rank_cells,
    _fid_cells,
    _recall_cells,
    _distance_cells,
    _centroid_cells,
)


def histogram_frame(report: MetricReport) -> pd.DataFrame:
    """Per-pair distances as (pair_index, distance) rows, ready for plotting."""
    if report.distance_stats is None:
        raise ReportError(f"report {report.method} has no distance statistics")
    distances = report.distance_stats.per_pair
    return pd.DataFrame({"pair_index": np.arange(distances.size), "distance": distances})


class ReportBuilder:
    """
    Collects MetricReports and lays them out as comparison tables.

    Each table method is wrapped by `export_table`, so when `out_dir` is set
    the table is also written as `<name>.csv` and `<name>.txt`.
    """

    def __init__(
        self,
        reports: Iterable[MetricReport],
        out_dir=None,
        allow_mixed: bool = False,
    ):
        self.reports = list(reports)
        self.out_dir = out_dir
        if not self.reports:
            raise ReportError("no reports to merge")

        datasets = sorted({report.dataset for report in self.reports})
        if len(datasets) > 1 and not allow_mixed:
            raise ReportError(
                f"incompatible dataset labels {datasets}; pass --allow-mixed to merge them"
            )
        seen = set()
        for report in self.reports:
            key = (report.dataset, report.method)
            if key in seen:
                raise ReportError(f"duplicate report for dataset {key[0]}, method {key[1]}")
            seen.add(key)

    @property
    def datasets(self) -> list[str]:
        return list(dict.fromkeys(report.dataset for report in self.reports))

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(report.method for report in self.reports))

    def _table(
        self,
        groups: Iterable[Callable[[MetricReport], dict]],
        title: str,
        note: Optional[str] = None,
    ) -> pd.DataFrame:
        """
        Build a (dataset x (method, metric)) table from the selected cell groups.

        Cells a report does not carry stay None and print as blanks.
        """
        rows: dict[str, dict] = {dataset: {} for dataset in self.datasets}
        columns: list[tuple[str, str]] = []
        groups = list(groups)
        for report in self.reports:
            for group in groups:
                for metric, value in group(report).items():
                    column = (report.method, metric)
                    if column not in columns:
                        columns.append(column)
                    rows[report.dataset][column] = value

        # columns grouped by method in first-seen order
        order = {method: i for i, method in enumerate(self.methods)}
        columns.sort(key=lambda column: order[column[0]])
        data = [[rows[dataset].get(column) for column in columns] for dataset in self.datasets]
        table = pd.DataFrame(
            data,
            index=pd.Index(self.datasets, name="dataset"),
            columns=pd.MultiIndex.from_arrays(
                [[c[0] for c in columns], [c[1] for c in columns]],
                names=["method", "metric"],
            ),
            dtype=object,
        )
        table.attrs["title"] = title
        if note:
            table.attrs["note"] = note
        return table

    @export_table("heterogeneity")
    def heterogeneity_table(self) -> pd.DataFrame:
        return self._table([_heterogeneity_cells], "ITR / TIR heterogeneity indices")

    @export_table("ranks")
    def rank_table(self) -> pd.DataFrame:
        return self._table([_rank_cells], "TMR / IMR mean ranks", RANK_NOTE)

    @export_table("fid")
    def fid_table(self) -> pd.DataFrame:
        return self._table([_fid_cells], "FID between modality distributions")

    @export_table("recall")
    def recall_table(self) -> pd.DataFrame:
        return self._table([_recall_cells], "Recall@K on the mixed corpus (image queries)")

    @export_table("distances")
    def distance_table(self) -> pd.DataFrame:
        return self._table([_distance_cells], "Paired vs cross-pair distances")

    @export_table("comparison")
    def comparison_table(self) -> pd.DataFrame:
        """Every metric of every report in one table."""
        return self._table(CELL_GROUPS, "Method comparison", RANK_NOTE)

    def to_dict(self) -> dict:
        return {
            "datasets": self.datasets,
            "methods": self.methods,
            "reports": [report.to_dict() for report in self.reports],
        }

    def to_text(self) -> str:
        """The comparison table as printed by the CLI."""
        table = self._table(CELL_GROUPS, "Method comparison", RANK_NOTE)
        lines = _report_summary(self, table)
        return "\n".join(lines) + "\n\n" + _format_frame(table).to_string() + "\n"
