import json
import math

import pytest

from gapkit.errors import ReportError
from gapkit.gap_metrics import HeterogeneityResult, MetricReport, compute_report
from gapkit.reporting import ReportBuilder, histogram_frame


@pytest.fixture
def two_reports(random_pairs):
    orig = compute_report(random_pairs, "ORIG", "clip", recall_ks=(1, 5))
    spec = compute_report(random_pairs, "SPEC4", "clip", metrics=("fid", "recall"), recall_ks=(1, 5))
    return [orig, spec]


def test_two_reports_give_two_method_column_groups(two_reports):
    table = ReportBuilder(two_reports).recall_table()

    assert list(table.index) == ["clip"]
    assert list(table.columns.get_level_values("method").unique()) == ["ORIG", "SPEC4"]
    assert ("SPEC4", "Recall@5") in table.columns


def test_missing_metrics_stay_blank(two_reports):
    table = ReportBuilder(two_reports).comparison_table()

    assert ("ORIG", "ITR") in table.columns
    assert ("SPEC4", "ITR") not in table.columns
    assert table.loc["clip", ("SPEC4", "FID")] == two_reports[1].fid
    assert table.loc["clip", ("ORIG", "Mean squared gap")] == two_reports[0].mean_squared_gap
    assert ("SPEC4", "Mean squared gap") not in table.columns


def test_mixed_datasets_need_opt_in(random_pairs):
    reports = [
        compute_report(random_pairs, "ORIG", "clip", metrics=("fid",)),
        compute_report(random_pairs, "ORIG", "blip", metrics=("fid",)),
    ]
    with pytest.raises(ReportError, match="incompatible dataset labels"):
        ReportBuilder(reports)

    table = ReportBuilder(reports, allow_mixed=True).fid_table()
    assert list(table.index) == ["clip", "blip"]
    assert table.loc["blip", ("ORIG", "FID")] == table.loc["clip", ("ORIG", "FID")]


def test_duplicate_and_empty_inputs_rejected(two_reports):
    with pytest.raises(ReportError, match="duplicate"):
        ReportBuilder(two_reports + [two_reports[0]])
    with pytest.raises(ReportError, match="no reports"):
        ReportBuilder([])


def test_builder_dict_survives_json(two_reports):
    record = ReportBuilder(two_reports).to_dict()
    decoded = json.loads(json.dumps(record, allow_nan=False))

    assert decoded == record
    assert decoded["methods"] == ["ORIG", "SPEC4"]
    rebuilt = ReportBuilder(MetricReport.from_dict(r) for r in decoded["reports"])
    assert rebuilt.to_dict() == record


def test_infinite_ratios_print_as_plus_inf():
    report = MetricReport("ORIG", "synth")
    report.fid = 1.23456
    report.heterogeneity = HeterogeneityResult(math.inf, math.inf, 5, 0, 5, 0)
    text = ReportBuilder([report]).to_text()

    assert text.startswith(" Modality Gap Summary")
    assert "+inf" in text
    assert "1.23" in text and "1.2346" not in text


def test_export_writes_csv_and_text(tmp_path, two_reports):
    builder = ReportBuilder(two_reports, out_dir=tmp_path)
    builder.rank_table()

    assert (tmp_path / "ranks.csv").exists()
    lines = (tmp_path / "ranks.txt").read_text().splitlines()
    assert lines[0] == " Modality Gap Summary"
    assert any(line.startswith("• Note: TMR") for line in lines)


def test_no_output_directory_writes_nothing(tmp_path, monkeypatch, two_reports):
    monkeypatch.chdir(tmp_path)
    ReportBuilder(two_reports).comparison_table()
    assert list(tmp_path.iterdir()) == []


def test_histogram_frame(two_reports):
    frame = histogram_frame(two_reports[0])
    assert list(frame.columns) == ["pair_index", "distance"]
    assert len(frame) == 12
    with pytest.raises(ReportError):
        histogram_frame(two_reports[1])
