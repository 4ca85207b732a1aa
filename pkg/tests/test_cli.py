import json

import pandas as pd
import pytest

from gapkit.cli import HANDLERS, build_parser, main
from gapkit.config import Command
from gapkit.embedding_io import load_paired_dataset, read_manifest
from gapkit.ot_align import TransportPlan, load_plan


def synth(out, n=60, gap=5.0, seed=0, label=None):
    argv = [
        "synth", "--n", str(n), "--d-latent", "8", "--d-embed", "24",
        "--gap", str(gap), "--noise", "0.01", "--seed", str(seed), "--out", str(out),
    ]
    if label:
        argv += ["--label", label]
    assert main(argv) == 0
    return out / "manifest.json"


@pytest.fixture
def synth_manifest(tmp_path):
    return synth(tmp_path / "synth")


def test_synth_writes_dataset_and_provenance(tmp_path):
    manifest = synth(tmp_path / "synth", gap=2.5, seed=4)

    record = read_manifest(manifest)
    assert record["label"] == "synth-gap2.5-seed4"
    assert record["method"] == "ORIG"
    assert load_paired_dataset(manifest).n == 60

    provenance = json.loads((tmp_path / "synth" / "provenance.json").read_text())
    assert provenance["spec"]["cone"] == 5.0
    assert provenance["outputs"]["images.npy"].startswith("sha256:")
    assert (tmp_path / "synth" / "run_metadata.json").exists()


def test_synth_is_reproducible(tmp_path):
    synth(tmp_path / "a", seed=9)
    synth(tmp_path / "b", seed=9)
    for name in ("images.npy", "texts.npy", "provenance.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize(
    "flags, label",
    [
        (["--method", "spec", "--k", "8"], "SPEC8"),
        (["--method", "pca", "--k", "4"], "PCA4"),
        (["--method", "orig"], "ORIG"),
    ],
)
def test_align_methods(tmp_path, synth_manifest, flags, label):
    out = tmp_path / "aligned"
    assert main(["align", "--manifest", str(synth_manifest), "--out", str(out), *flags]) == 0

    record = read_manifest(out / "manifest.json")
    assert record["method"] == label
    assert record["label"] == "synth-gap5-seed0"
    provenance = json.loads((out / "provenance.json").read_text())
    assert str(synth_manifest) in provenance["inputs"]


def test_align_spec_with_more_components_than_dimensions(tmp_path):
    manifest = synth(tmp_path / "synth", n=100)
    out = tmp_path / "spec"
    assert main(["align", "--manifest", str(manifest), "--method", "spec", "--k", "120", "--out", str(out)]) == 0

    aligned = load_paired_dataset(out / "manifest.json")
    assert aligned.X.shape == (100, 120) and aligned.Y.shape == (100, 120)


def test_align_ot_writes_a_plan(tmp_path, synth_manifest):
    out = tmp_path / "ot"
    argv = [
        "align", "--manifest", str(synth_manifest), "--method", "ot",
        "--eta", "1", "--sim-k", "5", "--train-pairs", "40", "--out", str(out),
    ]
    assert main(argv) == 0

    plan = load_plan(out / "plan.npz")
    assert plan.gamma.shape == (40, 40)
    assert plan.feasibility_error() <= 1e-8
    assert json.loads((out / "provenance.json").read_text())["params"]["train_pairs"] == 40


def test_align_spec_without_k_fails(tmp_path, synth_manifest):
    argv = ["align", "--manifest", str(synth_manifest), "--method", "spec", "--out", str(tmp_path)]
    assert main(argv) == 1


def test_eval_and_report_pipeline(tmp_path, synth_manifest, capsys):
    spec_out = tmp_path / "spec"
    main(["align", "--manifest", str(synth_manifest), "--method", "spec", "--k", "8", "--out", str(spec_out)])
    eval_out = tmp_path / "eval"

    code = main(
        [
            "eval", "--manifest", str(synth_manifest), str(spec_out / "manifest.json"),
            "--baseline", str(synth_manifest), "--out", str(eval_out),
        ]
    )

    assert code == 0
    report = json.loads((eval_out / "report.json").read_text())
    assert report["methods"] == ["ORIG", "SPEC8"]
    assert report["datasets"] == ["synth-gap5-seed0"]
    orig = report["reports"][0]
    assert orig["heterogeneity"]["itr"] == "+inf"
    assert "before_vs_after" in orig["distances"]["p_values"]
    for name in ("heterogeneity", "ranks", "fid", "recall", "distances"):
        assert (eval_out / f"{name}.csv").exists()
    assert len(pd.read_csv(eval_out / "hist_SPEC8.csv")) == 60
    assert "Modality Gap Summary" in capsys.readouterr().out

    report_out = tmp_path / "merged"
    assert main(["report", str(eval_out / "report.json"), "--out", str(report_out)]) == 0
    merged = json.loads((report_out / "comparison.json").read_text())
    assert merged == report
    assert (report_out / "comparison.csv").exists()


def test_eval_single_metric(tmp_path, synth_manifest):
    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(synth_manifest), "--metrics", "fid", "--out", str(out)]) == 0

    report = json.loads((out / "report.json").read_text())
    assert set(report["reports"][0]) == {"method", "dataset", "fid"}
    assert not list(out.glob("hist_*.csv"))


def test_eval_scatter_export(tmp_path, synth_manifest):
    out = tmp_path / "eval"
    argv = ["eval", "--manifest", str(synth_manifest), "--metrics", "itr", "--scatter", "--out", str(out)]
    assert main(argv) == 0

    scatter = pd.read_csv(out / "scatter_ORIG.csv")
    assert list(scatter.columns) == ["modality", "pair_index", "pc1", "pc2"]
    assert len(scatter) == 120


def test_report_refuses_mixed_datasets(tmp_path):
    reports = []
    for label in ("clip", "blip"):
        manifest = synth(tmp_path / label, label=label)
        out = tmp_path / f"eval-{label}"
        assert main(["eval", "--manifest", str(manifest), "--metrics", "fid", "--out", str(out)]) == 0
        reports.append(str(out / "report.json"))

    assert main(["report", *reports, "--out", str(tmp_path / "merged")]) == 1
    assert main(["report", *reports, "--allow-mixed", "--out", str(tmp_path / "merged")]) == 0
    merged = json.loads((tmp_path / "merged" / "comparison.json").read_text())
    assert merged["datasets"] == ["clip", "blip"]
    assert (tmp_path / "merged" / "comparison.txt").exists()


def test_tune_ot_single_cell_is_deterministic(tmp_path):
    manifest = synth(tmp_path / "synth", n=100)
    boards = []
    for run in ("a", "b"):
        out = tmp_path / run
        argv = [
            "tune-ot", "--manifest", str(manifest), "--grid-eta", "1",
            "--grid-lambda-s", "1", "--grid-lambda-t", "1", "--sim-k", "5",
            "--seed", "2", "--out", str(out),
        ]
        assert main(argv) == 0
        boards.append((out / "leaderboard.csv").read_bytes())

    assert boards[0] == boards[1]
    leaderboard = pd.read_csv(tmp_path / "a" / "leaderboard.csv")
    assert len(leaderboard) == 1
    best = json.loads((tmp_path / "a" / "best_params.json").read_text())
    assert best["params"]["eta"] == 1.0
    assert best["validation_pairs"] == 20


def test_tune_ot_rejects_small_validation(tmp_path, synth_manifest):
    argv = ["tune-ot", "--manifest", str(synth_manifest), "--grid-eta", "1", "--out", str(tmp_path / "t")]
    assert main(argv) == 1


def test_missing_manifest_fails(tmp_path):
    assert main(["eval", "--manifest", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["align", "--manifest", "m.json"],
        ["align", "--manifest", "m.json", "--method", "umap"],
        ["synth", "--n", "ten", "--d-latent", "2", "--d-embed", "4"],
    ],
)
def test_usage_errors_exit_with_code_2(argv):
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(argv)
    assert excinfo.value.code == 2


def test_infeasible_plan_fails_before_writing(tmp_path, synth_manifest, monkeypatch):
    monkeypatch.setattr(TransportPlan, "feasibility_error", lambda self: 1e-3)
    out = tmp_path / "ot"
    argv = ["align", "--manifest", str(synth_manifest), "--method", "ot", "--sim-k", "5", "--out", str(out)]

    assert main(argv) == 1
    assert not (out / "images.npy").exists()
    assert not (out / "plan.npz").exists()


def test_malformed_report_fails(tmp_path):
    broken = tmp_path / "report.json"
    broken.write_text(json.dumps({"reports": [{"dataset": "clip"}]}))
    assert main(["report", str(broken), "--out", str(tmp_path / "merged")]) == 1


def test_unexpected_errors_propagate(tmp_path, monkeypatch):
    def broken_handler(cfg):
        raise KeyError("images")

    monkeypatch.setitem(HANDLERS, Command.SYNTH, broken_handler)
    argv = ["synth", "--n", "10", "--d-latent", "2", "--d-embed", "4", "--out", str(tmp_path)]
    with pytest.raises(KeyError):
        main(argv)
