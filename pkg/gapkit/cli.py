"""
cli.py
Command-line orchestration: `gapkit <synth|align|eval|tune-ot|report> [flags]`.

Every command writes its artifacts under --out. JSON artifacts are
deterministic for a given configuration and seed; wall-clock timestamps and
library versions are kept apart in run_metadata.json.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import ot
import pandas as pd
import scipy
import sklearn
from tqdm import tqdm

from gapkit import __version__
from gapkit.aligners import OtAligner, make_aligner
from gapkit.config import (
    Command,
    Method,
    RunConfig,
    configure_logging,
    parse_float_list,
    thread_count,
)
from gapkit.embedding_io import (
    PairedDataset,
    load_paired_dataset,
    normalize_dataset,
    read_manifest,
    save_paired_dataset,
    stack_mixed,
)
from gapkit.errors import GapkitError, NumericsError, ReportError, ValidationError
from gapkit.gap_metrics import (
    DistanceMetric,
    MetricReport,
    SignificanceTest,
    compute_report,
    recall_at_k,
)
from gapkit.numerics import DEFAULT_NULL_TOL, pca_fit
from gapkit.ot_align import DEFAULT_OOS_NEIGHBORS, OtParams, RegMode, save_plan
from gapkit.reporting import ReportBuilder, histogram_frame
from gapkit.spectral_align import WeightMode
from gapkit.synthgen import SynthSpec, generate_paired
from gapkit.utils import file_digest, write_csv, write_json

logger = logging.getLogger(__name__)

DEFAULT_GRID_ETA = "0.1,1,10"
DEFAULT_GRID_LAMBDA = "0.5,1,2"
MIN_VALIDATION_PAIRS = 20
TUNING_K = 5
PLAN_FEASIBILITY_TOL = 1e-8


def _input_digests(manifest: Path) -> dict:
    """Content hashes of a manifest and every file it references."""
    record = read_manifest(manifest)
    digests = {str(manifest): file_digest(manifest)}
    for key in ("images", "texts", "ids"):
        if record.get(key):
            digests[record[key]] = file_digest(record[key])
    return digests


def _dataset_label(manifest: Path, override: Optional[str]) -> str:
    if override:
        return override
    return read_manifest(manifest).get("label") or Path(manifest).resolve().parent.name


def _load(manifest: Path, normalize: bool) -> PairedDataset:
    dataset = load_paired_dataset(manifest)
    return normalize_dataset(dataset) if normalize else dataset


def _write_run_metadata(cfg: RunConfig, started: datetime) -> None:
    write_json(
        cfg.out / "run_metadata.json",
        {
            "command": cfg.command.value,
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "versions": {
                "gapkit": __version__,
                "numpy": np.__version__,
                "pandas": pd.__version__,
                "scipy": scipy.__version__,
                "pot": ot.__version__,
                "scikit-learn": sklearn.__version__,
            },
        },
    )


def cmd_synth(cfg: RunConfig) -> list[Path]:
    """Generate a synthetic paired dataset and write it with a manifest."""
    spec = SynthSpec(
        n=cfg.option("n"),
        d_latent=cfg.option("d_latent"),
        d_embed=cfg.option("d_embed"),
        gap=cfg.option("gap", 0.0),
        noise=cfg.option("noise", 0.0),
        seed=cfg.seed,
        cone=cfg.option("cone"),
        shared_rotation=not cfg.option("distinct_rotations", False),
    )
    dataset = generate_paired(spec)
    label = cfg.label or f"synth-gap{spec.gap:g}-seed{spec.seed}"
    manifest = save_paired_dataset(dataset, cfg.out, label=label, method="ORIG")
    provenance = write_json(
        cfg.out / "provenance.json",
        {
            "command": cfg.command.value,
            "spec": spec.to_dict(),
            "inputs": {},
            "outputs": {
                name: file_digest(cfg.out / name) for name in ("images.npy", "texts.npy")
            },
        },
    )
    return [manifest, provenance]


def cmd_align(cfg: RunConfig) -> list[Path]:
    """
    Align one dataset with ORIG / SPEC / OT / PCA and write the result.

    Writes images.npy, texts.npy, manifest.json, provenance.json and, for OT,
    plan.npz.
    """
    if len(cfg.manifests) != 1:
        raise ValidationError("align takes exactly one --manifest")
    manifest = cfg.manifests[0]
    dataset = _load(manifest, cfg.normalize)
    aligner = make_aligner(cfg)
    aligned = aligner.fit_transform(dataset)
    if isinstance(aligner, OtAligner):
        error = aligner.plan.feasibility_error()
        logger.info("transport plan feasibility error %.3g", error)
        if error > PLAN_FEASIBILITY_TOL:
            raise NumericsError(
                f"transport plan violates its marginals by {error:.3g} "
                f"(limit {PLAN_FEASIBILITY_TOL:g})"
            )

    label = _dataset_label(manifest, cfg.label)
    written = [save_paired_dataset(aligned, cfg.out, label=label, method=aligner.label)]
    outputs = ["images.npy", "texts.npy"]
    if isinstance(aligner, OtAligner):
        written.append(save_plan(aligner.plan, cfg.out / "plan.npz"))
        outputs.append("plan.npz")

    provenance = {
        "command": cfg.command.value,
        "method": aligner.label,
        "params": aligner.params(),
        "normalize": cfg.normalize,
        "inputs": _input_digests(manifest),
        "outputs": {name: file_digest(cfg.out / name) for name in outputs},
    }
    written.append(write_json(cfg.out / "provenance.json", provenance))
    return written


def _scatter_frame(dataset: PairedDataset) -> pd.DataFrame:
    """2-D PCA coordinates of both modalities for a gap scatter plot."""
    corpus = stack_mixed(dataset)
    scores = pca_fit(corpus.Z, 2).scores
    n = dataset.n
    return pd.DataFrame(
        {
            "modality": corpus.labels,
            "pair_index": np.concatenate([np.arange(n), np.arange(n)]),
            "pc1": scores[:, 0],
            "pc2": scores[:, 1],
        }
    )


def cmd_eval(cfg: RunConfig) -> list[Path]:
    """
    Compute the requested metrics for every manifest and write the report.

    Each manifest is one (dataset, method) cell; the method label comes from
    the manifest ("method" key, ORIG when absent).
    """
    if not cfg.manifests:
        raise ValidationError("eval needs at least one --manifest")
    baseline_path = cfg.option("baseline")
    baseline = _load(Path(baseline_path), cfg.normalize) if baseline_path else None
    test = SignificanceTest(cfg.option("test", SignificanceTest.WILCOXON))

    def evaluate(manifest: Path) -> tuple[MetricReport, PairedDataset]:
        dataset = _load(manifest, cfg.normalize)
        method = read_manifest(manifest).get("method") or "ORIG"
        report = compute_report(
            dataset,
            method,
            _dataset_label(manifest, cfg.label),
            cfg.metrics,
            cfg.recall_ks,
            cfg.distance_metric,
            bool(cfg.option("exclude_matching", False)),
            baseline,
            test,
        )
        return report, dataset

    with ThreadPoolExecutor(max_workers=min(thread_count(), len(cfg.manifests))) as pool:
        results = list(pool.map(evaluate, cfg.manifests))

    builder = ReportBuilder(
        (report for report, _ in results), out_dir=cfg.out, allow_mixed=True
    )
    several_datasets = len(builder.datasets) > 1
    written = [
        write_json(cfg.out / "report.json", builder.to_dict()),
    ]
    text_path = cfg.out / "report.txt"
    text_path.write_text(builder.to_text(), encoding="utf-8")
    written.append(text_path)

    tables = {
        "heterogeneity": builder.heterogeneity_table,
        "ranks": builder.rank_table,
        "fid": builder.fid_table,
        "recall": builder.recall_table,
        "distances": builder.distance_table,
    }
    for metric in cfg.metrics:
        if metric in tables:
            tables[metric]()
            written.append(cfg.out / f"{metric}.csv")

    for report, dataset in results:
        stem = f"{report.dataset}_{report.method}" if several_datasets else report.method
        if report.distance_stats is not None:
            written.append(
                write_csv(histogram_frame(report), cfg.out / f"hist_{stem}.csv")
            )
        if cfg.option("scatter", False):
            written.append(
                write_csv(_scatter_frame(dataset), cfg.out / f"scatter_{stem}.csv")
            )
    print(builder.to_text())
    return written


def _grid(cfg: RunConfig) -> list[OtParams]:
    base = cfg.ot_params or OtParams()
    etas = parse_float_list(cfg.option("grid_eta", DEFAULT_GRID_ETA))
    lambda_s = parse_float_list(cfg.option("grid_lambda_s", DEFAULT_GRID_LAMBDA))
    lambda_t = parse_float_list(cfg.option("grid_lambda_t", DEFAULT_GRID_LAMBDA))
    return [
        OtParams(
            eta=eta,
            lambda_s=ls,
            lambda_t=lt,
            sim_k=base.sim_k,
            reg_mode=base.reg_mode,
            max_iters=base.max_iters,
            tol=base.tol,
        )
        for eta, ls, lt in itertools.product(etas, lambda_s, lambda_t)
    ]


def cmd_tune_ot(cfg: RunConfig) -> list[Path]:
    """
    Grid search over (eta, lambda_s, lambda_t): fit on the training pairs,
    score recall@5 of the out-of-sample mapped validation pairs.

    Writes leaderboard.csv (best first) and best_params.json.
    """
    if len(cfg.manifests) != 1:
        raise ValidationError("tune-ot takes exactly one --manifest")
    dataset = _load(cfg.manifests[0], cfg.normalize)
    grid = _grid(cfg)
    if not grid:
        raise ValidationError("empty parameter grid")

    val_fraction = float(cfg.option("val_fraction", 0.2))
    if not 0.0 < val_fraction < 1.0:
        raise ValidationError(f"--val-fraction must lie in (0, 1), got {val_fraction}")
    n_val = int(round(dataset.n * val_fraction))
    if n_val < MIN_VALIDATION_PAIRS:
        raise ValidationError(
            f"validation too small: {n_val} pairs, need >= {MIN_VALIDATION_PAIRS}"
        )
    n_train = dataset.n - n_val
    nn = cfg.option("nn", DEFAULT_OOS_NEIGHBORS)

    def score(params: OtParams) -> dict:
        aligner = OtAligner(params, train_pairs=n_train, nn=nn, seed=cfg.seed)
        aligned = aligner.fit_transform(dataset)
        _, validation = aligner.split(dataset.n)
        recall = recall_at_k(stack_mixed(aligned.subset(validation)), ks=(TUNING_K,))
        return {
            **params.to_dict(),
            f"recall@{TUNING_K}": recall[TUNING_K],
            "objective": aligner.plan.objective_trace[-1],
            "converged": aligner.plan.converged,
        }

    with ThreadPoolExecutor(max_workers=min(thread_count(), len(grid))) as pool:
        rows = list(tqdm(pool.map(score, grid), total=len(grid), desc="tune-ot", disable=None))

    leaderboard = pd.DataFrame(rows)
    leaderboard.insert(0, "cell", np.arange(len(rows)))
    leaderboard = leaderboard.sort_values(
        [f"recall@{TUNING_K}", "cell"], ascending=[False, True], kind="stable"
    ).reset_index(drop=True)
    leaderboard.insert(0, "rank", np.arange(1, len(rows) + 1))

    best = grid[int(leaderboard.loc[0, "cell"])]
    written = [
        write_csv(leaderboard, cfg.out / "leaderboard.csv"),
        write_json(
            cfg.out / "best_params.json",
            {
                "params": best.to_dict(),
                f"recall@{TUNING_K}": float(leaderboard.loc[0, f"recall@{TUNING_K}"]),
                "train_pairs": n_train,
                "validation_pairs": n_val,
                "seed": cfg.seed,
                "inputs": _input_digests(cfg.manifests[0]),
            },
        ),
    ]
    logger.info("best grid cell: %s", best.to_dict())
    return written


def _read_reports(path: Path) -> list[MetricReport]:
    if not path.is_file():
        raise FileNotFoundError(f"report not found: {path}")
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
        return [MetricReport.from_dict(item) for item in record["reports"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ReportError(f"{path} is not a gapkit report: {exc!r}") from exc


def cmd_report(cfg: RunConfig) -> list[Path]:
    """Merge report.json files into comparison.json / .csv / .txt."""
    if not cfg.manifests:
        raise ValidationError("report needs at least one report.json path")
    reports = []
    for path in cfg.manifests:
        reports.extend(_read_reports(Path(path)))

    builder = ReportBuilder(
        reports, out_dir=cfg.out, allow_mixed=bool(cfg.option("allow_mixed", False))
    )
    builder.comparison_table()
    print(builder.to_text())
    return [
        write_json(cfg.out / "comparison.json", builder.to_dict()),
        cfg.out / "comparison.csv",
        cfg.out / "comparison.txt",
    ]


HANDLERS = {
    Command.SYNTH: cmd_synth,
    Command.ALIGN: cmd_align,
    Command.EVAL: cmd_eval,
    Command.TUNE_OT: cmd_tune_ot,
    Command.REPORT: cmd_report,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default="gapkit_out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="count", default=0)


def _add_ot_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eta", type=float, default=1.0)
    parser.add_argument("--lambda-s", type=float, default=1.0)
    parser.add_argument("--lambda-t", type=float, default=1.0)
    parser.add_argument("--sim-k", type=int, default=OtParams.sim_k)
    parser.add_argument(
        "--reg-mode", choices=[mode.value for mode in RegMode], default=RegMode.DISPLACEMENT.value
    )
    parser.add_argument("--max-iters", type=int, default=OtParams.max_iters)
    parser.add_argument("--tol", type=float, default=OtParams.tol)
    parser.add_argument("--nn", type=int, default=DEFAULT_OOS_NEIGHBORS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapkit", description="Measure and close the image-text modality gap."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic paired dataset")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--d-latent", type=int, required=True)
    synth.add_argument("--d-embed", type=int, required=True)
    synth.add_argument("--gap", type=float, default=0.0)
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--cone", type=float, default=None)
    synth.add_argument("--distinct-rotations", action="store_true")
    synth.add_argument("--label")
    _add_common(synth)

    align = commands.add_parser("align", help="align a paired dataset")
    align.add_argument("--manifest", required=True)
    align.add_argument("--method", choices=[m.value for m in Method], required=True)
    align.add_argument("--k", type=int)
    align.add_argument("--train-pairs", type=int)
    align.add_argument("--inverse", action="store_true")
    align.add_argument(
        "--weight-mode",
        choices=[mode.value for mode in WeightMode],
        default=WeightMode.CLAMP_COSINE.value,
    )
    align.add_argument("--null-tol", type=float, default=DEFAULT_NULL_TOL)
    align.add_argument("--knn", type=int)
    align.add_argument("--solver", choices=["auto", "dense", "lanczos"], default="auto")
    align.add_argument("--normalize", action="store_true")
    align.add_argument("--label")
    _add_ot_flags(align)
    _add_common(align)

    evaluate = commands.add_parser("eval", help="compute gap metrics")
    evaluate.add_argument("--manifest", nargs="+", required=True)
    evaluate.add_argument("--metrics", default="all")
    evaluate.add_argument("--recall-k", default="5,10,20")
    evaluate.add_argument("--baseline")
    evaluate.add_argument(
        "--distance-metric",
        choices=[metric.value for metric in DistanceMetric],
        default=DistanceMetric.COSINE.value,
    )
    evaluate.add_argument("--test", choices=[t.value for t in SignificanceTest], default="wilcoxon")
    evaluate.add_argument("--exclude-matching", action="store_true")
    evaluate.add_argument("--scatter", action="store_true")
    evaluate.add_argument("--normalize", action="store_true")
    evaluate.add_argument("--label")
    _add_common(evaluate)

    tune = commands.add_parser("tune-ot", help="grid-search the transport parameters")
    tune.add_argument("--manifest", required=True)
    tune.add_argument("--grid-eta", default=DEFAULT_GRID_ETA)
    tune.add_argument("--grid-lambda-s", default=DEFAULT_GRID_LAMBDA)
    tune.add_argument("--grid-lambda-t", default=DEFAULT_GRID_LAMBDA)
    tune.add_argument("--val-fraction", type=float, default=0.2)
    tune.add_argument("--normalize", action="store_true")
    _add_ot_flags(tune)
    _add_common(tune)

    report = commands.add_parser("report", help="merge metric reports")
    report.add_argument("reports", nargs="+")
    report.add_argument("--allow-mixed", action="store_true")
    _add_common(report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one command and return its exit code
    (0 success, 1 gapkit/file error, 2 usage error raised by argparse).
    """
    namespace = build_parser().parse_args(argv)
    configure_logging(namespace.verbose - namespace.quiet)
    started = datetime.now(timezone.utc)
    try:
        cfg = RunConfig.from_namespace(namespace)
        written = HANDLERS[cfg.command](cfg)
        _write_run_metadata(cfg, started)
    except (GapkitError, OSError) as exc:
        logger.error("gapkit %s failed: %s", namespace.command, exc)
        return 1
    logger.info("wrote %d artifacts to %s", len(written), cfg.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
