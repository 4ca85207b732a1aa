"""
gap_metrics.py
Measures of the image-text modality gap.

    heterogeneity_indices   ITR / TIR: same-modality vs cross-modality top-1 neighbours
    mean_ranks              TMR / IMR: rank of the first other-modality item
    recall_at_k             retrieval of the paired item in a mixed corpus
    fid                     Frechet distance between Gaussian fits of both modalities
    paired_distance_stats   matched-pair vs cross-pair distances
    significance_test       paired t-test / Wilcoxon signed-rank test
    centroid_gap            distance between modality centroids
    mean_squared_gap        mean squared norm of the pair differences

Ranking measures use raw dot products on the stacked corpus Z = [X; Y]; an item
never retrieves itself and ties are broken by the lower row index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from gapkit.embedding_io import MixedCorpus, Modality, PairedDataset, stack_mixed
from gapkit.errors import NumericsError, ShapeMismatchError, ValidationError
from gapkit.helpers import (
    _as_array,
    _decode_float,
    _encode_float,
    _masked_similarity,
    _ratio,
    _tie_aware_rank,
)
from gapkit.numerics import gaussian_summary, psd_sqrt

logger = logging.getLogger(__name__)

DEFAULT_RECALL_KS = (5, 10, 20)
EXACT_WILCOXON_MAX_N = 20
MIN_APPROX_WILCOXON_N = 6


class DistanceMetric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    SQEUCLIDEAN = "sqeuclidean"


class SignificanceTest(str, Enum):
    PAIRED_T = "paired-t"
    WILCOXON = "wilcoxon"


@dataclass(frozen=True)
class HeterogeneityResult:
    """
    Top-1 neighbour modality counts and the ITR / TIR ratios.

    itr = image_image / image_text, tir = text_text / text_image;
    +inf when only the numerator is non-zero, NaN ("undefined") for 0/0.
    """

    itr: float
    tir: float
    image_image: int
    image_text: int
    text_text: int
    text_image: int

    def to_dict(self) -> dict:
        return {
            "itr": _encode_float(self.itr),
            "tir": _encode_float(self.tir),
            "counts": {
                "image_image": self.image_image,
                "image_text": self.image_text,
                "text_text": self.text_text,
                "text_image": self.text_image,
            },
        }

    @classmethod
    def from_dict(cls, record: dict) -> "HeterogeneityResult":
        return cls(
            _decode_float(record["itr"]),
            _decode_float(record["tir"]),
            **{key: int(value) for key, value in record["counts"].items()},
        )


@dataclass(frozen=True)
class RankResult:
    """TMR (first text under image queries) and IMR (first image under text queries)."""

    tmr: float
    imr: float
    image_query_ranks: np.ndarray
    text_query_ranks: np.ndarray

    def to_dict(self) -> dict:
        return {
            "tmr": self.tmr,
            "imr": self.imr,
            "image_query_ranks": self.image_query_ranks.tolist(),
            "text_query_ranks": self.text_query_ranks.tolist(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "RankResult":
        return cls(
            float(record["tmr"]),
            float(record["imr"]),
            np.asarray(record.get("image_query_ranks", []), dtype=int),
            np.asarray(record.get("text_query_ranks", []), dtype=int),
        )


@dataclass(frozen=True)
class DistanceStats:
    """
    Matched-pair distances against the all-pairs baseline.

    Attributes:
        metric: distance used
        per_pair: d(x_i, y_i) for every pair (histogram data)
        paired_mean: mean of per_pair
        cross_mean: mean of d(x_i, y_j) over all (i, j), or over i != j when
            exclude_matching is set
        per_query_cross: for each image, mean distance to the non-matching texts
        p_values: named p-values ("paired_vs_cross", and "before_vs_after" when
            a baseline was compared)
    """

    metric: DistanceMetric
    per_pair: np.ndarray
    paired_mean: float
    cross_mean: float
    exclude_matching: bool = False
    per_query_cross: np.ndarray = field(default_factory=lambda: np.empty(0))
    p_values: Mapping[str, float] = field(default_factory=dict)

    def with_p_value(self, name: str, value: float) -> "DistanceStats":
        p_values = dict(self.p_values)
        p_values[name] = value
        return DistanceStats(
            self.metric,
            self.per_pair,
            self.paired_mean,
            self.cross_mean,
            self.exclude_matching,
            self.per_query_cross,
            p_values,
        )

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "paired_mean": self.paired_mean,
            "cross_mean": self.cross_mean,
            "exclude_matching": self.exclude_matching,
            "per_pair": self.per_pair.tolist(),
            "p_values": {key: _encode_float(value) for key, value in self.p_values.items()},
        }

    @classmethod
    def from_dict(cls, record: dict) -> "DistanceStats":
        return cls(
            DistanceMetric(record["metric"]),
            np.asarray(record.get("per_pair", []), dtype=float),
            float(record["paired_mean"]),
            float(record["cross_mean"]),
            bool(record.get("exclude_matching", False)),
            p_values={
                key: _decode_float(value)
                for key, value in record.get("p_values", {}).items()
            },
        )


@dataclass(frozen=True)
class CentroidGap:
    """Distance between modality means and the per-dimension gaps, largest first."""

    distance: float
    dimension_gaps: np.ndarray
    dimension_order: np.ndarray


@dataclass
class MetricReport:
    """
    Metric values of one (dataset, method) cell; unset metrics stay None.
    """

    method: str
    dataset: str
    heterogeneity: Optional[HeterogeneityResult] = None
    ranks: Optional[RankResult] = None
    fid: Optional[float] = None
    distance_stats: Optional[DistanceStats] = None
    recall: Optional[dict[int, float]] = None
    centroid_gap: Optional[float] = None
    mean_squared_gap: Optional[float] = None

    def __post_init__(self):
        if self.recall is not None:
            values = [self.recall[k] for k in sorted(self.recall)]
            if any(not 0.0 <= value <= 1.0 for value in values):
                raise ValidationError("recall values must lie in [0, 1]")
            if any(later < earlier for earlier, later in zip(values, values[1:])):
                raise ValidationError("recall must be non-decreasing in K")

    def to_dict(self) -> dict:
        record = {"method": self.method, "dataset": self.dataset}
        if self.heterogeneity is not None:
            record["heterogeneity"] = self.heterogeneity.to_dict()
        if self.ranks is not None:
            record["ranks"] = self.ranks.to_dict()
        if self.fid is not None:
            record["fid"] = self.fid
        if self.distance_stats is not None:
            record["distances"] = self.distance_stats.to_dict()
        if self.recall is not None:
            record["recall"] = {str(k): self.recall[k] for k in sorted(self.recall)}
        if self.centroid_gap is not None:
            record["centroid_gap"] = self.centroid_gap
        if self.mean_squared_gap is not None:
            record["mean_squared_gap"] = self.mean_squared_gap
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "MetricReport":
        return cls(
            method=record["method"],
            dataset=record["dataset"],
            heterogeneity=(
                HeterogeneityResult.from_dict(record["heterogeneity"])
                if "heterogeneity" in record
                else None
            ),
            ranks=RankResult.from_dict(record["ranks"]) if "ranks" in record else None,
            fid=record.get("fid"),
            distance_stats=(
                DistanceStats.from_dict(record["distances"])
                if "distances" in record
                else None
            ),
            recall=(
                {int(k): float(v) for k, v in record["recall"].items()}
                if "recall" in record
                else None
            ),
            centroid_gap=record.get("centroid_gap"),
            mean_squared_gap=record.get("mean_squared_gap"),
        )


def _check_corpus(corpus: MixedCorpus) -> None:
    if corpus.n < 2:
        raise ValidationError("ranking metrics need at least 2 pairs")


def heterogeneity_indices(corpus: MixedCorpus) -> HeterogeneityResult:
    """
    Count the modality of every item's top-1 neighbour (self excluded).

    Args:
        corpus (MixedCorpus): stacked images and texts, n >= 2.
    Returns:
        HeterogeneityResult
    """
    _check_corpus(corpus)
    similarity = _masked_similarity(np.asarray(corpus.Z))
    top = np.argmax(similarity, axis=1)
    top_is_image = corpus.is_image[top]
    n = corpus.n

    image_image = int(np.count_nonzero(top_is_image[:n]))
    text_image = int(np.count_nonzero(top_is_image[n:]))
    image_text = n - image_image
    text_text = n - text_image
    return HeterogeneityResult(
        itr=_ratio(image_image, image_text),
        tir=_ratio(text_text, text_image),
        image_image=image_image,
        image_text=image_text,
        text_text=text_text,
        text_image=text_image,
    )


def mean_ranks(corpus: MixedCorpus) -> RankResult:
    """
    Rank of the best-ranked other-modality item in the full mixed ranking.

    For image queries the 2n-1 other items are sorted by similarity and the
    1-based position of the first text is recorded; TMR is the mean. IMR does
    the same for text queries and the first image.
    """
    _check_corpus(corpus)
    similarity = _masked_similarity(np.asarray(corpus.Z))
    n = corpus.n

    image_rows = similarity[:n]
    best_text = n + np.argmax(image_rows[:, n:], axis=1)
    image_query_ranks = _tie_aware_rank(image_rows, best_text)

    text_rows = similarity[n:]
    best_image = np.argmax(text_rows[:, :n], axis=1)
    text_query_ranks = _tie_aware_rank(text_rows, best_image)

    return RankResult(
        tmr=float(image_query_ranks.mean()),
        imr=float(text_query_ranks.mean()),
        image_query_ranks=image_query_ranks,
        text_query_ranks=text_query_ranks,
    )


def partner_ranks(corpus: MixedCorpus, query_modality: Modality = Modality.IMAGE) -> np.ndarray:
    """1-based rank of each query's paired item among the other 2n-1 items."""
    _check_corpus(corpus)
    similarity = _masked_similarity(np.asarray(corpus.Z))
    n = corpus.n
    rows = np.arange(n) if Modality(query_modality) is Modality.IMAGE else np.arange(n, 2 * n)
    return _tie_aware_rank(similarity[rows], corpus.pair_of[rows])


def recall_at_k(
    corpus: MixedCorpus,
    query_modality: Modality = Modality.IMAGE,
    ks: Iterable[int] = DEFAULT_RECALL_KS,
) -> dict[int, float]:
    """
    Fraction of queries whose single paired item is in the top K.

    Args:
        corpus (MixedCorpus): stacked images and texts.
        query_modality (Modality): IMAGE or TEXT queries.
        ks (Iterable[int]): cut-offs, each in [1, 2n-1].
    Returns:
        dict[int, float]: recall per K.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise ValidationError("at least one K is required")
    limit = 2 * corpus.n - 1
    for k in ks:
        if not 1 <= k <= limit:
            raise ValidationError(f"K={k} out of range [1, {limit}]")
    ranks = partner_ranks(corpus, query_modality)
    return {k: float(np.mean(ranks <= k)) for k in ks}


def fid(X, Y) -> float:
    """
    Squared Frechet distance between Gaussian fits of two embedding sets:

        ||mu_I - mu_T||^2 + Tr(S_I + S_T - 2 (S_I^{1/2} S_T S_I^{1/2})^{1/2})

    Returns:
        float: non-negative value (labelled FID in reports).
    """
    X, Y = _as_array(X), _as_array(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ShapeMismatchError("dimension mismatch between the two embedding sets")
    image = gaussian_summary(X)
    text = gaussian_summary(Y)

    root_image = psd_sqrt(image.covariance)
    cross = root_image @ text.covariance @ root_image
    cross_root = psd_sqrt((cross + cross.T) / 2.0)

    mean_term = float(np.sum((image.mean - text.mean) ** 2))
    trace_term = float(
        np.trace(image.covariance) + np.trace(text.covariance) - 2.0 * np.trace(cross_root)
    )
    return max(mean_term + trace_term, 0.0)


def _distance_matrix(X: np.ndarray, Y: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    if metric is DistanceMetric.COSINE:
        for name, matrix in (("images", X), ("texts", Y)):
            zero_rows = np.flatnonzero(np.linalg.norm(matrix, axis=1) == 0.0)
            if zero_rows.size:
                raise ValidationError(f"zero-norm row {int(zero_rows[0])} in {name}")
    return cdist(X, Y, metric=metric.value)


def paired_distance_stats(
    dataset: PairedDataset,
    metric: DistanceMetric = DistanceMetric.COSINE,
    exclude_matching: bool = False,
) -> DistanceStats:
    """
    Distances of matched pairs compared with distances across all pairs.

    Args:
        dataset (PairedDataset): paired embeddings.
        metric (DistanceMetric): cosine (1 - cos), Euclidean or squared Euclidean.
        exclude_matching (bool): leave the matched pairs out of the cross mean.
    Returns:
        DistanceStats: includes a Wilcoxon p-value for "matched pairs are closer
        than the mean non-matching distance" when n >= 2.
    """
    metric = DistanceMetric(metric)
    distances = _distance_matrix(dataset.X, dataset.Y, metric)
    n = dataset.n
    per_pair = np.diag(distances).copy()

    if exclude_matching and n > 1:
        cross_mean = float(distances[~np.eye(n, dtype=bool)].mean())
    else:
        cross_mean = float(distances.mean())

    p_values = {}
    per_query_cross = np.empty(0)
    if n > 1:
        per_query_cross = (distances.sum(axis=1) - per_pair) / (n - 1)
        p_values["paired_vs_cross"] = significance_test(
            per_query_cross, per_pair, SignificanceTest.WILCOXON
        )
    return DistanceStats(
        metric,
        per_pair,
        float(per_pair.mean()),
        cross_mean,
        exclude_matching,
        per_query_cross,
        p_values,
    )


def mean_squared_gap(dataset: PairedDataset) -> float:
    """(1/n) ||X - Y||_F^2, the mean squared norm of the pair differences."""
    return float(np.sum((dataset.X - dataset.Y) ** 2) / dataset.n)


def centroid_gap(dataset: PairedDataset) -> CentroidGap:
    """Gap between the modality centroids, overall and per embedding dimension."""
    difference = np.abs(dataset.X.mean(axis=0) - dataset.Y.mean(axis=0))
    order = np.argsort(-difference, kind="stable")
    return CentroidGap(float(np.linalg.norm(difference)), difference[order], order)


def _wilcoxon_exact(doubled_ranks: np.ndarray, statistic: int) -> float:
    """
    Two-sided exact p-value of the signed-rank statistic.

    Counts, over all 2^n sign patterns, how often the positive rank sum is as
    extreme as observed. Ranks are doubled so mid-ranks stay integers.
    """
    counts = np.zeros(int(doubled_ranks.sum()) + 1)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[:-rank]
        counts = counts + shifted
    probabilities = counts / counts.sum()
    lower = probabilities[: statistic + 1].sum()
    upper = probabilities[statistic:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def _wilcoxon_approx(ranks: np.ndarray, positive_sum: float) -> float:
    """Normal approximation with tie and continuity corrections."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if variance <= 0:
        return 1.0
    z = max(abs(positive_sum - mean) - 0.5, 0.0) / math.sqrt(variance)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))


def significance_test(
    before: Sequence[float],
    after: Sequence[float],
    test: SignificanceTest = SignificanceTest.WILCOXON,
    method: str = "auto",
) -> float:
    """
    Two-sided p-value for a zero mean (t-test) or zero median (Wilcoxon)
    of the paired differences before - after.

    Args:
        before, after: paired samples of equal length.
        test (SignificanceTest): PAIRED_T or WILCOXON.
        method (str): Wilcoxon only; "exact" enumerates sign patterns,
            "approx" uses the normal approximation, "auto" is exact for
            at most 20 non-zero differences.
    Returns:
        float: p-value; 1.0 when every difference is exactly zero.
    Raises:
        NumericsError: paired t-test on differences with zero variance.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape or before.ndim != 1:
        raise ShapeMismatchError(
            f"paired samples differ in shape: {before.shape} vs {after.shape}"
        )
    if before.size < 2:
        raise ValidationError("a paired test needs at least 2 pairs")
    differences = before - after
    if not np.any(differences):
        return 1.0

    if SignificanceTest(test) is SignificanceTest.PAIRED_T:
        if np.all(differences == differences[0]):
            raise NumericsError("zero variance in the paired differences")
        return float(stats.ttest_rel(before, after).pvalue)

    differences = differences[differences != 0]
    ranks = stats.rankdata(np.abs(differences))
    positive_sum = float(ranks[differences > 0].sum())
    if method == "auto":
        method = "exact" if differences.size <= EXACT_WILCOXON_MAX_N else "approx"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(int)
        return _wilcoxon_exact(doubled, int(round(2 * positive_sum)))
    if method == "approx":
        if differences.size < MIN_APPROX_WILCOXON_N:
            raise ValidationError(
                f"normal approximation needs >= {MIN_APPROX_WILCOXON_N} non-zero differences"
            )
        return _wilcoxon_approx(ranks, positive_sum)
    raise ValidationError(f"unknown Wilcoxon method '{method}'")


def compute_report(
    dataset: PairedDataset,
    method: str,
    dataset_label: str,
    metrics: Iterable[str] = ("heterogeneity", "ranks", "fid", "distances", "recall", "centroid"),
    recall_ks: Iterable[int] = DEFAULT_RECALL_KS,
    distance_metric: DistanceMetric = DistanceMetric.COSINE,
    exclude_matching: bool = False,
    baseline: Optional[PairedDataset] = None,
    test: SignificanceTest = SignificanceTest.WILCOXON,
) -> MetricReport:
    """
    Compute the requested metric groups of one (dataset, method) cell.

    Args:
        dataset (PairedDataset): embeddings to evaluate.
        method (str): method label (ORIG, SPEC60, ...).
        dataset_label (str): dataset / encoder label.
        metrics (Iterable[str]): subset of heterogeneity, ranks, fid,
            distances, recall, centroid.
        recall_ks (Iterable[int]): cut-offs for recall@K.
        distance_metric (DistanceMetric): metric of the distance statistics.
        exclude_matching (bool): leave matched pairs out of the cross mean.
        baseline (PairedDataset, optional): unaligned pairs; adds a
            "before_vs_after" p-value on the per-pair distances.
        test (SignificanceTest): test used for the before/after comparison.
    Returns:
        MetricReport
    """
    metrics = set(metrics)
    report = MetricReport(method=method, dataset=dataset_label)
    needs_corpus = metrics & {"heterogeneity", "ranks", "recall"}
    corpus = stack_mixed(dataset) if needs_corpus else None

    if "heterogeneity" in metrics:
        report.heterogeneity = heterogeneity_indices(corpus)
    if "ranks" in metrics:
        report.ranks = mean_ranks(corpus)
    if "recall" in metrics:
        report.recall = recall_at_k(corpus, Modality.IMAGE, recall_ks)
    if "fid" in metrics:
        report.fid = fid(dataset.X, dataset.Y)
    if "centroid" in metrics:
        report.centroid_gap = centroid_gap(dataset).distance
        report.mean_squared_gap = mean_squared_gap(dataset)
    if "distances" in metrics:
        stats_ = paired_distance_stats(dataset, distance_metric, exclude_matching)
        if baseline is not None:
            if baseline.n != dataset.n:
                raise ShapeMismatchError(
                    f"pair count mismatch: baseline has {baseline.n} pairs, "
                    f"aligned set {dataset.n}"
                )
            before = paired_distance_stats(baseline, distance_metric).per_pair
            stats_ = stats_.with_p_value(
                "before_vs_after", significance_test(before, stats_.per_pair, test)
            )
        report.distance_stats = stats_
    logger.info("evaluated %s on %s: %s", method, dataset_label, ", ".join(sorted(metrics)))
    return report
