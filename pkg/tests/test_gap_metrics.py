import itertools
import math

import numpy as np
import pytest
from scipy import linalg, stats

from gapkit.embedding_io import Modality, PairedDataset, stack_mixed
from gapkit.errors import NumericsError, ValidationError
from gapkit.gap_metrics import (
    DistanceMetric,
    MetricReport,
    SignificanceTest,
    centroid_gap,
    compute_report,
    fid,
    heterogeneity_indices,
    mean_ranks,
    mean_squared_gap,
    paired_distance_stats,
    recall_at_k,
    significance_test,
)


def brute_force(Z, n):
    """Top-1 modality, first other-modality rank and partner rank per query."""
    top_same, first_other, partner = [], [], []
    for q in range(2 * n):
        others = sorted((j for j in range(2 * n) if j != q), key=lambda j: (-Z[q] @ Z[j], j))
        is_image = q < n
        top_same.append((others[0] < n) == is_image)
        first_other.append(
            next(rank for rank, j in enumerate(others, 1) if (j < n) != is_image)
        )
        target = q + n if is_image else q - n
        partner.append(others.index(target) + 1)
    return np.array(top_same), np.array(first_other), np.array(partner)


def separated(n=5, d=4, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    X = np.abs(rng.standard_normal((n, d))) * 0.1
    Y = np.abs(rng.standard_normal((n, d))) * 0.1
    X[:, 0] += 10.0
    Y[:, 1] += 10.0
    return PairedDataset.from_arrays(X, Y)


def test_separated_clusters_give_infinite_ratios():
    result = heterogeneity_indices(stack_mixed(separated()))
    assert math.isinf(result.itr) and math.isinf(result.tir)
    assert result.image_image == 5 and result.image_text == 0
    assert result.to_dict()["itr"] == "+inf"


def test_perfect_alignment_gives_zero_ratios():
    dataset = PairedDataset.from_arrays(np.eye(4), np.eye(4))
    result = heterogeneity_indices(stack_mixed(dataset))
    assert result.itr == 0.0 and result.tir == 0.0
    assert result.image_text == 4 and result.text_image == 4


def test_separated_clusters_rank_texts_after_all_images():
    ranks = mean_ranks(stack_mixed(separated(n=6)))
    assert ranks.tmr == 6 and ranks.imr == 6
    assert recall_at_k(stack_mixed(separated(n=6)), ks=(1, 5))[5] == 0.0


def test_perfect_alignment_ranks_and_recall():
    corpus = stack_mixed(PairedDataset.from_arrays(np.eye(3), np.eye(3)))
    ranks = mean_ranks(corpus)
    assert ranks.tmr == 1 and ranks.imr == 1
    assert recall_at_k(corpus, ks=(1,))[1] == 1.0
    assert recall_at_k(corpus, Modality.TEXT, ks=(1,))[1] == 1.0


def test_ranking_metrics_match_exhaustive_sort(rng):
    for _ in range(100):
        n = int(rng.integers(2, 11))
        dataset = PairedDataset.from_arrays(
            rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        )
        corpus = stack_mixed(dataset)
        top_same, first_other, partner = brute_force(corpus.Z, n)

        het = heterogeneity_indices(corpus)
        assert het.image_image == top_same[:n].sum()
        assert het.text_text == top_same[n:].sum()
        assert het.image_image + het.image_text == n
        assert het.text_text + het.text_image == n

        ranks = mean_ranks(corpus)
        np.testing.assert_array_equal(ranks.image_query_ranks, first_other[:n])
        np.testing.assert_array_equal(ranks.text_query_ranks, first_other[n:])
        assert ranks.tmr == pytest.approx(first_other[:n].mean(), abs=1e-12)
        assert np.all((ranks.image_query_ranks >= 1) & (ranks.image_query_ranks <= 2 * n - 1))

        ks = [k for k in (1, 2, 5) if k <= 2 * n - 1]
        recall = recall_at_k(corpus, ks=ks)
        for k in ks:
            assert recall[k] == np.mean(partner[:n] <= k)
        values = [recall[k] for k in ks]
        assert values == sorted(values)


def test_ranking_metrics_invariant_under_rotation(rng):
    for _ in range(20):
        dataset = PairedDataset.from_arrays(
            rng.standard_normal((50, 6)), rng.standard_normal((50, 6))
        )
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        rotated = PairedDataset.from_arrays(dataset.X @ Q, dataset.Y @ Q)

        for metric in (heterogeneity_indices, mean_ranks):
            a = metric(stack_mixed(dataset)).to_dict()
            b = metric(stack_mixed(rotated)).to_dict()
            assert a == b
        assert recall_at_k(stack_mixed(dataset)) == recall_at_k(stack_mixed(rotated))


def test_recall_k_out_of_range():
    corpus = stack_mixed(PairedDataset.from_arrays(np.eye(3), np.eye(3)))
    with pytest.raises(ValidationError, match="out of range"):
        recall_at_k(corpus, ks=(6,))
    with pytest.raises(ValidationError):
        recall_at_k(corpus, ks=())


def test_single_pair_corpus_rejected():
    corpus = stack_mixed(PairedDataset.from_arrays(np.ones((1, 2)), np.ones((1, 2))))
    with pytest.raises(ValidationError):
        heterogeneity_indices(corpus)


def test_fid_identities(rng):
    X = rng.standard_normal((100, 4))
    Y = rng.standard_normal((100, 4)) * 2.0 + 1.0
    assert fid(X, X) == pytest.approx(0.0, abs=1e-8)
    assert fid(X, Y) == pytest.approx(fid(Y, X), abs=1e-8)


def test_fid_univariate_closed_form():
    X = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    X = X / X.std(ddof=1)
    assert fid(X, X + 3.0) == pytest.approx(9.0, abs=1e-8)


def test_fid_matches_direct_formula(rng):
    X = rng.standard_normal((100, 4))
    Y = rng.standard_normal((100, 4)) @ rng.standard_normal((4, 4)) + 0.5
    mu_x, mu_y = X.mean(axis=0), Y.mean(axis=0)
    cov_x, cov_y = np.cov(X, rowvar=False), np.cov(Y, rowvar=False)
    cross = linalg.sqrtm(cov_x @ cov_y).real
    expected = np.sum((mu_x - mu_y) ** 2) + np.trace(cov_x + cov_y - 2 * cross)
    assert fid(X, Y) == pytest.approx(expected, abs=1e-8)


def test_fid_needs_shared_dimension(rng):
    with pytest.raises(ValidationError):
        fid(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))


def test_distance_examples():
    same = PairedDataset.from_arrays(np.eye(3) + 0.1, np.eye(3) + 0.1)
    for metric in DistanceMetric:
        assert paired_distance_stats(same, metric).paired_mean == pytest.approx(0.0, abs=1e-12)

    pair = PairedDataset.from_arrays(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert paired_distance_stats(pair, "cosine").per_pair[0] == pytest.approx(1.0)
    assert paired_distance_stats(pair, "sqeuclidean").per_pair[0] == pytest.approx(2.0)


def test_distance_stats_match_double_loop(rng):
    X = rng.standard_normal((5, 3))
    Y = rng.standard_normal((5, 3))
    stats = paired_distance_stats(PairedDataset.from_arrays(X, Y), DistanceMetric.EUCLIDEAN)
    loop = np.array([[np.linalg.norm(x - y) for y in Y] for x in X])

    np.testing.assert_allclose(stats.per_pair, np.diag(loop), atol=1e-12)
    assert stats.cross_mean == pytest.approx(loop.mean(), abs=1e-12)
    off = loop[~np.eye(5, dtype=bool)].reshape(5, 4).mean(axis=1)
    np.testing.assert_allclose(stats.per_query_cross, off, atol=1e-12)

    excluded = paired_distance_stats(PairedDataset.from_arrays(X, Y), "euclidean", True)
    assert excluded.cross_mean == pytest.approx(loop[~np.eye(5, dtype=bool)].mean(), abs=1e-12)


def test_cosine_distance_rejects_zero_rows():
    dataset = PairedDataset.from_arrays(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))
    with pytest.raises(ValidationError, match="zero-norm row 1"):
        paired_distance_stats(dataset, DistanceMetric.COSINE)


def test_significance_identical_samples():
    values = [0.3, 0.1, 0.7]
    assert significance_test(values, values) == 1.0
    assert significance_test(values, values, SignificanceTest.PAIRED_T) == 1.0


def test_wilcoxon_exact_all_positive():
    before = np.arange(1.0, 11.0) + 1.0
    after = np.arange(1.0, 11.0)
    assert significance_test(before + np.arange(10) * 0.1, after) == pytest.approx(2 / 1024)


def test_wilcoxon_exact_and_approx_agree(rng):
    before = rng.standard_normal(20)
    after = before - 0.4 + rng.standard_normal(20)
    exact = significance_test(before, after, method="exact")
    approx = significance_test(before, after, method="approx")
    assert abs(exact - approx) < 0.02


def sign_enumeration_p_value(differences):
    """Two-sided signed-rank p-value by listing every sign pattern."""
    ranks = stats.rankdata(np.abs(differences))
    observed = ranks[differences > 0].sum()
    sums = np.array(
        [ranks[np.array(signs)].sum() for signs in itertools.product([False, True], repeat=ranks.size)]
    )
    lower = np.mean(sums <= observed + 1e-9)
    upper = np.mean(sums >= observed - 1e-9)
    return min(1.0, 2.0 * min(lower, upper))


@pytest.mark.parametrize(
    "before",
    [
        [2.0, 2.0, 3.0, -1.0, 4.0, 5.0],
        [1.0, -1.0, 1.0, 2.0, -2.0, 3.0, 3.0],
        [0.5, -0.2, 1.5, 0.9, -1.1, 2.2, 0.3, -0.7],
    ],
)
def test_wilcoxon_exact_matches_sign_enumeration(before):
    before = np.array(before)
    p = significance_test(before, np.zeros(before.size), method="exact")
    assert p == pytest.approx(sign_enumeration_p_value(before), abs=1e-12)


def test_paired_t_zero_variance():
    with pytest.raises(NumericsError, match="zero variance"):
        significance_test([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0], SignificanceTest.PAIRED_T)


def test_significance_length_mismatch():
    with pytest.raises(ValidationError):
        significance_test([1.0, 2.0], [1.0, 2.0, 3.0])


def test_centroid_and_mean_squared_gap():
    X = np.array([[1.0, 0.0], [1.0, 2.0]])
    Y = np.array([[0.0, 0.0], [0.0, 2.0]])
    dataset = PairedDataset.from_arrays(X, Y)

    gap = centroid_gap(dataset)
    assert gap.distance == pytest.approx(1.0)
    assert gap.dimension_order[0] == 0
    assert mean_squared_gap(dataset) == pytest.approx(1.0)

    report = compute_report(dataset, "ORIG", "toy", metrics=("centroid",))
    assert set(report.to_dict()) == {"method", "dataset", "centroid_gap", "mean_squared_gap"}
    assert report.mean_squared_gap == pytest.approx(1.0)
    assert MetricReport.from_dict(report.to_dict()).mean_squared_gap == report.mean_squared_gap


def test_report_holds_only_requested_metrics(random_pairs):
    report = compute_report(random_pairs, "ORIG", "rand", metrics=("fid",))
    assert set(report.to_dict()) == {"method", "dataset", "fid"}


def test_report_round_trips_through_dict(random_pairs):
    baseline = PairedDataset.from_arrays(random_pairs.Y, random_pairs.X[::-1].copy())
    report = compute_report(random_pairs, "ORIG", "rand", recall_ks=(1, 5), baseline=baseline)
    record = report.to_dict()
    restored = MetricReport.from_dict(record)

    assert restored.to_dict() == record
    assert "before_vs_after" in record["distances"]["p_values"]


def test_report_rejects_decreasing_recall():
    with pytest.raises(ValidationError):
        MetricReport("ORIG", "x", recall={5: 0.5, 10: 0.4})
