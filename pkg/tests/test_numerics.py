import numpy as np
import pytest
from scipy import linalg
from scipy.spatial.distance import pdist

from gapkit.errors import NumericsError, SpectrumError, ValidationError
from gapkit.numerics import (
    SimilarityMetric,
    gaussian_summary,
    pairwise_sq_euclidean,
    pca_fit,
    pca_fit_transform,
    psd_sqrt,
    similarity_matrix,
    smallest_eigenpairs,
)


def random_bipartite(rng, n):
    weights = rng.uniform(0.1, 1.0, size=(n, n))
    zeros = np.zeros((n, n))
    adjacency = np.block([[zeros, weights], [weights.T, zeros]])
    degrees = adjacency.sum(axis=1)
    return np.diag(degrees) - adjacency, degrees


def test_similarity_matrix_metrics():
    A = np.array([[2.0, 0.0], [1.0, 1.0]])
    B = np.array([[0.0, 3.0], [1.0, 0.0]])

    np.testing.assert_allclose(similarity_matrix(A, B), [[0.0, 2.0], [3.0, 1.0]])
    np.testing.assert_allclose(
        similarity_matrix(A, B, SimilarityMetric.COSINE),
        [[0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]],
    )


def test_cosine_similarity_rejects_zero_rows():
    with pytest.raises(ValidationError, match="zero-norm row 1"):
        similarity_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2), "cosine")


def test_pairwise_sq_euclidean_identical_rows_are_zero(rng):
    X = rng.standard_normal((5, 3))
    distances = pairwise_sq_euclidean(X, X)
    np.testing.assert_array_equal(np.diag(distances), 0.0)
    assert distances[0, 1] == pytest.approx(np.sum((X[0] - X[1]) ** 2))


def test_smallest_eigenpairs_match_dense_generalized_solver(rng):
    for _ in range(20):
        n = int(rng.integers(3, 9))
        L, degrees = random_bipartite(rng, n)
        k = 3

        result = smallest_eigenpairs(L, k, mass=degrees)
        values, vectors = linalg.eigh(L, np.diag(degrees))

        np.testing.assert_allclose(result.eigenvalues, values[1 : k + 1], atol=1e-8)
        angles = linalg.subspace_angles(result.eigenvectors, vectors[:, 1 : k + 1])
        assert angles.max() < 1e-6
        assert result.residuals.max() <= 1e-8
        gram = result.eigenvectors.T @ (degrees[:, None] * result.eigenvectors)
        np.testing.assert_allclose(gram, np.eye(k), atol=1e-8)


def test_lanczos_agrees_with_dense(rng):
    L, degrees = random_bipartite(rng, 20)
    dense = smallest_eigenpairs(L, 4, mass=degrees, solver="dense")
    lanczos = smallest_eigenpairs(L, 4, mass=degrees, solver="lanczos")
    np.testing.assert_allclose(lanczos.eigenvalues, dense.eigenvalues, atol=1e-8)


def test_identity_mass_is_standard_problem():
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    result = smallest_eigenpairs(L, 1)
    assert result.eigenvalues[0] == pytest.approx(2.0)


def test_too_many_eigenpairs_requested(rng):
    L, degrees = random_bipartite(rng, 3)
    with pytest.raises(SpectrumError, match="not enough non-null eigenvalues"):
        smallest_eigenpairs(L, 6, mass=degrees)


def test_non_symmetric_matrix_rejected():
    with pytest.raises(ValidationError, match="not symmetric"):
        smallest_eigenpairs(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)


def test_non_positive_mass_rejected():
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(ValidationError, match="non-positive mass entry at row 1"):
        smallest_eigenpairs(L, 1, mass=[1.0, 0.0])


def test_psd_sqrt_squares_back(rng):
    A = rng.standard_normal((5, 5))
    S = A @ A.T
    root = psd_sqrt(S)
    np.testing.assert_allclose(root @ root, S, atol=1e-10)
    np.testing.assert_allclose(root, root.T)


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(NumericsError, match="not PSD"):
        psd_sqrt(np.diag([1.0, -1.0]))


def test_gaussian_summary_uses_unbiased_covariance():
    data = np.array([[0.0], [2.0]])
    summary = gaussian_summary(data)
    assert summary.mean[0] == 1.0
    assert summary.covariance[0, 0] == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        gaussian_summary(data[:1])


def test_pca_fit_is_sign_deterministic(rng):
    Z = rng.standard_normal((40, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    projection = pca_fit(Z, 3)

    assert projection.scores.shape == (40, 3)
    assert np.all(np.diff(projection.explained_variance) <= 0)
    pivots = np.argmax(np.abs(projection.components), axis=1)
    assert np.all(projection.components[np.arange(3), pivots] > 0)

    flipped = pca_fit(-Z, 3)
    np.testing.assert_allclose(np.abs(flipped.scores), np.abs(projection.scores), atol=1e-10)


def test_pca_fit_k_out_of_range(rng):
    with pytest.raises(ValidationError):
        pca_fit(rng.standard_normal((4, 3)), 4)


def disjoint_edges(count):
    """Laplacian of `count` disjoint unit edges: eigenvalues 0 and 2, each `count` times."""
    return linalg.block_diag(*[np.array([[1.0, -1.0], [-1.0, 1.0]])] * count)


def test_lanczos_reaches_the_largest_eigenvalue():
    result = smallest_eigenpairs(disjoint_edges(3), 3, solver="lanczos")
    np.testing.assert_allclose(result.eigenvalues, [2.0, 2.0, 2.0], atol=1e-10)
    assert result.residuals.max() <= 1e-8


def test_spectrum_error_counts_computed_nulls():
    with pytest.raises(SpectrumError, match="3 of 6 computed eigenvalues below"):
        smallest_eigenpairs(disjoint_edges(3), 4, solver="lanczos")


def test_pca_matches_covariance_eigendecomposition(rng):
    Z = rng.standard_normal((30, 5))
    projection = pca_fit(Z, 2)

    variances, directions = linalg.eigh(np.cov(Z, rowvar=False))
    top = np.argsort(variances)[::-1][:2]
    oracle = (Z - Z.mean(axis=0)) @ directions[:, top]
    signs = np.sign(np.sum(oracle * projection.scores, axis=0))

    np.testing.assert_allclose(projection.scores, oracle * signs, atol=1e-8)
    np.testing.assert_allclose(projection.explained_variance, variances[top], atol=1e-10)
    np.testing.assert_allclose(pca_fit_transform(Z, 2), projection.scores)


def test_full_pca_preserves_distances(rng):
    Z = rng.standard_normal((20, 4))
    scores = pca_fit_transform(Z, 4)
    np.testing.assert_allclose(pdist(scores), pdist(Z), atol=1e-8)


def test_pca_components_are_orthonormal(rng):
    Z = rng.standard_normal((40, 8)) @ rng.standard_normal((8, 8))
    components = pca_fit(Z, 5).components
    np.testing.assert_allclose(components @ components.T, np.eye(5), atol=1e-10)


def test_pca_of_collinear_points():
    t = np.array([-2.0, -0.5, 0.0, 1.0, 4.0])
    direction = np.array([0.6, 0.8])
    Z = np.array([3.0, -1.0]) + t[:, None] * direction

    projection = pca_fit(Z, 1)
    centred = t - t.mean()

    np.testing.assert_allclose(np.abs(projection.scores[:, 0]), np.abs(centred), atol=1e-12)
    assert abs(np.sum(projection.scores[:, 0] * centred)) == pytest.approx(np.sum(centred**2))
    residual = Z - projection.mean - projection.scores @ projection.components
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)
