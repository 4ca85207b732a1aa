"""
numerics.py
Dense linear-algebra kernels shared by the alignment methods and metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import cdist
from sklearn.decomposition import PCA

from gapkit.errors import NumericsError, ShapeMismatchError, SpectrumError, ValidationError
from gapkit.helpers import _as_array

logger = logging.getLogger(__name__)

DEFAULT_NULL_TOL = 1e-8
DENSE_EIGEN_LIMIT = 5000
RESIDUAL_TOL = 1e-8
SYMMETRY_TOL = 1e-10
PSD_REJECT_TOL = 1e-6


class SimilarityMetric(str, Enum):
    DOT = "dot"
    COSINE = "cosine"


@dataclass(frozen=True)
class SymmetricEigenResult:
    """
    Smallest non-null eigenpairs of L u = lambda D u.

    Attributes:
        eigenvalues: ascending (k,) array
        eigenvectors: (m x k) array, D-orthonormal columns
        residuals: per-pair ||L u - lambda D u|| / ||u||_D
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class PcaProjection:
    """
    Principal-component projection with deterministic component signs.

    Attributes:
        scores: (m x k) projected coordinates
        components: (k x d) orthonormal principal directions
        explained_variance: (k,) non-increasing variances
        mean: (d,) centering vector
    """

    scores: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray


def _check_shared_dim(A: np.ndarray, B: np.ndarray) -> None:
    if A.ndim != 2 or B.ndim != 2:
        raise ValidationError("expected 2-D matrices")
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(
            f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} columns"
        )


def _row_norms(M: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    if zero_rows.size:
        raise ValidationError(f"zero-norm row {int(zero_rows[0])} in {name}")
    return norms


def similarity_matrix(A, B, metric: SimilarityMetric = SimilarityMetric.DOT) -> np.ndarray:
    """
    Cross similarity between the rows of A (n x d) and B (m x d).

    Args:
        A, B: matrices or EmbeddingMatrix instances sharing d.
        metric (SimilarityMetric): DOT gives a_i . b_j, COSINE divides by both norms.
    Returns:
        np.ndarray: (n x m) similarities.
    """
    A, B = _as_array(A), _as_array(B)
    _check_shared_dim(A, B)
    if SimilarityMetric(metric) is SimilarityMetric.DOT:
        return A @ B.T
    a_norms = _row_norms(A, "A")
    b_norms = _row_norms(B, "B")
    return (A / a_norms[:, None]) @ (B / b_norms[:, None]).T


def pairwise_sq_euclidean(A, B) -> np.ndarray:
    """(n x m) matrix of ||a_i - b_j||^2, exactly zero for identical rows."""
    A, B = _as_array(A), _as_array(B)
    _check_shared_dim(A, B)
    return np.maximum(cdist(A, B, metric="sqeuclidean"), 0.0)


def _mass_vector(mass, m: int) -> np.ndarray:
    if mass is None:
        return np.ones(m)
    mass = np.asarray(mass, dtype=np.float64)
    if mass.ndim == 2:
        if np.count_nonzero(mass - np.diag(np.diag(mass))):
            raise ValidationError("mass matrix must be diagonal")
        mass = np.diag(mass)
    if mass.shape != (m,):
        raise ShapeMismatchError(f"mass has {mass.shape[0]} entries for a {m}x{m} matrix")
    bad = np.flatnonzero(~(mass > 0))
    if bad.size:
        raise ValidationError(f"non-positive mass entry at row {int(bad[0])}")
    return mass


def _lanczos_smallest(operator: np.ndarray, k: int, null_tol: float):
    """
    Grow an eigsh request until k eigenvalues clear null_tol.

    eigsh cannot return all m pairs, so a request that reaches m - 1 without
    enough non-null eigenvalues falls back to the dense solver.
    """
    m = operator.shape[0]
    request = min(k + 8, m - 1)
    while True:
        values, vectors = eigsh(operator, k=request, which="SA", tol=0.0)
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
        if np.count_nonzero(values >= null_tol) >= k:
            return values, vectors
        if request >= m - 1:
            logger.debug("eigsh exhausted at %d pairs; using the dense solver", request)
            return linalg.eigh(operator)
        request = min(2 * request, m - 1)
        logger.debug("eigsh found too few non-null pairs; retrying with %d", request)


def smallest_eigenpairs(
    laplacian,
    k: int,
    mass=None,
    null_tol: float = DEFAULT_NULL_TOL,
    solver: str = "auto",
) -> SymmetricEigenResult:
    """
    The k smallest eigenpairs of L u = lambda D u whose eigenvalue is >= null_tol.

    The problem is solved on the symmetric matrix D^{-1/2} L D^{-1/2}; its
    eigenvectors v are mapped back with u = D^{-1/2} v, which makes the returned
    columns D-orthonormal. These are also the eigenpairs of L_rw = D^{-1} L.

    Args:
        laplacian (array-like): symmetric (m x m) matrix.
        k (int): number of non-null pairs wanted.
        mass (array-like, optional): positive diagonal of D, as a vector or a
            diagonal matrix; identity when omitted.
        null_tol (float): eigenvalues below this are treated as null and skipped.
        solver (str): "dense" (scipy.linalg.eigh), "lanczos" (scipy eigsh) or
            "auto" (dense up to DENSE_EIGEN_LIMIT rows).
    Returns:
        SymmetricEigenResult
    Raises:
        ValidationError: non-symmetric L, non-positive mass, k < 1.
        SpectrumError: fewer than k eigenvalues clear null_tol.
    """
    L = np.asarray(laplacian, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {L.shape}")
    m = L.shape[0]
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    scale = max(1.0, float(np.abs(L).max()))
    if np.abs(L - L.T).max() > SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    d = _mass_vector(mass, m)

    inv_sqrt = 1.0 / np.sqrt(d)
    operator = inv_sqrt[:, None] * L * inv_sqrt[None, :]
    operator = (operator + operator.T) / 2.0

    if solver == "auto":
        solver = "dense" if m <= DENSE_EIGEN_LIMIT else "lanczos"
    if solver == "lanczos" and m > k + 1:
        values, vectors = _lanczos_smallest(operator, k, null_tol)
    elif solver in ("dense", "lanczos"):
        values, vectors = linalg.eigh(operator)
    else:
        raise ValidationError(f"unknown eigensolver '{solver}'")

    keep = np.flatnonzero(values >= null_tol)
    if keep.size < k:
        raise SpectrumError(
            f"not enough non-null eigenvalues: requested {k}, found {keep.size} "
            f"(matrix size {m}, {values.size - keep.size} of {values.size} computed "
            f"eigenvalues below null_tol={null_tol:g})"
        )
    keep = keep[:k]
    eigenvalues = values[keep]
    eigenvectors = inv_sqrt[:, None] * vectors[:, keep]

    residual = L @ eigenvectors - (d[:, None] * eigenvectors) * eigenvalues[None, :]
    d_norms = np.sqrt(np.sum(d[:, None] * eigenvectors**2, axis=0))
    residuals = np.linalg.norm(residual, axis=0) / d_norms
    if residuals.max() > RESIDUAL_TOL:
        logger.warning(
            "eigenpair residual %.3g exceeds %.0e (solver=%s)",
            residuals.max(),
            RESIDUAL_TOL,
            solver,
        )
    return SymmetricEigenResult(eigenvalues, eigenvectors, residuals)


def gaussian_summary(matrix) -> GaussianSummary:
    """
    Column means and unbiased (divisor n-1) sample covariance of a matrix.

    Raises:
        ValidationError: fewer than two rows.
    """
    data = _as_array(matrix)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValidationError("a Gaussian summary needs at least 2 rows")
    covariance = np.atleast_2d(np.cov(data, rowvar=False, ddof=1))
    return GaussianSummary(data.mean(axis=0), (covariance + covariance.T) / 2.0)


def psd_sqrt(S) -> np.ndarray:
    """
    Symmetric square root R of a symmetric PSD matrix (R @ R = S).

    Eigenvalues in [-1e-6, 0) are clamped to zero.

    Raises:
        NumericsError: an eigenvalue below -1e-6 ("not PSD").
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    values, vectors = linalg.eigh((S + S.T) / 2.0)
    if values.min() < -PSD_REJECT_TOL * scale:
        raise NumericsError(f"not PSD: smallest eigenvalue {values.min():.3g}")
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    return (root + root.T) / 2.0


def pca_fit(Z, k: int) -> PcaProjection:
    """
    Project centred rows onto the k leading principal directions.

    The sign of every component is chosen so that its largest-magnitude
    loading is positive, which makes the projection deterministic.

    Args:
        Z (array-like): (m x d) rows.
        k (int): number of components, 1 <= k <= min(m, d).
    Returns:
        PcaProjection
    """
    Z = _as_array(Z)
    m, d = Z.shape
    if not 1 <= k <= min(m, d):
        raise ValidationError(f"k={k} out of range [1, {min(m, d)}]")
    pca = PCA(n_components=k, svd_solver="full")
    scores = pca.fit_transform(Z)
    components = pca.components_.copy()

    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivots])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    scores = scores * signs[None, :]
    return PcaProjection(scores, components, pca.explained_variance_.copy(), pca.mean_)


def pca_fit_transform(Z, k: int) -> np.ndarray:
    """(m x k) PCA scores; see pca_fit."""
    return pca_fit(Z, k).scores
