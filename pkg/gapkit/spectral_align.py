"""
spectral_align.py
Spectral alignment of paired embeddings through a bipartite cross-modal graph.

Steps:
    1. W = similarity(X, Y), negative affinities clamped to zero
    2. A = [[0, W], [W^T, 0]], degrees d = A 1
    3. the k smallest non-null eigenpairs of L_rw = D^{-1}(D - A)
    4. row i of the eigenvector matrix F is the new coordinate of node i
       (images are nodes 0..n-1, texts nodes n..2n-1)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components, laplacian

from gapkit.embedding_io import EmbeddingMatrix, Modality, PairedDataset
from gapkit.errors import GraphError, ValidationError
from gapkit.numerics import (
    DEFAULT_NULL_TOL,
    SimilarityMetric,
    similarity_matrix,
    smallest_eigenpairs,
)

logger = logging.getLogger(__name__)


class WeightMode(str, Enum):
    CLAMP_DOT = "clamp-dot"
    CLAMP_COSINE = "clamp-cosine"

    @property
    def metric(self) -> SimilarityMetric:
        if self is WeightMode.CLAMP_DOT:
            return SimilarityMetric.DOT
        return SimilarityMetric.COSINE


@dataclass(frozen=True)
class BipartiteGraph:
    """
    Cross-modal affinity graph on 2n nodes.

    Attributes:
        weights: (n x n) non-negative W; image i to text j
        degrees: (2n,) node degrees, images first
    """

    weights: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def adjacency(self) -> np.ndarray:
        """The (2n x 2n) block matrix [[0, W], [W^T, 0]]."""
        n = self.n
        zeros = np.zeros((n, n))
        return np.block([[zeros, self.weights], [self.weights.T, zeros]])

    def laplacian(self) -> np.ndarray:
        """L = D - A."""
        return laplacian(self.adjacency())

    def random_walk_laplacian(self) -> np.ndarray:
        """L_rw = D^{-1} L; used for inspection, the solver works on L and D."""
        return self.laplacian() / self.degrees[:, None]


@dataclass(frozen=True)
class SpectralAlignment:
    """
    Spectral coordinates of both modalities.

    Attributes:
        image_coords: (n x k) rows 0..n-1 of F
        text_coords: (n x k) rows n..2n-1 of F
        eigenvalues: ascending (k,) eigenvalues of L_rw, all above null_tol
        residuals: per-pair generalized residuals
        ids: pair identifiers carried over from the input
    """

    image_coords: np.ndarray
    text_coords: np.ndarray
    eigenvalues: np.ndarray
    residuals: np.ndarray
    ids: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return self.image_coords.shape[1]


def _sparsify(weights: np.ndarray, knn: int) -> np.ndarray:
    """Keep the knn strongest edges of every node (union over both sides)."""
    n = weights.shape[0]
    if not 1 <= knn <= n:
        raise ValidationError(f"knn={knn} out of range [1, {n}]")
    keep = np.zeros_like(weights, dtype=bool)
    rows = np.arange(n)[:, None]
    by_image = np.argsort(-weights, axis=1, kind="stable")[:, :knn]
    keep[rows, by_image] = True
    by_text = np.argsort(-weights.T, axis=1, kind="stable")[:, :knn]
    keep[by_text, rows] = True
    return np.where(keep, weights, 0.0)


def build_bipartite_graph(
    dataset: PairedDataset,
    weight_mode: WeightMode = WeightMode.CLAMP_COSINE,
    knn: Optional[int] = None,
) -> BipartiteGraph:
    """
    Build the clamped cross-modal affinity graph of a paired dataset.

    Args:
        dataset (PairedDataset): images X and texts Y.
        weight_mode (WeightMode): CLAMP_DOT uses X Y^T, CLAMP_COSINE the cosine matrix.
        knn (int, optional): keep only each node's knn strongest edges.
    Returns:
        BipartiteGraph
    Raises:
        GraphError: some node has zero degree; the message lists the rows.
    """
    weight_mode = WeightMode(weight_mode)
    weights = similarity_matrix(dataset.X, dataset.Y, weight_mode.metric)
    negatives = np.count_nonzero(weights < 0)
    weights = np.maximum(weights, 0.0)
    if knn is not None:
        weights = _sparsify(weights, knn)

    degrees = np.concatenate([weights.sum(axis=1), weights.sum(axis=0)])
    isolated = np.flatnonzero(degrees <= 0.0)
    if isolated.size:
        n = dataset.n
        image_rows = [int(i) for i in isolated if i < n]
        text_rows = [int(i) - n for i in isolated if i >= n]
        raise GraphError(
            f"isolated nodes: image rows {image_rows}, text rows {text_rows}"
        )

    graph = BipartiteGraph(weights, degrees)
    components, _ = connected_components(graph.adjacency(), directed=False)
    if components > 1:
        logger.warning(
            "bipartite graph has %d connected components; their indicator "
            "vectors are skipped as null eigenvectors",
            components,
        )
    logger.info(
        "built %s graph on %d nodes (%d negative affinities clamped)",
        weight_mode.value,
        2 * dataset.n,
        negatives,
    )
    return graph


def spectral_embed(
    dataset: PairedDataset,
    k: int,
    weight_mode: WeightMode = WeightMode.CLAMP_COSINE,
    null_tol: float = DEFAULT_NULL_TOL,
    knn: Optional[int] = None,
    solver: str = "auto",
) -> SpectralAlignment:
    """
    Embed images and texts jointly with the k lowest non-null eigenvectors of L_rw.

    Args:
        dataset (PairedDataset): paired embeddings.
        k (int): number of spectral components (>= 1).
        weight_mode (WeightMode): affinity used for W.
        null_tol (float): eigenvalues below it are skipped (constant vectors).
        knn (int, optional): graph sparsification; dense when None.
        solver (str): eigensolver choice passed to smallest_eigenpairs.
    Returns:
        SpectralAlignment
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    graph = build_bipartite_graph(dataset, weight_mode, knn)
    result = smallest_eigenpairs(
        graph.laplacian(), k, mass=graph.degrees, null_tol=null_tol, solver=solver
    )
    F = result.eigenvectors
    n = dataset.n
    logger.info(
        "spectral embedding: k=%d, eigenvalues %.4g..%.4g",
        k,
        result.eigenvalues[0],
        result.eigenvalues[-1],
    )
    return SpectralAlignment(
        image_coords=F[:n],
        text_coords=F[n:],
        eigenvalues=result.eigenvalues,
        residuals=result.residuals,
        ids=dataset.images.ids,
    )


def alignment_as_dataset(alignment: SpectralAlignment) -> PairedDataset:
    """Wrap spectral coordinates as a k-dimensional PairedDataset."""
    return PairedDataset(
        EmbeddingMatrix(alignment.image_coords, Modality.IMAGE, alignment.ids),
        EmbeddingMatrix(alignment.text_coords, Modality.TEXT, alignment.ids),
    )
