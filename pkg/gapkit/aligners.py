"""
    Alignment methods behind the comparison tables.
    Comprises the Aligner base class (ORIG, the identity) and its
    SpectralAligner (SPEC{k}), OtAligner (OT) and PcaAligner (PCA{k}) subclasses.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from gapkit.config import Method, RunConfig, method_label
from gapkit.embedding_io import MixedCorpus, PairedDataset, split_mixed, stack_mixed
from gapkit.errors import ValidationError
from gapkit.numerics import DEFAULT_NULL_TOL, pca_fit
from gapkit.ot_align import (
    DEFAULT_OOS_NEIGHBORS,
    OtParams,
    TransportPlan,
    solve_laplace_ot,
    transport_in_sample,
    transport_inverse_in_sample,
    transport_inverse_out_of_sample,
    transport_out_of_sample,
)
from gapkit.spectral_align import (
    SpectralAlignment,
    WeightMode,
    alignment_as_dataset,
    spectral_embed,
)

logger = logging.getLogger(__name__)


class Aligner:
    """
    The ORIG method: embeddings are evaluated as produced by the encoders.

    Subclasses override `_transform` and `params`; `fit_transform` is shared.
    """

    method = Method.ORIG

    def __init__(self, k: Optional[int] = None):
        self.k = k

    @property
    def label(self) -> str:
        return method_label(self.method, self.k)

    def params(self) -> dict:
        """Method parameters recorded in provenance files."""
        return {}

    def _transform(self, dataset: PairedDataset) -> PairedDataset:
        return dataset

    def fit_transform(self, dataset: PairedDataset) -> PairedDataset:
        """
        Align a paired dataset.

        Args:
            dataset (PairedDataset): images and texts to align.
        Returns:
            PairedDataset: aligned images and texts, pairing and ids preserved.
        """
        aligned = self._transform(dataset)
        logger.info(
            "%s: %d pairs, d=%d -> d=%d", self.label, dataset.n, dataset.d, aligned.d
        )
        return aligned


class SpectralAligner(Aligner):
    """
    SPEC{k}: joint spectral embedding of the bipartite image-text graph.

    Uses instance attributes:
        - k (int): number of spectral components
        - weight_mode (WeightMode): affinity of the cross-modal graph
        - null_tol (float): eigenvalue threshold below which pairs are skipped
        - knn (int | None): optional sparsification of the graph
        - solver (str): eigensolver choice
    """

    method = Method.SPEC

    def __init__(
        self,
        k: int,
        weight_mode: WeightMode = WeightMode.CLAMP_COSINE,
        null_tol: float = DEFAULT_NULL_TOL,
        knn: Optional[int] = None,
        solver: str = "auto",
    ):
        super().__init__(k)
        self.weight_mode = WeightMode(weight_mode)
        self.null_tol = null_tol
        self.knn = knn
        self.solver = solver
        self.alignment: Optional[SpectralAlignment] = None

    def params(self) -> dict:
        return {
            "k": self.k,
            "weight_mode": self.weight_mode.value,
            "null_tol": self.null_tol,
            "knn": self.knn,
            "solver": self.solver,
        }

    def _transform(self, dataset: PairedDataset) -> PairedDataset:
        self.alignment = spectral_embed(
            dataset, self.k, self.weight_mode, self.null_tol, self.knn, self.solver
        )
        return alignment_as_dataset(self.alignment)


class PcaAligner(Aligner):
    """PCA{k}: project the stacked corpus on its k leading principal directions."""

    method = Method.PCA

    def params(self) -> dict:
        return {"k": self.k}

    def _transform(self, dataset: PairedDataset) -> PairedDataset:
        corpus = stack_mixed(dataset)
        projection = pca_fit(corpus.Z, self.k)
        projected = split_mixed(MixedCorpus(projection.scores, corpus.labels, corpus.pair_of))
        return PairedDataset(
            dataset.images.with_data(projected.X), dataset.texts.with_data(projected.Y)
        )


class OtAligner(Aligner):
    """
    OT: Laplacian-regularized transport of images onto texts.

    The plan is fitted on `train_pairs` pairs chosen by a seeded shuffle; the
    remaining pairs are mapped out of sample. With `inverse` the images stay
    fixed and the texts are transported onto the image support through gamma^T.

    Uses instance attributes:
        - ot_params (OtParams): transport hyper-parameters
        - train_pairs (int | None): size of the fitting subset; all pairs when None
        - nn (int): neighbours used for out-of-sample mapping
        - inverse (bool): transport texts instead of images
        - seed (int): seed of the train/apply shuffle
    """

    method = Method.OT

    def __init__(
        self,
        ot_params: Optional[OtParams] = None,
        train_pairs: Optional[int] = None,
        nn: int = DEFAULT_OOS_NEIGHBORS,
        inverse: bool = False,
        seed: int = 0,
    ):
        super().__init__()
        self.ot_params = ot_params or OtParams()
        self.train_pairs = train_pairs
        self.nn = nn
        self.inverse = inverse
        self.seed = seed
        self.plan: Optional[TransportPlan] = None
        self.train_indices: Optional[np.ndarray] = None

    def params(self) -> dict:
        return {
            **self.ot_params.to_dict(),
            "train_pairs": self.train_pairs,
            "nn": self.nn,
            "inverse": self.inverse,
            "seed": self.seed,
        }

    def split(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, apply) row indices for a dataset of n pairs."""
        m = n if self.train_pairs is None else self.train_pairs
        if not 2 <= m <= n:
            raise ValidationError(f"train_pairs={m} out of range [2, {n}]")
        if m == n:
            return np.arange(n), np.arange(0)
        order = np.random.Generator(np.random.PCG64(self.seed)).permutation(n)
        return np.sort(order[:m]), np.sort(order[m:])

    def _transform(self, dataset: PairedDataset) -> PairedDataset:
        train, rest = self.split(dataset.n)
        self.train_indices = train
        self.plan = solve_laplace_ot(dataset.subset(train), self.ot_params)

        if self.inverse:
            texts = np.array(dataset.Y)
            texts[train] = transport_inverse_in_sample(self.plan)
            if rest.size:
                texts[rest] = transport_inverse_out_of_sample(self.plan, dataset.Y[rest], self.nn)
            return PairedDataset(dataset.images, dataset.texts.with_data(texts))

        images = np.array(dataset.X)
        images[train] = transport_in_sample(self.plan)
        if rest.size:
            images[rest] = transport_out_of_sample(self.plan, dataset.X[rest], self.nn)
        return PairedDataset(dataset.images.with_data(images), dataset.texts)


def make_aligner(config: RunConfig) -> Aligner:
    """Instantiate the aligner a RunConfig asks for."""
    if config.method is Method.SPEC:
        return SpectralAligner(
            config.k,
            weight_mode=config.option("weight_mode", WeightMode.CLAMP_COSINE),
            null_tol=config.option("null_tol", DEFAULT_NULL_TOL),
            knn=config.option("knn"),
            solver=config.option("solver", "auto"),
        )
    if config.method is Method.PCA:
        return PcaAligner(config.k)
    if config.method is Method.OT:
        return OtAligner(
            config.ot_params,
            train_pairs=config.option("train_pairs"),
            nn=config.option("nn", DEFAULT_OOS_NEIGHBORS),
            inverse=bool(config.option("inverse", False)),
            seed=config.seed,
        )
    return Aligner()
