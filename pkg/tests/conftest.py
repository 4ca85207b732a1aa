"""Shared fixtures: seeded generators, small paired datasets, on-disk manifests."""

import numpy as np
import pytest

from gapkit.embedding_io import PairedDataset, save_paired_dataset
from gapkit.synthgen import SynthSpec, generate_paired


def unit_rows(matrix):
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240601))


@pytest.fixture
def random_pairs(rng):
    """12 random unit-norm pairs in 6 dimensions."""
    X = unit_rows(rng.standard_normal((12, 6)))
    Y = unit_rows(X + 0.3 * rng.standard_normal((12, 6)))
    return PairedDataset.from_arrays(X, Y)


@pytest.fixture
def gapped_pairs():
    """Small synthetic set with a large modality gap."""
    return generate_paired(
        SynthSpec(n=60, d_latent=8, d_embed=24, gap=5.0, noise=0.01, seed=7)
    )


@pytest.fixture
def aligned_pairs():
    """Every text identical to its image."""
    return generate_paired(SynthSpec(n=30, d_latent=6, d_embed=12, seed=3))


@pytest.fixture
def manifest_of(tmp_path):
    """Write a dataset under tmp_path/<name> and return its manifest path."""

    def write(dataset, name="data", label=None, method=None):
        return save_paired_dataset(dataset, tmp_path / name, label=label, method=method)

    return write
