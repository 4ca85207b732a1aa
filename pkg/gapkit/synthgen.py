"""
synthgen.py
Synthetic paired embeddings with a controllable modality gap.

    image_i = R_I z_i + cone c + gap u + noise e_i
    text_i  = R_T z_i + cone c - gap u + noise e'_i

z_i lies on the unit sphere of the latent space, R_I / R_T are orthonormal maps
into the embedding space, u and c are unit directions orthogonal to the
semantic subspace and to each other, and e has expected norm 1. Rows are
L2-normalized afterwards. Randomness comes from numpy's PCG64 bit generator.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from gapkit.embedding_io import EmbeddingMatrix, Modality, PairedDataset, l2_normalize_rows
from gapkit.errors import ValidationError

logger = logging.getLogger(__name__)

MAX_SEED = 2**64


@dataclass(frozen=True)
class SynthSpec:
    """
    Parameters of a synthetic paired dataset.

    Attributes:
        n: pair count (>= 2)
        d_latent: dimension of the shared semantic space
        d_embed: output dimension (>= d_latent, plus one per non-zero offset)
        gap: magnitude of the +/- modality offset
        noise: expected norm of the per-row isotropic noise
        seed: PCG64 seed
        cone: magnitude of the offset shared by both modalities; 2 * gap when None
        shared_rotation: use the same map for both modalities (R_I = R_T)
    """

    n: int
    d_latent: int
    d_embed: int
    gap: float = 0.0
    noise: float = 0.0
    seed: int = 0
    cone: Optional[float] = None
    shared_rotation: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"n must be >= 2, got {self.n}")
        if self.d_latent < 1:
            raise ValidationError(f"d_latent must be >= 1, got {self.d_latent}")
        if self.d_embed < self.d_latent:
            raise ValidationError(
                f"d_embed={self.d_embed} is smaller than d_latent={self.d_latent}"
            )
        for name in ("gap", "noise"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.cone is not None and not self.cone >= 0:
            raise ValidationError(f"cone must be >= 0, got {self.cone}")
        if not 0 <= self.seed < MAX_SEED:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

        offsets = int(self.gap > 0) + int(self.resolved_cone > 0)
        if self.d_embed < self.d_latent + offsets:
            raise ValidationError(
                f"d_embed={self.d_embed} leaves no room for {offsets} offset "
                f"direction(s) beyond d_latent={self.d_latent}"
            )

    @property
    def resolved_cone(self) -> float:
        return 2.0 * self.gap if self.cone is None else float(self.cone)

    def to_dict(self) -> dict:
        record = asdict(self)
        record["cone"] = self.resolved_cone
        record["generator"] = "PCG64"
        return record


def _random_orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR with sign-fixed R diagonal)."""
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def generate_paired(spec: SynthSpec) -> PairedDataset:
    """
    Draw a paired dataset from a SynthSpec; the same spec gives the same bytes.

    Args:
        spec (SynthSpec): generator parameters.
    Returns:
        PairedDataset: L2-normalized (n x d_embed) images and texts.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    latent = rng.standard_normal((spec.n, spec.d_latent))
    latent /= np.linalg.norm(latent, axis=1, keepdims=True)

    basis = _random_orthogonal(rng, spec.d_embed)
    image_map = basis[:, : spec.d_latent]
    text_map = image_map
    if not spec.shared_rotation:
        text_map = image_map @ _random_orthogonal(rng, spec.d_latent)
    offset_direction = basis[:, -1]
    cone_direction = basis[:, -2] if spec.gap > 0 else basis[:, -1]

    scale = spec.noise / np.sqrt(spec.d_embed)
    image_noise = scale * rng.standard_normal((spec.n, spec.d_embed))
    text_noise = scale * rng.standard_normal((spec.n, spec.d_embed))

    common = spec.resolved_cone * cone_direction
    images = latent @ image_map.T + common + spec.gap * offset_direction + image_noise
    texts = latent @ text_map.T + common - spec.gap * offset_direction + text_noise

    ids = tuple(f"pair{i:05d}" for i in range(spec.n))
    dataset = PairedDataset(
        l2_normalize_rows(EmbeddingMatrix(images, Modality.IMAGE, ids)),
        l2_normalize_rows(EmbeddingMatrix(texts, Modality.TEXT, ids)),
    )
    logger.info(
        "generated %d synthetic pairs (d=%d, gap=%g, noise=%g, seed=%d)",
        spec.n,
        spec.d_embed,
        spec.gap,
        spec.noise,
        spec.seed,
    )
    return dataset
