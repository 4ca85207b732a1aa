"""
This package initializer exposes the main gapkit classes for measuring and
closing the image-text modality gap.

Imports:
    PairedDataset: Paired image and text embeddings.
    Aligner: The ORIG method (embeddings left as produced).
    SpectralAligner, OtAligner, PcaAligner: Alignment methods (SPEC{k}, OT, PCA{k}).
    ReportBuilder: Comparison tables built from metric reports.
    SynthSpec, generate_paired: Synthetic datasets with a controllable gap.

These classes are made available at the package level for convenient access.
"""
__version__ = "0.1.0"

from .embedding_io import PairedDataset
from .aligners import Aligner, OtAligner, PcaAligner, SpectralAligner
from .reporting import ReportBuilder
from .synthgen import SynthSpec, generate_paired
