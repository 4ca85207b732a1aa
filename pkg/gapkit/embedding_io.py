"""
embedding_io.py
Loading, validating, normalizing and persisting embedding matrices.

Matrices live on disk as NPY version 1.0 files (2-D, C order, little-endian
float32 or float64). A paired dataset is described by a JSON manifest:

    {"images": "<path>", "texts": "<path>", "ids": "<optional path>"}

Relative paths inside a manifest are resolved against the manifest's folder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from gapkit.errors import ShapeMismatchError, ValidationError
from gapkit.helpers import _first_bad_row, _frozen_copy

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ACCEPTED_DTYPES = ("<f4", "<f8")
IDS_SUFFIX = ".ids.txt"
NORM_TOL = 1e-12


class Modality(str, Enum):
    """Which encoder produced a set of rows."""

    IMAGE = "image"
    TEXT = "text"
    JOINT = "joint"


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(n))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """
    Dense (n x d) float64 matrix of row embeddings tagged with a modality.

    The array is copied on construction and marked read-only.
    """

    data: np.ndarray
    modality: Modality
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValidationError(f"expected a 2-D matrix, got {data.ndim}-D")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValidationError("empty matrix")
        if not np.issubdtype(data.dtype, np.floating):
            raise ValidationError(f"non-float dtype {data.dtype}")
        bad_row = _first_bad_row(data)
        if bad_row is not None:
            raise ValidationError(f"non-finite value at row {bad_row}")

        ids = tuple(self.ids) if self.ids else _default_ids(data.shape[0])
        if len(ids) != data.shape[0]:
            raise ShapeMismatchError(
                f"{len(ids)} ids supplied for a matrix with {data.shape[0]} rows"
            )
        if len(set(ids)) != len(ids):
            raise ValidationError("ids are not unique")

        object.__setattr__(self, "data", _frozen_copy(data))
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "EmbeddingMatrix":
        """Same modality and ids, new row vectors (row count must match)."""
        return EmbeddingMatrix(data, self.modality, self.ids)

    def take(self, indices: Sequence[int]) -> "EmbeddingMatrix":
        indices = np.asarray(indices, dtype=int)
        return EmbeddingMatrix(
            self.data[indices], self.modality, tuple(self.ids[i] for i in indices)
        )


@dataclass(frozen=True)
class PairedDataset:
    """Images and texts where row i of one is paired with row i of the other."""

    images: EmbeddingMatrix
    texts: EmbeddingMatrix

    def __post_init__(self):
        if self.images.n != self.texts.n:
            raise ShapeMismatchError(
                f"pair count mismatch: {self.images.n} images, {self.texts.n} texts"
            )
        if self.images.d != self.texts.d:
            raise ShapeMismatchError(
                f"dimension mismatch: images d={self.images.d}, texts d={self.texts.d}"
            )

    @classmethod
    def from_arrays(
        cls,
        images: np.ndarray,
        texts: np.ndarray,
        ids: Optional[Sequence[str]] = None,
    ) -> "PairedDataset":
        ids = tuple(ids) if ids is not None else ()
        return cls(
            EmbeddingMatrix(images, Modality.IMAGE, ids),
            EmbeddingMatrix(texts, Modality.TEXT, ids),
        )

    @property
    def n(self) -> int:
        return self.images.n

    @property
    def d(self) -> int:
        return self.images.d

    @property
    def X(self) -> np.ndarray:
        return self.images.data

    @property
    def Y(self) -> np.ndarray:
        return self.texts.data

    def subset(self, indices: Sequence[int]) -> "PairedDataset":
        """Positional sub-dataset; pairing is preserved."""
        return PairedDataset(self.images.take(indices), self.texts.take(indices))


@dataclass(frozen=True)
class MixedCorpus:
    """
    Images stacked over texts: rows 0..n-1 are images, rows n..2n-1 texts.

    Attributes:
        Z: (2n x d) stacked matrix
        labels: per-row modality value ("image" / "text")
        pair_of: per-row index of the partner row
    """

    Z: np.ndarray
    labels: np.ndarray
    pair_of: np.ndarray

    @property
    def n(self) -> int:
        return self.Z.shape[0] // 2

    @property
    def is_image(self) -> np.ndarray:
        return self.labels == Modality.IMAGE.value


def _read_ids(path: Path, expected: int) -> tuple[str, ...]:
    ids = tuple(path.read_text(encoding="utf-8").splitlines())
    if len(ids) != expected:
        raise ShapeMismatchError(
            f"id file {path} lists {len(ids)} ids for {expected} rows"
        )
    return ids


def ids_sidecar(path: PathLike) -> Path:
    """`emb.npy` -> `emb.ids.txt`."""
    path = Path(path)
    return path.with_name(path.stem + IDS_SUFFIX)


def load_matrix(path: PathLike, modality: Modality) -> EmbeddingMatrix:
    """
    Read an NPY v1.0 embedding matrix and validate it.

    Args:
        path (str | Path): NPY file, 2-D, C order, little-endian float32/float64.
        modality (Modality): tag attached to the rows.
    Returns:
        EmbeddingMatrix: float64 rows (float32 files are widened); ids are read
        from the `<stem>.ids.txt` sidecar when present, else row indices.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"matrix file not found: {path}")

    with path.open("rb") as handle:
        try:
            version = np.lib.format.read_magic(handle)
            if version != (1, 0):
                raise ValidationError(
                    f"malformed header in {path}: NPY version {version}, expected 1.0"
                )
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(handle)
        except ValueError as exc:
            raise ValidationError(f"malformed header in {path}: {exc}") from exc

        if len(shape) != 2:
            raise ValidationError(f"non-2D array in {path}: shape {shape}")
        if fortran_order:
            raise ValidationError(f"{path} is Fortran ordered, expected C order")
        if dtype.str not in ACCEPTED_DTYPES:
            raise ValidationError(f"non-float dtype {dtype.str} in {path}")
        if shape[0] == 0 or shape[1] == 0:
            raise ValidationError("empty matrix")

        handle.seek(0)
        array = np.lib.format.read_array(handle, allow_pickle=False)

    data = array.astype(np.float64, copy=False)
    bad_row = _first_bad_row(data)
    if bad_row is not None:
        raise ValidationError(f"non-finite value at row {bad_row}")

    sidecar = ids_sidecar(path)
    ids = _read_ids(sidecar, data.shape[0]) if sidecar.is_file() else ()
    logger.debug("loaded %s matrix %s from %s", Modality(modality).value, shape, path)
    return EmbeddingMatrix(data, modality, ids)


def save_matrix(matrix: EmbeddingMatrix, path: PathLike) -> None:
    """
    Write a matrix as NPY v1.0 float64; the ids sidecar is written only when
    the ids are not the default row indices.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(matrix.data, dtype="<f8")
    with path.open("wb") as handle:
        np.lib.format.write_array(handle, array, version=(1, 0), allow_pickle=False)

    sidecar = ids_sidecar(path)
    if matrix.ids != _default_ids(matrix.n):
        sidecar.write_text("\n".join(matrix.ids) + "\n", encoding="utf-8")
    elif sidecar.exists():
        sidecar.unlink()


def read_manifest(manifest: PathLike) -> dict:
    """Parse a manifest and resolve its paths against the manifest's folder."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    try:
        record = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest} is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ValidationError(f"manifest {manifest} must hold a JSON object")
    for key in ("images", "texts"):
        if key not in record:
            raise ValidationError(f"manifest {manifest} lacks the '{key}' entry")

    base = manifest.resolve().parent
    for key in ("images", "texts", "ids"):
        if record.get(key):
            record[key] = str((base / record[key]).resolve())
    return record


def load_paired_dataset(manifest: PathLike) -> PairedDataset:
    """
    Load both matrices named by a manifest and check the pairing invariants.

    Raises:
        FileNotFoundError: a referenced file is missing.
        ShapeMismatchError: "dimension mismatch" or "pair count mismatch".
    """
    record = read_manifest(manifest)
    images = load_matrix(record["images"], Modality.IMAGE)
    texts = load_matrix(record["texts"], Modality.TEXT)

    if record.get("ids"):
        ids = _read_ids(Path(record["ids"]), images.n)
        images = EmbeddingMatrix(images.data, Modality.IMAGE, ids)
        if texts.n == images.n:
            texts = EmbeddingMatrix(texts.data, Modality.TEXT, ids)

    dataset = PairedDataset(images, texts)
    logger.info("loaded %d pairs (d=%d) from %s", dataset.n, dataset.d, manifest)
    return dataset


def save_paired_dataset(
    dataset: PairedDataset,
    directory: PathLike,
    label: Optional[str] = None,
    method: Optional[str] = None,
) -> Path:
    """
    Write images.npy, texts.npy (plus ids) and manifest.json into `directory`.

    Returns:
        Path: the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(dataset.images, directory / "images.npy")
    save_matrix(dataset.texts, directory / "texts.npy")

    record = {"images": "images.npy", "texts": "texts.npy"}
    if dataset.images.ids != _default_ids(dataset.n):
        record["ids"] = "images" + IDS_SUFFIX
    if label is not None:
        record["label"] = label
    if method is not None:
        record["method"] = method

    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", "utf-8")
    return manifest


def l2_normalize_rows(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """
    Scale every row to unit Euclidean norm.

    Raises:
        ValidationError: a row has zero norm ("zero-norm row i").
    """
    norms = np.linalg.norm(matrix.data, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    if zero_rows.size:
        raise ValidationError(f"zero-norm row {int(zero_rows[0])}")
    normalized = matrix.data / norms[:, None]

    # Rows already at unit norm are kept bit-for-bit.
    unit = np.abs(norms - 1.0) <= NORM_TOL
    normalized[unit] = matrix.data[unit]
    return matrix.with_data(normalized)


def normalize_dataset(dataset: PairedDataset) -> PairedDataset:
    logger.info("L2-normalizing %d image and text rows", dataset.n)
    return PairedDataset(
        l2_normalize_rows(dataset.images), l2_normalize_rows(dataset.texts)
    )


def stack_mixed(dataset: PairedDataset) -> MixedCorpus:
    """Z = [X; Y] with images first; pair_of(i) = i + n for images, i - n for texts."""
    n = dataset.n
    Z = _frozen_copy(np.vstack([dataset.X, dataset.Y]))
    labels = np.array([Modality.IMAGE.value] * n + [Modality.TEXT.value] * n)
    pair_of = np.concatenate([np.arange(n, 2 * n), np.arange(0, n)])
    return MixedCorpus(Z, labels, pair_of)


def split_mixed(corpus: MixedCorpus) -> PairedDataset:
    """Inverse of stack_mixed: rows labelled image vs text, in order."""
    is_image = corpus.is_image
    return PairedDataset.from_arrays(corpus.Z[is_image], corpus.Z[~is_image])
