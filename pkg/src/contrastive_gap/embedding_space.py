"""Point sets on the unit hypersphere.

Holds the image/text embedding containers plus the handful of geometric
operations everything else builds on: row normalization, centroids, the
init-time overlap shift and seeded uniform sampling.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from contrastive_gap.errors import ZeroVector

Modality = Literal["image", "text", "generic"]
MODALITIES = ("image", "text", "generic")

NORM_TOL = 1e-9
ZERO_NORM = 1e-12


def _unit_rows(matrix: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms < ZERO_NORM):
        bad = int(np.argmax(norms < ZERO_NORM))
        raise ZeroVector(f"row {bad} has norm {norms[bad]:.3g} < {ZERO_NORM}")
    return matrix / norms[:, None]


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """An N x d matrix of unit-norm rows tagged with a modality."""

    rows: NDArray[np.float64]
    modality: Modality = "generic"

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
        n, d = rows.shape
        if n < 1:
            raise ValueError("an embedding set needs at least one row")
        if d < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {d}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        dev = np.max(np.abs(np.linalg.norm(rows, axis=1) - 1.0))
        if dev > NORM_TOL:
            raise ValueError(f"rows are not unit norm (max deviation {dev:.3g})")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return self.modality == other.modality and np.array_equal(self.rows, other.rows)

    def with_modality(self, modality: Modality) -> EmbeddingSet:
        return EmbeddingSet(self.rows, modality)

    # -- serialization -------------------------------------------------------
    # Python's float repr is the shortest string that round-trips exactly,
    # which never needs more than 17 significant digits.

    def to_dict(self) -> dict:
        return {"modality": self.modality, "dim": self.dim, "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> EmbeddingSet:
        rows = np.asarray(obj["rows"], dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != obj["dim"]:
            raise ValueError(f"rows do not match declared dim {obj['dim']}")
        return cls(rows, obj["modality"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> EmbeddingSet:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.rows:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, modality: Modality = "generic") -> EmbeddingSet:
        rows = [[float(v) for v in rec] for rec in csv.reader(io.StringIO(text)) if rec]
        return cls(np.asarray(rows, dtype=np.float64), modality)


@dataclass(frozen=True, eq=False)
class PairedEmbeddings:
    """Image and text sets where row j of each forms a positive pair."""

    images: EmbeddingSet
    texts: EmbeddingSet

    def __post_init__(self):
        if self.images.n != self.texts.n:
            raise ValueError(f"pair count mismatch: {self.images.n} images vs {self.texts.n} texts")
        if self.images.dim != self.texts.dim:
            raise ValueError(f"dimension mismatch: {self.images.dim} vs {self.texts.dim}")

    @classmethod
    def from_arrays(cls, images: ArrayLike, texts: ArrayLike) -> PairedEmbeddings:
        return cls(EmbeddingSet(images, "image"), EmbeddingSet(texts, "text"))

    @property
    def n(self) -> int:
        return self.images.n

    @property
    def dim(self) -> int:
        return self.images.dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PairedEmbeddings):
            return NotImplemented
        return self.images == other.images and self.texts == other.texts

    def to_dict(self) -> dict:
        return {"images": self.images.to_dict(), "texts": self.texts.to_dict()}

    @classmethod
    def from_dict(cls, obj: dict) -> PairedEmbeddings:
        return cls(EmbeddingSet.from_dict(obj["images"]), EmbeddingSet.from_dict(obj["texts"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> PairedEmbeddings:
        return cls.from_dict(json.loads(Path(path).read_text()))


def normalize_rows(matrix: ArrayLike, modality: Modality = "generic") -> EmbeddingSet:
    """Project every row of ``matrix`` onto the unit sphere.

    Raises:
        ZeroVector: if some row has norm below 1e-12.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    return EmbeddingSet(_unit_rows(m), modality)


def centroid(emb: EmbeddingSet | NDArray[np.float64]) -> NDArray[np.float64]:
    """Arithmetic mean of the rows. Not renormalized, so it lies inside the ball."""
    rows = emb.rows if isinstance(emb, EmbeddingSet) else np.asarray(emb)
    return rows.mean(axis=0)


def overlap_shift(source: EmbeddingSet | NDArray[np.float64],
                  target: EmbeddingSet | NDArray[np.float64]) -> NDArray[np.float64]:
    """Translation that moves the centroid of ``source`` onto that of ``target``."""
    return centroid(target) - centroid(source)


def apply_shift(rows: NDArray[np.float64], shift: NDArray[np.float64]) -> NDArray[np.float64]:
    return _unit_rows(np.asarray(rows, dtype=np.float64) + shift)


def translate_overlap(source: EmbeddingSet, target: EmbeddingSet) -> EmbeddingSet:
    """Shift ``source`` by the centroid difference and re-project to the sphere.

    Removes the cone offset between two encoders at initialization. The shift
    is computed once from the inputs; callers that need to keep applying the
    same transform later should hold on to :func:`overlap_shift` instead.
    """
    if source.dim != target.dim:
        raise ValueError(f"dimension mismatch: {source.dim} vs {target.dim}")
    return EmbeddingSet(apply_shift(source.rows, overlap_shift(source, target)), source.modality)


def random_sphere_init(n: int, d: int, seed: int | np.random.Generator,
                       modality: Modality = "generic") -> EmbeddingSet:
    """Draw ``n`` points i.i.d. uniform on S^{d-1} (Gaussian, then normalize)."""
    if n < 1 or d < 2:
        raise ValueError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    return normalize_rows(rng.standard_normal((n, d)), modality)


def random_cone(n: int, d: int, axis: ArrayLike, spread: float,
                rng: np.random.Generator, modality: Modality = "generic") -> EmbeddingSet:
    """Points scattered around ``axis`` with Gaussian angular ``spread``.

    Mimics the narrow cone a freshly initialized encoder emits.
    """
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return normalize_rows(axis + spread * rng.standard_normal((n, d)), modality)
