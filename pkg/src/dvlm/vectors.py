"""Fixed-length document vectors and their text export format."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DV_FORMAT = "dvlm-dv"
DV_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DocumentVector:
    """A real vector tagged with the recipe that produced it."""

    values: np.ndarray
    recipe: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite document vector for recipe {self.recipe!r}")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)


def unit_normalize(v: np.ndarray) -> np.ndarray:
    """v / ||v||_2; an (effectively) zero vector passes through unchanged."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(v))
    if norm <= 1e-12:
        if v.size:
            log.warning("unit_normalize: zero vector passed through unchanged")
        return v.copy()
    return v / norm


def vec_colmajor(matrix: np.ndarray) -> np.ndarray:
    """Enumerate matrix entries column by column: element (r, c) lands at
    index c * rows + r."""
    return np.asarray(matrix).flatten(order="F")


def concat_features(a: DocumentVector, b: DocumentVector) -> DocumentVector:
    """Concatenate two features of the same document, unit-normalizing each
    block first. Concatenation with an empty vector is the identity."""
    if a.dim == 0:
        return b
    if b.dim == 0:
        return a
    values = np.concatenate([unit_normalize(a.values), unit_normalize(b.values)])
    return DocumentVector(values, f"concat({a.recipe},{b.recipe})")


def save_vectors(vectors: dict[str, DocumentVector], path: str | Path,
                 fingerprint: str = "") -> None:
    """One record per document: id, recipe, dim, space-separated decimals.
    Re-exporting identical inputs yields identical bytes."""
    lines = [f"#{DV_FORMAT}\tv{DV_FORMAT_VERSION}\t{fingerprint}"]
    for doc_id in sorted(vectors):
        dv = vectors[doc_id]
        body = " ".join(f"{x:.17g}" for x in dv.values)
        lines.append(f"{doc_id}\t{dv.recipe}\t{dv.dim}\t{body}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vectors(path: str | Path) -> tuple[dict[str, DocumentVector], str]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(f"#{DV_FORMAT}\t"):
        raise ValueError(f"{path}: not a document-vector export")
    header = text[0].split("\t")
    if header[1] != f"v{DV_FORMAT_VERSION}":
        raise ValueError(f"{path}: unsupported export version {header[1]}")
    fingerprint = header[2] if len(header) > 2 else ""
    out: dict[str, DocumentVector] = {}
    for line in text[1:]:
        if not line:
            continue
        doc_id, recipe, dim, body = line.split("\t")
        values = np.array([float(x) for x in body.split()], dtype=np.float64)
        if values.size != int(dim):
            raise ValueError(f"{path}: dimension mismatch for {doc_id}")
        out[doc_id] = DocumentVector(values, recipe)
    return out, fingerprint
