"""Embedding representations, similarity kernels, MaxSim scoring, pooling and compression."""

import math
import logging
from enum import Enum
from dataclasses import dataclass
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6
WORD_BITS = 64


class SimilarityKind(str, Enum):
    """Similarity function used between two embedding vectors."""
    DOT = "dot"
    COSINE = "cosine"


class Pooling(str, Enum):
    """Single-vector pooling strategy."""
    MEAN = "mean"
    LAST_TOKEN = "last_token"


def _as_matrix(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {array.shape}")
    if array.shape[0] < 1 or array.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    array.setflags(write=False)
    return array


def _normalize(vector: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(vector)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError(f"Cannot normalize zero-norm {what}")
    return vector / norm


def _normalize_rows(values: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"Cannot normalize zero-norm {what} at row {bad}")
    return values / norms[:, None]


@dataclass(frozen=True)
class TokenMatrix:
    """Multi-vector representation: one embedding per token."""
    id: str
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = _as_matrix(self.values, f"TokenMatrix {self.id!r}")
        object.__setattr__(self, "values", values)
        if self.normalized:
            norms = np.linalg.norm(values, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
                raise ValueError(f"TokenMatrix {self.id!r} is flagged normalized but has non-unit rows")

    @classmethod
    def from_rows(cls, id: str, rows, normalize: bool = True) -> "TokenMatrix":
        """Build a matrix from raw rows, L2-normalizing each row by default."""
        values = _as_matrix(rows, f"TokenMatrix {id!r}")
        if normalize:
            values = _normalize_rows(values, f"token of {id!r}")
        return cls(id=id, values=values, normalized=normalize)

    @classmethod
    def stack(cls, id: str, matrices) -> "TokenMatrix":
        """Concatenate token matrices of the same dimension."""
        matrices = list(matrices)
        if not matrices:
            raise ValueError("Cannot stack an empty list of token matrices")
        dims = {m.dim for m in matrices}
        if len(dims) != 1:
            raise ValueError(f"Cannot stack token matrices with dimensions {sorted(dims)}")
        return cls(
            id=id,
            values=np.vstack([m.values for m in matrices]),
            normalized=all(m.normalized for m in matrices),
        )

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PooledVector:
    """Single-vector bi-encoder representation."""
    id: str
    values: np.ndarray
    pooling: Pooling = Pooling.MEAN

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] < 1:
            raise ValueError(f"PooledVector {self.id!r} must be a non-empty 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"PooledVector {self.id!r} contains non-finite values")
        if abs(np.linalg.norm(values) - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"PooledVector {self.id!r} must have unit norm")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pooling", Pooling(self.pooling))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def as_matrix(self) -> TokenMatrix:
        """View the pooled vector as a one-row token matrix."""
        return TokenMatrix(id=self.id, values=self.values[None, :], normalized=True)


@dataclass(frozen=True)
class BinaryRow:
    """One sign-quantized row."""
    dim: int
    words: np.ndarray


@dataclass(frozen=True)
class BinaryMatrix:
    """Sign-quantized token matrix, bits packed little-endian into 64-bit words."""
    id: str
    rows: int
    dim: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint64)
        expected = (self.rows, words_per_row(self.dim))
        if bits.shape != expected:
            raise ValueError(f"BinaryMatrix {self.id!r} bits have shape {bits.shape}, expected {expected}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def nbytes(self) -> int:
        return self.rows * words_per_row(self.dim) * 8

    def row(self, i: int) -> BinaryRow:
        return BinaryRow(dim=self.dim, words=self.bits[i])

    def unpack(self) -> np.ndarray:
        """Return the rows x dim bit array (uint8 0/1)."""
        as_bytes = self.bits.astype("<u8").view(np.uint8).reshape(self.rows, -1)
        return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :self.dim]

    def to_signs(self) -> np.ndarray:
        """Reconstruct +1/-1 values from the stored bits."""
        return np.where(self.unpack() == 1, 1.0, -1.0)


Representation = Union[TokenMatrix, PooledVector]


def words_per_row(dim: int) -> int:
    return -(-dim // WORD_BITS)


def similarity(a, b, kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Dot product or cosine similarity between two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"Dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("Similarity inputs must be finite")
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.DOT:
        return float(np.dot(a, b))
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("Cosine similarity is undefined for zero-norm vectors")
    return float(np.dot(a / norm_a, b / norm_b))


def similarity_matrix(query: np.ndarray, doc: np.ndarray, kind: SimilarityKind = SimilarityKind.DOT) -> np.ndarray:
    """All pairwise similarities between query rows and doc rows."""
    if query.shape[1] != doc.shape[1]:
        raise ValueError(f"Dimension mismatch: query dim {query.shape[1]} vs doc dim {doc.shape[1]}")
    if SimilarityKind(kind) is SimilarityKind.COSINE:
        query = _normalize_rows(query, "query token")
        doc = _normalize_rows(doc, "document token")
    return query @ doc.T


def maxsim_score(query: TokenMatrix, doc: TokenMatrix, kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Late-interaction score: sum over query tokens of the best-matching doc token."""
    sims = similarity_matrix(query.values, doc.values, kind)
    return math.fsum(sims.max(axis=1))


def mean_pool(m: TokenMatrix) -> PooledVector:
    """Column-wise mean of the token rows, normalized."""
    mean = m.values.sum(axis=0) / m.rows
    return PooledVector(id=m.id, values=_normalize(mean, f"mean of {m.id!r}"), pooling=Pooling.MEAN)


def last_token_pool(m: TokenMatrix) -> PooledVector:
    """Last token row, normalized."""
    last = m.values[-1]
    return PooledVector(id=m.id, values=_normalize(last, f"last token of {m.id!r}"), pooling=Pooling.LAST_TOKEN)


def pool(m: TokenMatrix, pooling: Pooling) -> PooledVector:
    if Pooling(pooling) is Pooling.MEAN:
        return mean_pool(m)
    return last_token_pool(m)


def late_pool(m: TokenMatrix, factor: int) -> TokenMatrix:
    """Replace consecutive groups of `factor` rows by their normalized mean."""
    if factor < 1:
        raise ValueError(f"Late pooling factor must be >= 1, got {factor}")
    groups = [m.values[start:start + factor] for start in range(0, m.rows, factor)]
    pooled = [
        _normalize(group.sum(axis=0) / group.shape[0], f"group {i} of {m.id!r}")
        for i, group in enumerate(groups)
    ]
    return TokenMatrix(id=m.id, values=np.vstack(pooled), normalized=True)


def project(m: TokenMatrix, w) -> TokenMatrix:
    """Right-multiply every row by `w` (dim x out_dim) and renormalize."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] < 1:
        raise ValueError(f"Projection must be a 2-D matrix with at least one column, got shape {w.shape}")
    if w.shape[0] != m.dim:
        raise ValueError(f"Projection has {w.shape[0]} rows but matrix dim is {m.dim}")
    projected = _normalize_rows(m.values @ w, f"projected token of {m.id!r}")
    return TokenMatrix(id=m.id, values=projected, normalized=True)


def binary_quantize(m: TokenMatrix) -> BinaryMatrix:
    """Sign quantization: bit is 1 where the value is >= 0."""
    signs = (m.values >= 0).astype(np.uint8)
    width = words_per_row(m.dim) * WORD_BITS
    padded = np.zeros((m.rows, width), dtype=np.uint8)
    padded[:, :m.dim] = signs
    packed = np.packbits(padded, axis=1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64)
    return BinaryMatrix(id=m.id, rows=m.rows, dim=m.dim, bits=words)


def _popcount(words: np.ndarray) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1).sum(axis=-1)


def hamming_similarity(a: BinaryRow, b: BinaryRow) -> float:
    """Fraction of agreeing bits between two quantized rows."""
    if a.dim != b.dim:
        raise ValueError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    distance = int(_popcount(np.bitwise_xor(a.words, b.words)))
    return (a.dim - distance) / a.dim


def hamming_similarity_matrix(query: BinaryMatrix, doc: BinaryMatrix) -> np.ndarray:
    """Pairwise hamming similarities between all query rows and doc rows."""
    if query.dim != doc.dim:
        raise ValueError(f"Dimension mismatch: query dim {query.dim} vs doc dim {doc.dim}")
    xor = np.bitwise_xor(query.bits[:, None, :], doc.bits[None, :, :])
    distances = _popcount(xor.reshape(query.rows, doc.rows, -1))
    return (query.dim - distances) / query.dim


def binary_maxsim_score(query: BinaryMatrix, doc: BinaryMatrix) -> float:
    """MaxSim over hamming similarities."""
    return math.fsum(hamming_similarity_matrix(query, doc).max(axis=1))
