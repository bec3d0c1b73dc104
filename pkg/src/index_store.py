"""Persistent corpus index with exact brute-force top-k search."""

import math
import struct
import logging
from enum import Enum
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from src.scoring import (
    BinaryMatrix,
    PooledVector,
    Representation,
    SimilarityKind,
    TokenMatrix,
    binary_maxsim_score,
    binary_quantize,
    similarity,
    similarity_matrix,
    words_per_row,
)

logger = logging.getLogger(__name__)

MAGIC = b"MVIX0001"
_HEADER = struct.Struct("<QQQQ")
_U64 = struct.Struct("<Q")
_TABLE_ENTRY = struct.Struct("<QQQ")


class IndexMode(str, Enum):
    MULTI_VECTOR = "multi_vector"
    POOLED = "pooled"
    BINARY = "binary"


class Precision(str, Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    INT8 = "int8"
    BIT1 = "bit1"


_MODE_CODES = {IndexMode.MULTI_VECTOR: 0, IndexMode.POOLED: 1, IndexMode.BINARY: 2}
_PRECISION_CODES = {Precision.FP32: 0, Precision.FP16: 1, Precision.INT8: 2, Precision.BIT1: 3}
_FLOAT_DTYPES = {Precision.FP32: np.dtype("<f4"), Precision.FP16: np.dtype("<f2")}


@dataclass(frozen=True)
class StoredEntry:
    """One document as stored at the index precision."""
    id: str
    rows: int
    payload: np.ndarray
    scales: Optional[np.ndarray] = None

    def to_bytes(self) -> bytes:
        if self.scales is not None:
            return self.scales.astype("<f4").tobytes() + self.payload.astype("i1").tobytes()
        return self.payload.tobytes()


@dataclass(frozen=True)
class SearchResult:
    """One ranked hit."""
    doc_id: str
    score: float
    rank: int

    def to_dict(self) -> Dict[str, Any]:
        return {"doc_id": self.doc_id, "score": self.score, "rank": self.rank}


@dataclass(frozen=True)
class IndexStats:
    """Size statistics of an index."""
    mode: str
    precision: str
    dim: int
    doc_count: int
    total_token_count: int
    mean_rows: float
    elements_per_doc: float
    byte_size: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _check_mode_precision(mode: IndexMode, precision: Precision) -> None:
    if (mode is IndexMode.BINARY) != (precision is Precision.BIT1):
        raise ValueError(f"Unsupported mode/precision combination: {mode.value}/{precision.value} "
                         "(bit1 precision requires binary mode and vice versa)")


def _quantize_int8(values: np.ndarray):
    with np.errstate(over="ignore"):
        scales = (np.abs(values).max(axis=1) / 127.0).astype("<f4")
    scales[scales == 0] = 1.0
    quantized = np.clip(np.rint(values / scales.astype(np.float64)[:, None]), -127, 127).astype("i1")
    return quantized, scales


def _require_finite(doc_id: str, stored: np.ndarray, precision: Precision) -> None:
    if not np.isfinite(stored).all():
        raise ValueError(f"Document {doc_id!r} has values outside the {precision.value} range")


def encode_entry(rep: Representation, precision: Precision) -> StoredEntry:
    """Quantize a representation at ingest."""
    matrix = rep.as_matrix() if isinstance(rep, PooledVector) else rep
    if precision is Precision.BIT1:
        return StoredEntry(id=rep.id, rows=matrix.rows, payload=binary_quantize(matrix).bits.astype("<u8"))
    if precision is Precision.INT8:
        quantized, scales = _quantize_int8(matrix.values)
        _require_finite(rep.id, scales, precision)
        return StoredEntry(id=rep.id, rows=matrix.rows, payload=quantized, scales=scales)
    with np.errstate(over="ignore"):
        payload = matrix.values.astype(_FLOAT_DTYPES[precision])
    _require_finite(rep.id, payload, precision)
    return StoredEntry(id=rep.id, rows=matrix.rows, payload=payload)


class CorpusIndex:
    """Immutable collection of stored document representations."""

    def __init__(self, mode: IndexMode, precision: Precision, dim: int, entries: Iterable[StoredEntry]):
        self.mode = IndexMode(mode)
        self.precision = Precision(precision)
        _check_mode_precision(self.mode, self.precision)
        self.dim = dim
        self.entries: Dict[str, StoredEntry] = {e.id: e for e in sorted(entries, key=lambda e: e.id)}
        self._decoded = {doc_id: self._decode(entry) for doc_id, entry in self.entries.items()}

    def _decode(self, entry: StoredEntry) -> Union[np.ndarray, BinaryMatrix]:
        if self.precision is Precision.BIT1:
            return BinaryMatrix(id=entry.id, rows=entry.rows, dim=self.dim, bits=entry.payload)
        if self.precision is Precision.INT8:
            return entry.payload.astype(np.float64) * entry.scales.astype(np.float64)[:, None]
        return entry.payload.astype(np.float64)

    @property
    def doc_count(self) -> int:
        return len(self.entries)

    @property
    def total_token_count(self) -> int:
        return sum(e.rows for e in self.entries.values())

    def decoded(self, doc_id: str) -> Union[np.ndarray, BinaryMatrix]:
        """Stored representation of `doc_id` as float64 values (or bits in binary mode)."""
        return self._decoded[doc_id]

    def to_bytes(self) -> bytes:
        """Serialize to the MVIX0001 layout."""
        header = MAGIC + _HEADER.pack(_MODE_CODES[self.mode], _PRECISION_CODES[self.precision],
                                      self.dim, self.doc_count)
        table, payload, offset = [], [], 0
        for entry in self.entries.values():
            blob = entry.to_bytes()
            id_bytes = entry.id.encode("utf-8")
            table.append(_U64.pack(len(id_bytes)) + id_bytes + _TABLE_ENTRY.pack(entry.rows, offset, len(blob)))
            payload.append(blob)
            offset += len(blob)
        return header + b"".join(table) + b"".join(payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CorpusIndex":
        """Parse the MVIX0001 layout."""
        if data[:len(MAGIC)] != MAGIC:
            raise ValueError("Not an MVIX0001 index (bad magic)")
        pos = len(MAGIC)
        try:
            mode_code, precision_code, dim, doc_count = _HEADER.unpack_from(data, pos)
            pos += _HEADER.size
            modes = {code: mode for mode, code in _MODE_CODES.items()}
            precisions = {code: precision for precision, code in _PRECISION_CODES.items()}
            if mode_code not in modes or precision_code not in precisions:
                raise ValueError(f"Unknown mode/precision codes {mode_code}/{precision_code}")
            mode, precision = modes[mode_code], precisions[precision_code]
            if doc_count == 0:
                raise ValueError("Index file holds no documents (empty corpus)")

            table = []
            for _ in range(doc_count):
                (id_len,) = _U64.unpack_from(data, pos)
                pos += _U64.size
                doc_id = data[pos:pos + id_len].decode("utf-8")
                pos += id_len
                rows, offset, nbytes = _TABLE_ENTRY.unpack_from(data, pos)
                pos += _TABLE_ENTRY.size
                table.append((doc_id, rows, offset, nbytes))
        except (struct.error, UnicodeDecodeError) as e:
            raise ValueError(f"Truncated or corrupt index header: {e}") from e

        entries = []
        for doc_id, rows, offset, nbytes in table:
            blob = data[pos + offset:pos + offset + nbytes]
            if len(blob) != nbytes:
                raise ValueError(f"Truncated payload for {doc_id!r}")
            entries.append(_decode_blob(doc_id, rows, dim, precision, blob))
        return cls(mode, precision, dim, entries)

    def save(self, path: str) -> int:
        data = self.to_bytes()
        with open(path, "wb") as f:
            f.write(data)
        logger.info(f"Saved {self.mode.value}/{self.precision.value} index with {self.doc_count} documents to {path}")
        return len(data)

    @classmethod
    def load(cls, path: str) -> "CorpusIndex":
        with open(path, "rb") as f:
            index = cls.from_bytes(f.read())
        logger.info(f"Loaded {index.mode.value}/{index.precision.value} index with {index.doc_count} documents")
        return index


def _decode_blob(doc_id: str, rows: int, dim: int, precision: Precision, blob: bytes) -> StoredEntry:
    if precision is Precision.BIT1:
        words = np.frombuffer(blob, dtype="<u8").reshape(rows, words_per_row(dim))
        return StoredEntry(id=doc_id, rows=rows, payload=words)
    if precision is Precision.INT8:
        scales = np.frombuffer(blob, dtype="<f4", count=rows)
        quantized = np.frombuffer(blob, dtype="i1", offset=4 * rows).reshape(rows, dim)
        return StoredEntry(id=doc_id, rows=rows, payload=quantized, scales=scales)
    values = np.frombuffer(blob, dtype=_FLOAT_DTYPES[precision]).reshape(rows, dim)
    return StoredEntry(id=doc_id, rows=rows, payload=values)


def build_index(records: Iterable[Representation], mode: IndexMode = IndexMode.MULTI_VECTOR,
                precision: Precision = Precision.FP32) -> CorpusIndex:
    """Ingest representations, quantizing them to `precision`."""
    mode, precision = IndexMode(mode), Precision(precision)
    _check_mode_precision(mode, precision)
    entries: List[StoredEntry] = []
    seen = set()
    dim = None
    for rep in records:
        if rep.id in seen:
            raise ValueError(f"Duplicate document id {rep.id!r}")
        if mode is IndexMode.POOLED and not isinstance(rep, PooledVector):
            raise ValueError(f"Pooled index requires pooled vectors, got token matrix {rep.id!r}")
        if dim is None:
            dim = rep.dim
        elif rep.dim != dim:
            raise ValueError(f"Inconsistent dimension for {rep.id!r}: {rep.dim} != {dim}")
        seen.add(rep.id)
        entries.append(encode_entry(rep, precision))
    if not entries:
        raise ValueError("Cannot build an index from an empty corpus")
    index = CorpusIndex(mode, precision, dim, entries)
    logger.info(f"Built {mode.value}/{precision.value} index: {index.doc_count} documents, "
                f"{index.total_token_count} token rows, dim {dim}")
    return index


def _score_all(index: CorpusIndex, query: Representation, kind: SimilarityKind) -> Dict[str, float]:
    if query.dim != index.dim:
        raise ValueError(f"Query dim {query.dim} does not match index dim {index.dim}")
    if index.mode is IndexMode.MULTI_VECTOR:
        if not isinstance(query, TokenMatrix):
            raise ValueError("Multi-vector index expects a token matrix query")
        return {
            doc_id: math.fsum(similarity_matrix(query.values, index.decoded(doc_id), kind).max(axis=1))
            for doc_id in index.entries
        }
    if index.mode is IndexMode.POOLED:
        if not isinstance(query, PooledVector):
            raise ValueError("Pooled index expects a pooled vector query")
        return {doc_id: similarity(query.values, index.decoded(doc_id)[0], kind) for doc_id in index.entries}
    matrix = query.as_matrix() if isinstance(query, PooledVector) else query
    bits = binary_quantize(matrix)
    return {doc_id: binary_maxsim_score(bits, index.decoded(doc_id)) for doc_id in index.entries}


def rank(scores: Dict[str, float], k: int) -> List[SearchResult]:
    """Top-k by descending score, ties broken by ascending id."""
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [SearchResult(doc_id=doc_id, score=score, rank=i) for i, (doc_id, score) in enumerate(ordered, start=1)]


def search(index: CorpusIndex, query: Representation, k: int,
           kind: SimilarityKind = SimilarityKind.DOT) -> List[SearchResult]:
    """Exact top-k search against every document."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return rank(_score_all(index, query, SimilarityKind(kind)), k)


def search_many(index: CorpusIndex, queries: Sequence[Representation], k: int,
                kind: SimilarityKind = SimilarityKind.DOT, workers: int = 1) -> List[List[SearchResult]]:
    """Independent searches, results in query order."""
    if workers <= 1:
        return [search(index, q, k, kind) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda q: search(index, q, k, kind), queries))


def index_stats(index: CorpusIndex) -> IndexStats:
    """Document count, sequence length, elements per document and serialized size."""
    mean_rows = index.total_token_count / index.doc_count
    return IndexStats(
        mode=index.mode.value,
        precision=index.precision.value,
        dim=index.dim,
        doc_count=index.doc_count,
        total_token_count=index.total_token_count,
        mean_rows=mean_rows,
        elements_per_doc=mean_rows * index.dim,
        byte_size=len(index.to_bytes()),
    )
