"""Embedding storage estimates and an affine reranker latency model."""

import json
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence

import jsonschema
import numpy as np

logger = logging.getLogger(__name__)

GIB = 2 ** 30

BITS_PER_ELEMENT = {"fp32": 32, "fp16": 16, "int8": 8, "bit1": 1}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["sequence_length", "dim", "precision", "corpus_size"],
    "properties": {
        "label": {"type": "string"},
        "sequence_length": {"type": "number", "exclusiveMinimum": 0},
        "dim": {"type": "integer", "minimum": 1},
        "precision": {"enum": list(BITS_PER_ELEMENT)},
        "corpus_size": {"type": "integer", "minimum": 0},
        "rerank_depth": {"type": ["integer", "null"], "minimum": 1},
        "accuracy": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


@dataclass(frozen=True)
class CostScenario:
    """Shape of a deployed document representation."""
    sequence_length: float
    dim: int
    precision: str = "fp16"
    corpus_size: int = 1_000_000
    rerank_depth: Optional[int] = None
    label: str = ""
    accuracy: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.precision not in BITS_PER_ELEMENT:
            raise ValueError(f"Unknown precision {self.precision!r}")
        if self.sequence_length <= 0 or self.dim <= 0:
            raise ValueError("sequence_length and dim must be positive")
        if self.corpus_size < 0:
            raise ValueError("corpus_size must be >= 0")
        if self.rerank_depth is not None and self.rerank_depth < 1:
            raise ValueError("rerank_depth must be >= 1 when given")

    @property
    def bytes_per_element(self) -> float:
        return BITS_PER_ELEMENT[self.precision] / 8


@dataclass(frozen=True)
class StorageEstimate:
    elements_per_doc: float
    bytes: float

    @property
    def gib(self) -> float:
        return self.bytes / GIB

    @property
    def gb_display(self) -> str:
        return f"{self.gib:.1f} GB"

    def to_dict(self) -> Dict[str, Any]:
        return {"elements_per_doc": self.elements_per_doc, "bytes": self.bytes, "gib": round(self.gib, 1)}


def storage_estimate(s: CostScenario) -> StorageEstimate:
    """Bytes needed to store the whole corpus."""
    elements = s.sequence_length * s.dim
    total_bits = elements * BITS_PER_ELEMENT[s.precision] * s.corpus_size
    return StorageEstimate(elements_per_doc=elements, bytes=total_bits / 8)


@dataclass(frozen=True)
class WhatIfReport:
    before: CostScenario
    after: CostScenario
    before_bytes: float
    after_bytes: float

    @property
    def saved_bytes(self) -> float:
        return self.before_bytes - self.after_bytes

    @property
    def savings_percent(self) -> float:
        if self.before_bytes == 0:
            return 0.0
        return 100.0 * self.saved_bytes / self.before_bytes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "before": {"sequence_length": self.before.sequence_length, "dim": self.before.dim,
                       "precision": self.before.precision, "gib": round(self.before_bytes / GIB, 1)},
            "after": {"sequence_length": self.after.sequence_length, "dim": self.after.dim,
                      "precision": self.after.precision, "gib": round(self.after_bytes / GIB, 1)},
            "saved_gib": round(self.saved_bytes / GIB, 1),
            "savings_percent": round(self.savings_percent, 1),
        }


def compression_whatif(s: CostScenario, projection_dim: Optional[int] = None, late_pool_factor: int = 1,
                       precision: Optional[str] = None, sequence_length: Optional[float] = None) -> WhatIfReport:
    """Storage before and after projection, late pooling and re-quantization.

    `sequence_length` replaces the pooled length outright, e.g. for a lower tiling resolution.
    """
    projection_dim = s.dim if projection_dim is None else projection_dim
    if projection_dim > s.dim or projection_dim < 1:
        raise ValueError(f"projection_dim must be in [1, {s.dim}], got {projection_dim}")
    if late_pool_factor < 1:
        raise ValueError(f"late_pool_factor must be >= 1, got {late_pool_factor}")
    new_length = sequence_length if sequence_length is not None else math.ceil(s.sequence_length / late_pool_factor)
    after = replace(s, sequence_length=new_length, dim=projection_dim, precision=precision or s.precision)
    return WhatIfReport(before=s, after=after, before_bytes=storage_estimate(s).bytes,
                        after_bytes=storage_estimate(after).bytes)


def binary_savings(s: CostScenario) -> WhatIfReport:
    return compression_whatif(s, precision="bit1")


@dataclass(frozen=True)
class LatencyModel:
    """latency_ms = base_ms + per_candidate_ms * candidates"""
    base_ms: float
    per_candidate_ms: float

    def predict(self, candidates: float) -> float:
        return self.base_ms + self.per_candidate_ms * candidates

    def to_dict(self) -> Dict[str, float]:
        return {"base_ms": self.base_ms, "per_candidate_ms": self.per_candidate_ms}


def fit_latency_model(points: Sequence[Sequence[float]]) -> LatencyModel:
    """Least-squares affine fit of (candidates, ms) observations."""
    points = [(float(x), float(y)) for x, y in points]
    xs = np.array([x for x, _ in points])
    ys = np.array([y for _, y in points])
    if len(set(xs.tolist())) < 2:
        raise ValueError("Latency fit needs at least two distinct candidate counts")
    design = np.column_stack([np.ones_like(xs), xs])
    (base, slope), *_ = np.linalg.lstsq(design, ys, rcond=None)
    if slope <= 0:
        raise ValueError(f"Fitted per-candidate latency is not positive: {slope}")
    logger.debug(f"Latency fit: base={base:.3f} ms, per candidate={slope:.3f} ms")
    return LatencyModel(base_ms=float(base), per_candidate_ms=float(slope))


TRADEOFF_COLUMNS = ("label", "sequence_length", "dim", "precision", "elements_per_doc",
                    "storage_gib", "rerank_depth", "added_latency_ms")


@dataclass
class TradeoffTable:
    rows: List[Dict[str, Any]]

    def sorted_by(self, column: str, descending: bool = False) -> "TradeoffTable":
        if column not in TRADEOFF_COLUMNS:
            raise ValueError(f"Unknown column {column!r}")
        return TradeoffTable(rows=sorted(self.rows, key=lambda r: (r[column] is None, r[column]), reverse=descending))

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": [dict(r) for r in self.rows]}

    def to_text(self) -> str:
        extra = sorted({name for r in self.rows for name in r.get("accuracy", {})})
        columns = list(TRADEOFF_COLUMNS) + extra
        cells = [[_cell(r.get(c, r.get("accuracy", {}).get(c))) for c in columns] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        return "\n".join(lines)


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.1f}" if value >= 10 or value == int(value) else f"{value:.4f}"
    return str(value)


def pipeline_tradeoff_report(scenarios: Sequence[CostScenario], latency: LatencyModel) -> TradeoffTable:
    """Storage and predicted reranker latency for each scenario."""
    if not scenarios:
        raise ValueError("Need at least one scenario")
    rows = []
    for s in scenarios:
        estimate = storage_estimate(s)
        rows.append({
            "label": s.label,
            "sequence_length": s.sequence_length,
            "dim": s.dim,
            "precision": s.precision,
            "elements_per_doc": estimate.elements_per_doc,
            "storage_gib": round(estimate.gib, 1),
            "rerank_depth": s.rerank_depth,
            "added_latency_ms": 0.0 if s.rerank_depth is None else latency.predict(s.rerank_depth),
            "accuracy": dict(s.accuracy),
        })
    return TradeoffTable(rows=rows)


def read_scenarios(lines: Iterable[str]) -> List[CostScenario]:
    """One JSON scenario object per line."""
    scenarios = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            jsonschema.validate(record, SCENARIO_SCHEMA)
        except (json.JSONDecodeError, jsonschema.ValidationError) as e:
            raise ValueError(f"Scenario line {line_no}: {getattr(e, 'message', e)}") from e
        scenarios.append(CostScenario(**record))
    return scenarios


# Late-interaction and bi-encoder pipelines over 1M page images at fp16, with reranker latency observations.
REFERENCE_LATENCY_POINTS = ((10, 960), (25, 2368), (100, 9392))

REFERENCE_PIPELINES = (
    CostScenario(1802, 3072, label="multi-3072", accuracy={"ndcg5_v1": 0.9106, "ndcg5_v2": 0.6357}),
    CostScenario(1290, 512, label="multi-3072-proj512", accuracy={"ndcg5_v1": 0.9064, "ndcg5_v2": 0.6109}),
    CostScenario(751, 128, label="multi-128", accuracy={"ndcg5_v1": 0.8906, "ndcg5_v2": 0.5290}),
    CostScenario(1, 1536, label="single-1536", accuracy={"ndcg5_v1": 0.8510, "ndcg5_v2": 0.5590}),
    CostScenario(1, 2048, label="single-2048", accuracy={"ndcg5_v1": 0.8313, "ndcg5_v2": 0.5178}),
    CostScenario(1, 2048, rerank_depth=10, label="single-2048+rerank10",
                 accuracy={"ndcg5_v1": 0.8931, "ndcg5_v2": 0.6025}),
    CostScenario(1, 2048, rerank_depth=25, label="single-2048+rerank25",
                 accuracy={"ndcg5_v1": 0.9064, "ndcg5_v2": 0.6214}),
    CostScenario(1, 2048, rerank_depth=100, label="single-2048+rerank100",
                 accuracy={"ndcg5_v1": 0.9101, "ndcg5_v2": 0.6182}),
)
