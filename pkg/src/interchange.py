"""Line-oriented JSON record formats: embeddings, training pairs."""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, TextIO

import jsonschema

from src.scoring import TokenMatrix, PooledVector, Representation

logger = logging.getLogger(__name__)

TOKEN_RECORD_SCHEMA = {
    "type": "object",
    "required": ["id", "tokens"],
    "properties": {
        "id": {"type": "string"},
        "tokens": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        },
        "normalized": {"type": "boolean"},
    },
}

POOLED_RECORD_SCHEMA = {
    "type": "object",
    "required": ["id", "vector"],
    "properties": {
        "id": {"type": "string"},
        "vector": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "pooling": {"enum": ["mean", "last_token"]},
    },
}

EMBEDDING_RECORD_SCHEMA = {"oneOf": [TOKEN_RECORD_SCHEMA, POOLED_RECORD_SCHEMA]}

TRAINING_PAIR_SCHEMA = {
    "type": "object",
    "required": ["query", "positive_id"],
    "properties": {
        "query": {"type": "string", "minLength": 1},
        "positive_id": {"type": "string"},
        "negative_ids": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass
class TrainingPair:
    """One training pair record."""
    query: str
    positive_id: str
    negative_ids: List[str] = field(default_factory=list)


def validate_record(record: Any, schema: Dict[str, Any], line_no: int) -> None:
    try:
        jsonschema.validate(record, schema)
    except jsonschema.ValidationError as e:
        raise ValueError(f"Line {line_no}: invalid record: {e.message}") from e


def parse_json_lines(lines: Iterable[str], schema: Dict[str, Any]) -> Iterator[Dict[str, Any]]:
    """Parse and validate one JSON object per non-blank line."""
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"Line {line_no}: malformed JSON: {e.msg}") from e
        validate_record(record, schema, line_no)
        yield record


def record_to_representation(record: Dict[str, Any]) -> Representation:
    if "tokens" in record:
        return TokenMatrix(
            id=record["id"],
            values=record["tokens"],
            normalized=record.get("normalized", False),
        )
    return PooledVector(id=record["id"], values=record["vector"], pooling=record.get("pooling", "mean"))


def representation_to_record(rep: Representation) -> Dict[str, Any]:
    if isinstance(rep, TokenMatrix):
        return {"id": rep.id, "tokens": rep.values.tolist(), "normalized": rep.normalized}
    return {"id": rep.id, "vector": rep.values.tolist(), "pooling": rep.pooling.value}


def read_embeddings(lines: Iterable[str]) -> Iterator[Representation]:
    """Read embedding interchange records."""
    for record in parse_json_lines(lines, EMBEDDING_RECORD_SCHEMA):
        yield record_to_representation(record)


def dumps_record(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_embeddings(reps: Iterable[Representation], out: TextIO) -> int:
    """Write embedding interchange records; returns the record count."""
    count = 0
    for rep in reps:
        out.write(dumps_record(representation_to_record(rep)) + "\n")
        count += 1
    return count


def read_training_pairs(lines: Iterable[str]) -> List[TrainingPair]:
    pairs = [
        TrainingPair(
            query=record["query"],
            positive_id=record["positive_id"],
            negative_ids=list(record.get("negative_ids", [])),
        )
        for record in parse_json_lines(lines, TRAINING_PAIR_SCHEMA)
    ]
    logger.info(f"Loaded {len(pairs)} training pairs")
    return pairs


def load_embedding_file(path: str) -> List[Representation]:
    with open(path, "r", encoding="utf-8") as f:
        return list(read_embeddings(f))


def lookup(reps: Iterable[Representation], ids: Optional[Iterable[str]] = None) -> Dict[str, Representation]:
    """Index representations by id, optionally restricted to `ids`."""
    table = {rep.id: rep for rep in reps}
    if ids is None:
        return table
    missing = [i for i in ids if i not in table]
    if missing:
        raise ValueError(f"Unknown document ids: {', '.join(missing[:5])}")
    return {i: table[i] for i in ids}
