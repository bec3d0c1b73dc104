"""nDCG@k evaluation over TREC-style qrels and run files."""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Sequence, TextIO, Tuple

from src.index_store import CorpusIndex, search_many
from src.scoring import Representation, SimilarityKind

logger = logging.getLogger(__name__)

GAINS = ("exponential", "linear")

Qrels = Dict[str, Dict[str, int]]


@dataclass
class RunFile:
    """Ranked (doc_id, score) lists per query plus a run tag."""
    rankings: Dict[str, List[Tuple[str, float]]]
    tag: str = "run"

    def __post_init__(self):
        for query_id, ranking in self.rankings.items():
            doc_ids = [doc_id for doc_id, _ in ranking]
            if len(set(doc_ids)) != len(doc_ids):
                raise ValueError(f"Duplicate document in run for query {query_id!r}")
            scores = [score for _, score in ranking]
            if any(later > earlier for earlier, later in zip(scores, scores[1:])):
                raise ValueError(f"Scores must be non-increasing for query {query_id!r}")


@dataclass
class NDCGResult:
    """Per-query and mean nDCG@k."""
    k: int
    per_query: Dict[str, float]
    excluded: List[str] = field(default_factory=list)
    gain: str = "exponential"

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return math.fsum(self.per_query.values()) / len(self.per_query)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": f"ndcg@{self.k}",
            "gain": self.gain,
            "mean": self.mean,
            "evaluated": len(self.per_query),
            "excluded": list(self.excluded),
            "per_query": dict(self.per_query),
        }


@dataclass
class EvaluationReport:
    """nDCG of one retrieval configuration plus the run it was computed from."""
    tag: str
    result: NDCGResult
    run: RunFile

    def to_dict(self) -> Dict[str, Any]:
        return {"tag": self.tag, **self.result.to_dict()}

    def to_text(self) -> str:
        lines = [f"{'query':<16}{'ndcg@' + str(self.result.k):>12}"]
        for query_id, value in self.result.per_query.items():
            lines.append(f"{query_id:<16}{value:>12.4f}")
        lines.append(f"{'mean':<16}{self.result.mean:>12.4f}")
        if self.result.excluded:
            lines.append(f"excluded (no relevant documents): {len(self.result.excluded)}")
        return "\n".join(lines)


def load_qrels(lines: Iterable[str]) -> Qrels:
    """Parse `query_id 0 doc_id grade` lines."""
    qrels: Qrels = {}
    for line_no, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ValueError(f"Qrels line {line_no}: expected 4 fields, got {len(parts)}")
        query_id, _, doc_id, grade = parts
        try:
            value = int(grade)
        except ValueError:
            raise ValueError(f"Qrels line {line_no}: grade {grade!r} is not an integer")
        if value < 0:
            raise ValueError(f"Qrels line {line_no}: negative grade {value}")
        qrels.setdefault(query_id, {})[doc_id] = value
    return qrels


def load_run(lines: Iterable[str]) -> RunFile:
    """Parse `query_id Q0 doc_id rank score tag` lines, ordering each query by rank."""
    ranked: Dict[str, List[Tuple[int, str, float]]] = {}
    tag = "run"
    for line_no, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise ValueError(f"Run line {line_no}: expected 6 fields, got {len(parts)}")
        query_id, _, doc_id, rank, score, tag = parts
        try:
            ranked.setdefault(query_id, []).append((int(rank), doc_id, float(score)))
        except ValueError:
            raise ValueError(f"Run line {line_no}: malformed rank or score")
    rankings = {
        query_id: [(doc_id, score) for _, doc_id, score in sorted(entries, key=lambda e: e[0])]
        for query_id, entries in ranked.items()
    }
    return RunFile(rankings=rankings, tag=tag)


def write_run(run: RunFile, out: TextIO) -> None:
    for query_id, ranking in run.rankings.items():
        for rank, (doc_id, score) in enumerate(ranking, start=1):
            out.write(f"{query_id} Q0 {doc_id} {rank} {score!r} {run.tag}\n")


def _gain(grade: int, gain: str) -> float:
    return float(2 ** grade - 1) if gain == "exponential" else float(grade)


def dcg(grades: Sequence[int], gain: str = "exponential") -> float:
    return math.fsum(_gain(g, gain) / math.log2(i + 1) for i, g in enumerate(grades, start=1))


def ndcg_at_k(qrels: Qrels, run: RunFile, k: int, gain: str = "exponential") -> NDCGResult:
    """nDCG@k for every run query; queries without relevant documents are excluded from the mean."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if gain not in GAINS:
        raise ValueError(f"Unknown gain function {gain!r}")
    per_query: Dict[str, float] = {}
    excluded: List[str] = []
    for query_id, ranking in run.rankings.items():
        if query_id not in qrels:
            raise ValueError(f"Run query {query_id!r} has no qrels")
        grades = qrels[query_id]
        ideal = dcg(sorted(grades.values(), reverse=True)[:k], gain)
        if ideal == 0.0:
            excluded.append(query_id)
            continue
        actual = dcg([grades.get(doc_id, 0) for doc_id, _ in ranking[:k]], gain)
        per_query[query_id] = actual / ideal
    if excluded:
        logger.warning(f"{len(excluded)} queries have no relevant documents and are excluded from the mean")
    return NDCGResult(k=k, per_query=per_query, excluded=excluded, gain=gain)


def evaluate_pipeline(index: CorpusIndex, queries: Sequence[Representation], qrels: Qrels, k: int,
                      kind: SimilarityKind = SimilarityKind.DOT, tag: str = "", gain: str = "exponential",
                      workers: int = 1) -> EvaluationReport:
    """Search every query, materialize the run and score it."""
    tag = tag or f"{index.mode.value}-{index.precision.value}-{SimilarityKind(kind).value}"
    results = search_many(index, queries, k, kind, workers=workers)
    run = RunFile(
        rankings={q.id: [(r.doc_id, r.score) for r in hits] for q, hits in zip(queries, results)},
        tag=tag,
    )
    result = ndcg_at_k(qrels, run, k, gain)
    logger.info(f"{tag}: mean nDCG@{k} = {result.mean:.4f} over {len(result.per_query)} queries")
    return EvaluationReport(tag=tag, result=result, run=run)


def compare_reports(reports: Sequence[EvaluationReport]) -> Dict[str, Any]:
    """Side-by-side summary of several configurations evaluated on the same queries."""
    if not reports:
        raise ValueError("Nothing to compare")
    query_sets = {frozenset(r.run.rankings) for r in reports}
    if len(query_sets) != 1:
        raise ValueError("Reports were produced on different query sets")
    best = max(r.result.mean for r in reports)
    rows = [
        {
            "tag": r.tag,
            "mean": r.result.mean,
            "evaluated": len(r.result.per_query),
            "excluded": len(r.result.excluded),
            "gap_to_best": best - r.result.mean,
        }
        for r in reports
    ]
    return {"k": reports[0].result.k, "rows": rows}


def comparison_text(comparison: Dict[str, Any]) -> str:
    header = f"{'configuration':<32}{'ndcg@' + str(comparison['k']):>10}{'queries':>9}{'gap':>9}"
    lines = [header]
    for row in comparison["rows"]:
        lines.append(f"{row['tag']:<32}{row['mean']:>10.4f}{row['evaluated']:>9}{row['gap_to_best']:>9.4f}")
    return "\n".join(lines)
