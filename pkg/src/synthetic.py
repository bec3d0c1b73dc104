"""Deterministic synthetic corpora: token-distractor retrieval corpus and contrastive training pairs."""

import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

STOPWORDS = ("the", "of", "and", "to", "in", "a", "is", "for")


@dataclass(frozen=True)
class SyntheticPair:
    """Query text with its positive document."""
    query: str
    doc_id: str
    document: str
    modality: str = "text"


@dataclass(frozen=True)
class DistractorCorpus:
    """Documents, queries and binary qrels."""
    documents: List[Tuple[str, str]]
    queries: List[Tuple[str, str]]
    qrels: Dict[str, Dict[str, int]]


def distractor_corpus(groups: int = 20, docs_per_group: int = 10, group_tokens: int = 8,
                      filler_tokens: int = 32) -> DistractorCorpus:
    """Groups of documents sharing their topic tokens, told apart by one unique token.

    Each query holds the unique token of its target document plus two of the
    group's shared tokens. Every document also carries `filler_tokens` private
    tokens no query mentions: they swamp the unique token in a mean-pooled
    vector, while token-level matching still finds it exactly.
    """
    documents, queries, qrels = [], [], {}
    for index in range(groups * docs_per_group):
        group = index // docs_per_group
        shared = [f"g{group:02d}t{j}" for j in range(group_tokens)]
        unique = f"u{index:03d}"
        fillers = [f"f{index:03d}n{j:02d}" for j in range(filler_tokens)]
        middle = group_tokens // 2
        doc_id = f"doc{index:03d}"
        query_id = f"q{index:03d}"
        documents.append((doc_id, " ".join(shared[:middle] + [unique] + shared[middle:] + fillers)))
        queries.append((query_id, " ".join([unique] + shared[:2])))
        qrels[query_id] = {doc_id: 1}
    return DistractorCorpus(documents=documents, queries=queries, qrels=qrels)


def write_distractor_corpus(corpus: DistractorCorpus, directory: str) -> Dict[str, str]:
    """Write corpus/query TSVs and a TREC qrels file; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "corpus": os.path.join(directory, "distractor_corpus.tsv"),
        "queries": os.path.join(directory, "distractor_queries.tsv"),
        "qrels": os.path.join(directory, "distractor_qrels.txt"),
    }
    with open(paths["corpus"], "w", encoding="utf-8") as f:
        for doc_id, text in corpus.documents:
            f.write(f"{doc_id}\t{text}\n")
    with open(paths["queries"], "w", encoding="utf-8") as f:
        for query_id, text in corpus.queries:
            f.write(f"{query_id}\t{text}\n")
    with open(paths["qrels"], "w", encoding="utf-8") as f:
        for query_id, grades in corpus.qrels.items():
            for doc_id, grade in grades.items():
                f.write(f"{query_id} 0 {doc_id} {grade}\n")
    logger.info(f"Wrote {len(corpus.documents)} documents and {len(corpus.queries)} queries to {directory}")
    return paths


def synthetic_training_pairs(n: int, seed: int, modality: str = "text", prefix: str = "d",
                             vocab_size: int = 400, content_tokens: int = 6, query_content: int = 2,
                             stopwords_per_text: int = 6) -> List[SyntheticPair]:
    """Pairs whose texts mix topical terms with frequent stopwords.

    modality="mixed" renders every second document as an image.
    """
    if modality not in ("text", "mixed"):
        raise ValueError(f"Unknown modality {modality!r}")
    if n < 1:
        raise ValueError(f"Need at least one pair, got {n}")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        terms = [f"term{t:04d}" for t in rng.choice(vocab_size, size=content_tokens, replace=False)]
        doc_stops = [STOPWORDS[s] for s in rng.choice(len(STOPWORDS), size=stopwords_per_text, replace=False)]
        query_stops = [STOPWORDS[s] for s in rng.choice(len(STOPWORDS), size=stopwords_per_text, replace=False)]
        document = []
        for j in range(max(content_tokens, stopwords_per_text)):
            document += terms[j:j + 1] + doc_stops[j:j + 1]
        query = terms[:query_content] + query_stops
        kind = "image" if modality == "mixed" and i % 2 == 1 else "text"
        pairs.append(SyntheticPair(
            query=" ".join(query),
            doc_id=f"{prefix}{i:04d}",
            document=" ".join(document),
            modality=kind,
        ))
    return pairs
