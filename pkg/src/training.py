"""InfoNCE objective, analytic gradients for a linear head, hard-negative mining and the two-stage demo."""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import ContrastiveConfig, EncoderConfig
from src.encoder import encode_pooled, encode_text, image_view
from src.scoring import (
    PooledVector,
    Representation,
    SimilarityKind,
    TokenMatrix,
    maxsim_score,
    mean_pool,
    similarity,
)
from src.synthetic import SyntheticPair

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the demo loss stops being finite."""

    def __init__(self, stage: str, epoch: int, loss: float):
        self.stage = stage
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged in {stage} at epoch {epoch}: loss={loss}")


@dataclass(frozen=True)
class TrainingBatch:
    """A query, its positive document and the negatives feeding the contrastive loss."""
    query: Representation
    positive: Representation
    negatives: Tuple[Representation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "negatives", tuple(self.negatives))
        members = self.members()
        kinds = {type(m) for m in members}
        if len(kinds) != 1:
            raise ValueError("All batch members must share one representation kind")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise ValueError(f"All batch members must share one dimension, got {sorted(dims)}")
        if any(n.id == self.positive.id for n in self.negatives):
            raise ValueError(f"Negatives must not contain the positive document {self.positive.id!r}")

    def members(self) -> List[Representation]:
        return [self.query, self.positive, *self.negatives]


@dataclass
class LinearHead:
    """Trainable dim x out_dim projection applied before similarity."""
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ValueError(f"Head weights must be a non-empty 2-D matrix, got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Head weights must be finite")

    @classmethod
    def random(cls, dim: int, out_dim: int, seed: int) -> "LinearHead":
        rng = np.random.default_rng(seed)
        return cls(weights=rng.standard_normal((dim, out_dim)) / math.sqrt(dim))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "LinearHead":
        return LinearHead(weights=self.weights.copy())

    def apply(self, vector: PooledVector) -> PooledVector:
        """Project a pooled vector and renormalize it."""
        if vector.dim != self.dim:
            raise ValueError(f"Head expects dim {self.dim}, got {vector.dim}")
        projected = vector.values @ self.weights
        norm = np.linalg.norm(projected)
        if norm == 0.0:
            raise ValueError(f"Zero-norm projection of {vector.id!r}")
        return PooledVector(id=vector.id, values=projected / norm, pooling=vector.pooling)

    def apply_batch(self, batch: TrainingBatch) -> TrainingBatch:
        return TrainingBatch(
            query=self.apply(batch.query),
            positive=self.apply(batch.positive),
            negatives=tuple(self.apply(n) for n in batch.negatives),
        )


def pair_score(a: Representation, b: Representation, kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Similarity for pooled vectors, MaxSim for token matrices."""
    if isinstance(a, TokenMatrix) and isinstance(b, TokenMatrix):
        return maxsim_score(a, b, kind)
    if isinstance(a, PooledVector) and isinstance(b, PooledVector):
        return similarity(a.values, b.values, kind)
    raise ValueError("Cannot score a token matrix against a pooled vector")


def batch_scores(batch: TrainingBatch, kind: SimilarityKind = SimilarityKind.DOT) -> np.ndarray:
    """Scores of the positive (index 0) and each negative against the query."""
    return np.array([pair_score(batch.query, d, kind) for d in [batch.positive, *batch.negatives]])


def contrastive_loss_from_scores(scores: np.ndarray, tau: float) -> float:
    """Cross-entropy of the positive (index 0) under a softmax over scores / tau."""
    logits = np.asarray(scores, dtype=np.float64) / tau
    top = logits.max()
    log_partition = top + math.log(math.fsum(np.exp(logits - top)))
    return max(0.0, log_partition - logits[0])


def softmax_residual(scores: np.ndarray, tau: float) -> np.ndarray:
    """Gradient of the loss with respect to the logits scores / tau."""
    logits = np.asarray(scores, dtype=np.float64) / tau
    weights = np.exp(logits - logits.max())
    residual = weights / weights.sum()
    residual[0] -= 1.0
    return residual


def info_nce_loss(batch: TrainingBatch, cfg: ContrastiveConfig, kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Contrastive loss of the positive against the batch negatives."""
    return contrastive_loss_from_scores(batch_scores(batch, kind), cfg.tau)


def head_loss(batch: TrainingBatch, head: LinearHead, cfg: ContrastiveConfig,
              kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Loss after projecting every batch member through `head`."""
    return info_nce_loss(head.apply_batch(batch), cfg, kind)


def info_nce_gradient(batch: TrainingBatch, head: LinearHead, cfg: ContrastiveConfig,
                      kind: SimilarityKind = SimilarityKind.DOT) -> np.ndarray:
    """Analytic d(loss)/d(head weights) through projection, normalization and similarity."""
    members = batch.members()
    if not all(isinstance(m, PooledVector) for m in members):
        raise ValueError("Head gradients are defined for pooled vectors only")
    x = np.vstack([m.values for m in members])
    if x.shape[1] != head.dim:
        raise ValueError(f"Head expects dim {head.dim}, got {x.shape[1]}")
    u = x @ head.weights
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0.0):
        bad = members[int(np.flatnonzero(norms == 0.0)[0])].id
        raise ValueError(f"Zero-norm projection of {bad!r}")
    p = u / norms[:, None]

    # Row 0 is the query; rows 1.. are the positive then negatives. On unit vectors dot == cosine.
    scores = p[1:] @ p[0]
    d_scores = softmax_residual(scores, cfg.tau) / cfg.tau

    d_p = np.zeros_like(p)
    d_p[0] = d_scores @ p[1:]
    d_p[1:] = d_scores[:, None] * p[0]

    radial = np.sum(d_p * p, axis=1)
    d_u = (d_p - radial[:, None] * p) / norms[:, None]
    return x.T @ d_u


@dataclass(frozen=True)
class MinedNegative:
    """A selected hard negative and its similarity to the query."""
    id: str
    score: float
    representation: Optional[Representation] = None


def select_hard_negatives(ids: Sequence[str], scores: Sequence[float], positive_score: float,
                          cfg: ContrastiveConfig) -> List[Tuple[str, float]]:
    """Top-K candidates scoring strictly below threshold x positive score; ties by ascending id."""
    if cfg.k_negatives == 0:
        return []
    threshold = cfg.percentage_threshold * positive_score
    eligible = [(doc_id, float(score)) for doc_id, score in zip(ids, scores) if score < threshold]
    eligible.sort(key=lambda item: (-item[1], item[0]))
    return eligible[:cfg.k_negatives]


def mine_hard_negatives(query: Representation, positive: Representation, candidates: Sequence[Representation],
                        cfg: ContrastiveConfig, kind: SimilarityKind = SimilarityKind.DOT) -> List[MinedNegative]:
    """Hardest candidates below the percentage-to-positive threshold."""
    pool = [c for c in candidates if c.id != positive.id]
    if not pool or cfg.k_negatives == 0:
        return []
    positive_score = pair_score(query, positive, kind)
    scores = [pair_score(query, c, kind) for c in pool]
    by_id = {c.id: c for c in pool}
    selected = select_hard_negatives([c.id for c in pool], scores, positive_score, cfg)
    return [MinedNegative(id=doc_id, score=score, representation=by_id[doc_id]) for doc_id, score in selected]


@dataclass
class StageReport:
    """Per-epoch losses of one training stage."""
    name: str
    losses: List[float] = field(default_factory=list)
    final_loss: float = float("nan")

    @property
    def initial_loss(self) -> float:
        return self.losses[0] if self.losses else self.final_loss

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "epoch_losses": list(self.losses),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }


@dataclass
class TrainingReport:
    """Outcome of the two-stage demo."""
    stage1: StageReport
    stage2: StageReport
    head: LinearHead
    learning_rate: float
    rng_seed: int
    warm_start: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "learning_rate": self.learning_rate,
            "rng_seed": self.rng_seed,
            "warm_start": self.warm_start,
            "head_shape": list(self.head.weights.shape),
        }

    def log_lines(self) -> List[str]:
        lines = []
        for stage in (self.stage1, self.stage2):
            for epoch, loss in enumerate(stage.losses):
                lines.append(f"{stage.name} epoch={epoch} loss={loss:.6f}")
            lines.append(f"{stage.name} final loss={stage.final_loss:.6f}")
        return lines


def encode_pairs(pairs: Sequence[SyntheticPair], encoder_cfg: EncoderConfig
                 ) -> Tuple[List[PooledVector], List[PooledVector]]:
    """Mean-pooled query and document vectors; image documents use the image view."""
    queries = [encode_pooled(p.query, encoder_cfg, id=f"q:{p.doc_id}") for p in pairs]
    docs = []
    for p in pairs:
        if p.modality == "image":
            docs.append(mean_pool(image_view(p.document, encoder_cfg, id=p.doc_id)))
        else:
            docs.append(mean_pool(encode_text(p.document, encoder_cfg, id=p.doc_id)))
    return queries, docs


def _mine_epoch_batches(queries: List[PooledVector], docs: List[PooledVector], head: LinearHead,
                        cfg: ContrastiveConfig) -> List[TrainingBatch]:
    """Re-mine negatives for every pair with the current head, all documents as candidates."""
    q = np.vstack([head.apply(v).values for v in queries])
    d = np.vstack([head.apply(v).values for v in docs])
    scores = q @ d.T
    ids = [doc.id for doc in docs]
    by_id = {doc.id: doc for doc in docs}
    batches = []
    for i, (query, positive) in enumerate(zip(queries, docs)):
        others = [j for j in range(len(docs)) if ids[j] != positive.id]
        selected = select_hard_negatives(
            [ids[j] for j in others], scores[i, others], scores[i, i], cfg
        )
        batches.append(TrainingBatch(
            query=query,
            positive=positive,
            negatives=tuple(by_id[doc_id] for doc_id, _ in selected),
        ))
    return batches


def _mean_loss(batches: List[TrainingBatch], head: LinearHead, cfg: ContrastiveConfig,
               kind: SimilarityKind) -> float:
    return math.fsum(head_loss(b, head, cfg, kind) for b in batches) / len(batches)


def evaluate_stage_loss(pairs: Sequence[SyntheticPair], head: LinearHead, cfg: ContrastiveConfig,
                        encoder_cfg: EncoderConfig, kind: SimilarityKind = SimilarityKind.DOT) -> float:
    """Mean loss of `head` on `pairs` with freshly mined negatives."""
    queries, docs = encode_pairs(pairs, encoder_cfg)
    return _mean_loss(_mine_epoch_batches(queries, docs, head, cfg), head, cfg, kind)


def _run_stage(name: str, pairs: Sequence[SyntheticPair], head: LinearHead, cfg: ContrastiveConfig,
               encoder_cfg: EncoderConfig, epochs: int, learning_rate: float, batch_size: int,
               rng: np.random.Generator, kind: SimilarityKind) -> StageReport:
    queries, docs = encode_pairs(pairs, encoder_cfg)
    report = StageReport(name=name)
    for epoch in range(epochs + 1):
        batches = _mine_epoch_batches(queries, docs, head, cfg)
        loss = _mean_loss(batches, head, cfg, kind)
        if not math.isfinite(loss):
            logger.error(f"{name}: non-finite loss at epoch {epoch}")
            raise TrainingDivergedError(name, epoch, loss)
        if epoch == epochs:
            report.final_loss = loss
            break
        report.losses.append(loss)
        logger.info(f"{name} epoch {epoch}: mean loss {loss:.6f}")

        order = rng.permutation(len(batches))
        for start in range(0, len(order), batch_size):
            chunk = [batches[i] for i in order[start:start + batch_size]]
            grad = sum(info_nce_gradient(b, head, cfg, kind) for b in chunk) / len(chunk)
            head.weights = head.weights - learning_rate * grad
        if not np.all(np.isfinite(head.weights)):
            raise TrainingDivergedError(name, epoch, float("nan"))
    logger.info(f"{name} finished: loss {report.initial_loss:.6f} -> {report.final_loss:.6f}")
    return report


def train_demo(stage1_corpus: Sequence[SyntheticPair], stage2_corpus: Sequence[SyntheticPair], head: LinearHead,
               cfg: ContrastiveConfig, epochs: int, learning_rate: float, rng_seed: int,
               encoder_cfg: Optional[EncoderConfig] = None, batch_size: int = 10,
               kind: SimilarityKind = SimilarityKind.DOT, warm_start: bool = True,
               stage2_epochs: Optional[int] = None) -> TrainingReport:
    """Text-only stage, then a mixed text/image stage, with plain gradient descent on `head`."""
    if not stage1_corpus or not stage2_corpus:
        raise ValueError("Both training stages need a non-empty corpus")
    if learning_rate < 0:
        raise ValueError(f"Learning rate must be >= 0, got {learning_rate}")
    if epochs < 0:
        raise ValueError(f"Epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"Batch size must be >= 1, got {batch_size}")
    encoder_cfg = encoder_cfg or EncoderConfig()
    rng = np.random.default_rng(rng_seed)
    initial = head.copy()

    stage1 = _run_stage("stage1", stage1_corpus, head, cfg, encoder_cfg, epochs,
                        learning_rate, batch_size, rng, kind)
    if not warm_start:
        head.weights = initial.weights.copy()
    stage2 = _run_stage("stage2", stage2_corpus, head, cfg, encoder_cfg,
                        epochs if stage2_epochs is None else stage2_epochs,
                        learning_rate, batch_size, rng, kind)
    return TrainingReport(
        stage1=stage1,
        stage2=stage2,
        head=head,
        learning_rate=learning_rate,
        rng_seed=rng_seed,
        warm_start=warm_start,
    )
