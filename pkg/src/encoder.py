"""Deterministic hash-based token embedder.

Every whitespace token is embedded independently:

    h     = mix64(fnv1a64(token_utf8_bytes, seed))
    state = h
    for j in range(dim):
        state = (state + GOLDEN_GAMMA) mod 2**64
        z     = mix64(state)
        x[j]  = (z >> 11) * 2**-53 * 2 - 1        # uniform in [-1, 1)
    row = x / ||x||

The exact reference pseudocode is reproduced in README.md.
"""

import logging
from functools import lru_cache
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from src.config import EncoderConfig
from src.scoring import TokenMatrix, PooledVector, Pooling, pool

logger = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MULT_1 = 0xBF58476D1CE4E5B9
MIX_MULT_2 = 0x94D049BB133111EB
IMAGE_SEED_SALT = 0x5DEECE66DA5A5A5A


def fnv1a64(data: bytes, seed: int) -> int:
    """FNV-1a over `data`, with the offset basis salted by `seed`."""
    h = (FNV_OFFSET ^ seed) & MASK64
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z = ((z ^ (z >> 30)) * MIX_MULT_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MULT_2) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int, count: int) -> List[int]:
    """`count` successive SplitMix64 outputs starting from `state`."""
    out = []
    for _ in range(count):
        state = (state + GOLDEN_GAMMA) & MASK64
        out.append(mix64(state))
    return out


@lru_cache(maxsize=65536)
def _token_embedding(token: str, seed: int, dim: int) -> np.ndarray:
    seed_state = mix64(fnv1a64(token.encode("utf-8"), seed))
    draws = splitmix64(seed_state, dim)
    raw = np.array([(z >> 11) * 2.0 ** -53 * 2.0 - 1.0 for z in draws], dtype=np.float64)
    row = raw / np.linalg.norm(raw)
    row.setflags(write=False)
    return row


def token_embedding(token: str, cfg: EncoderConfig) -> np.ndarray:
    """Unit-norm embedding of a single token."""
    return _token_embedding(token, cfg.seed, cfg.dim)


def tokenize(text: str, max_tokens: int) -> List[str]:
    return text.split()[:max_tokens]


def encode_text(text: str, cfg: EncoderConfig, id: str = "") -> TokenMatrix:
    """Embed each whitespace token of `text`."""
    tokens = tokenize(text, cfg.max_tokens)
    if not tokens:
        raise ValueError(f"Empty token stream for {id!r}")
    rows = np.vstack([token_embedding(token, cfg) for token in tokens])
    return TokenMatrix(id=id, values=rows, normalized=True)


def encode_pooled(text: str, cfg: EncoderConfig, pooling: Pooling = Pooling.MEAN, id: str = "") -> PooledVector:
    """Embed `text` and reduce it to one vector."""
    return pool(encode_text(text, cfg, id=id), pooling)


def image_config(cfg: EncoderConfig) -> EncoderConfig:
    """Encoder config with a disjoint seed, standing in for a visual modality."""
    return EncoderConfig(dim=cfg.dim, seed=cfg.seed ^ IMAGE_SEED_SALT, max_tokens=cfg.max_tokens)


def image_view(text: str, cfg: EncoderConfig, id: str = "") -> TokenMatrix:
    """Page-image representation: text tokens plus the same words seen through the image seed.

    Each half is capped at `max_tokens`, so the result has up to 2 * max_tokens rows.
    """
    return TokenMatrix.stack(id, [encode_text(text, cfg, id=id), encode_text(text, image_config(cfg), id=id)])


def read_text_corpus(lines: Iterable[str]) -> Iterator[Tuple[str, str]]:
    """Parse `id<TAB>text` lines, skipping blanks."""
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"Corpus line {line_no} is not of the form id<TAB>text")
        doc_id, text = line.split("\t", 1)
        yield doc_id, text


def encode_corpus(lines: Iterable[str], cfg: EncoderConfig, pooling: Optional[Pooling] = None):
    """Encode a text corpus into token matrices, or pooled vectors when `pooling` is given."""
    count = 0
    for doc_id, text in read_text_corpus(lines):
        if pooling is None:
            yield encode_text(text, cfg, id=doc_id)
        else:
            yield encode_pooled(text, cfg, Pooling(pooling), id=doc_id)
        count += 1
    logger.info(f"Encoded {count} documents (dim={cfg.dim}, seed={cfg.seed})")
