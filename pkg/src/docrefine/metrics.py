"""Text metrics: tokenization, sentence BLEU, cosine similarity and the change score."""

from __future__ import annotations

import hashlib
import math
import re
import unicodedata
from typing import Sequence

from docrefine import kernels
from docrefine.errors import DomainError
from docrefine.model import ToolDocumentation

MAX_NGRAM = 4
MOCK_EMBEDDING_DIM = 64

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split every punctuation character into its own token.

    >>> tokenize("id=12345")
    ['id', '=', '12345']
    """
    return _WORD_OR_PUNCT.findall(text.lower())


def _encode_pair(a: Sequence[str], b: Sequence[str]):
    vocab: dict[str, int] = {}
    ids_a = [vocab.setdefault(t, len(vocab)) for t in a]
    ids_b = [vocab.setdefault(t, len(vocab)) for t in b]
    return kernels.int_buffer(ids_a), kernels.int_buffer(ids_b)


def sentence_bleu(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Single-reference BLEU without smoothing.

    The n-gram order runs to ``min(4, len(candidate))``; any zero clipped
    precision gives 0. An empty candidate or reference scores 0.
    """
    if not candidate or not reference:
        return 0.0
    c, r = _encode_pair(candidate, reference)
    max_n = min(MAX_NGRAM, len(candidate))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = kernels.clipped_matches(c, r, n)
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / (len(candidate) - n + 1))
    if len(candidate) >= len(reference):
        bp = 1.0
    else:
        bp = math.exp(1.0 - len(reference) / len(candidate))
    return bp * math.exp(log_sum / max_n)


def _check_vectors(a: Sequence[float], b: Sequence[float]) -> None:
    if len(a) != len(b):
        raise DomainError(f"dimension mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise DomainError("empty embedding vector")


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    _check_vectors(a, b)
    dot, na, nb = kernels.dot_norms(kernels.float_buffer(a), kernels.float_buffer(b))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero vector is undefined")
    sim = dot / math.sqrt(na * nb)
    return max(-1.0, min(1.0, sim))


def max_history_similarity(candidate: Sequence[float], history: Sequence[Sequence[float]]) -> float:
    """Largest cosine between ``candidate`` and any history vector; -1 for an empty history."""
    best = -1.0
    for h in history:
        best = max(best, cosine_similarity(candidate, h))
    return best


def combine_change(similarity: float, bleu: float) -> float:
    return (similarity + bleu) / 2


def change_score(
    doc_curr: ToolDocumentation,
    doc_prev: ToolDocumentation,
    emb_curr: Sequence[float],
    emb_prev: Sequence[float],
) -> float:
    """Mean of embedding cosine and BLEU(current, previous).

    Both terms are taken over ``change_text()``; the embeddings must be of
    those texts.
    """
    sim = cosine_similarity(emb_curr, emb_prev)
    bleu = sentence_bleu(tokenize(doc_curr.change_text()), tokenize(doc_prev.change_text()))
    # cosine may be negative for provider vectors; the score is defined on [0, 1]
    return max(0.0, combine_change(sim, bleu))


def should_terminate(delta: float, tau: float) -> bool:
    return delta > tau


def _bucket(token: str, seed: int, dim: int) -> int:
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hashed_bow_embedding(text: str, seed: int = 0, dim: int = MOCK_EMBEDDING_DIM) -> list[float]:
    """Deterministic bag-of-words vector: token counts hashed into ``dim`` buckets."""
    vec = [0.0] * dim
    for tok in tokenize(unicodedata.normalize("NFC", text)):
        vec[_bucket(tok, seed, dim)] += 1.0
    return vec


def bucket_of(token: str, seed: int = 0, dim: int = MOCK_EMBEDDING_DIM) -> int:
    return _bucket(token, seed, dim)
