"""Pure-Python kernels. Semantics and summation order match ``_ckernels.pyx``."""

from collections import Counter
from math import sqrt

BACKEND = "python"


def clipped_matches(cand, ref, n):
    """Number of candidate n-grams matched in ``ref``, clipped by reference counts."""
    if n <= 0 or len(cand) < n or len(ref) < n:
        return 0
    c = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
    r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
    return sum(min(k, r[g]) for g, k in c.items())


def dot_norms(a, b):
    dot = na = nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    return dot, na, nb


def cosine(a, b):
    dot, na, nb = dot_norms(a, b)
    return dot / sqrt(na * nb)


def bm25_scores(post_ptr, post_doc, post_tf, doc_len, idf, query_terms, k1, b, avgdl):
    scores = [0.0] * len(doc_len)
    for t in query_terms:
        w = idf[t]
        for p in range(post_ptr[t], post_ptr[t + 1]):
            d = post_doc[p]
            tf = post_tf[p]
            scores[d] += w * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len[d] / avgdl))
    return scores
