# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for n-gram matching, cosine and BM25 scoring."""

from libc.math cimport sqrt
from libc.stdlib cimport calloc, free

from array import array

BACKEND = "cython"


cdef inline bint _same(const long long[:] a, Py_ssize_t i, const long long[:] b, Py_ssize_t j, Py_ssize_t n) nogil:
    cdef Py_ssize_t k
    for k in range(n):
        if a[i + k] != b[j + k]:
            return False
    return True


def clipped_matches(const long long[:] cand, const long long[:] ref, Py_ssize_t n):
    cdef Py_ssize_t lc = cand.shape[0] - n + 1
    cdef Py_ssize_t lr = ref.shape[0] - n + 1
    cdef Py_ssize_t i, j
    cdef long matched = 0
    cdef char* used
    if n <= 0 or lc <= 0 or lr <= 0:
        return 0
    used = <char*>calloc(lr, 1)
    if used == NULL:
        raise MemoryError()
    with nogil:
        for i in range(lc):
            for j in range(lr):
                if not used[j] and _same(cand, i, ref, j, n):
                    used[j] = 1
                    matched += 1
                    break
    free(used)
    return matched


def dot_norms(const double[:] a, const double[:] b):
    cdef Py_ssize_t i, m = min(a.shape[0], b.shape[0])
    cdef double dot = 0.0, na = 0.0, nb = 0.0
    for i in range(m):
        dot += a[i] * b[i]
        na += a[i] * a[i]
        nb += b[i] * b[i]
    return dot, na, nb


def cosine(const double[:] a, const double[:] b):
    dot, na, nb = dot_norms(a, b)
    return dot / sqrt(na * nb)


def bm25_scores(const long long[:] post_ptr, const long long[:] post_doc, const double[:] post_tf,
                const double[:] doc_len, const double[:] idf, const long long[:] query_terms,
                double k1, double b, double avgdl):
    cdef Py_ssize_t n_docs = doc_len.shape[0]
    out = array("d", [0.0]) * n_docs
    cdef double[:] scores = out
    cdef Py_ssize_t q, p, d
    cdef long long t
    cdef double w, tf
    with nogil:
        for q in range(query_terms.shape[0]):
            t = query_terms[q]
            w = idf[t]
            for p in range(post_ptr[t], post_ptr[t + 1]):
                d = post_doc[p]
                tf = post_tf[p]
                scores[d] += w * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len[d] / avgdl))
    return out.tolist()
